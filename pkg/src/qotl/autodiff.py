"""Parameter-shift gradients of ground costs and of the transport loss.

Gates are ``exp(-i a sigma)`` (no factor 1/2), so any basis probability is a
trigonometric polynomial of frequency 2 in ``a`` and the exact derivative is

    dP/da = P(a + pi/4) - P(a - pi/4).

Angles are ``a = theta * z_eta``; the chain rule gives ``da/dtheta = z_eta``
and ``da/dz_k = theta`` for every slot reading ``z_k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import CircuitSpec, Ensemble, apply_circuit
from .cost import GroundCostKind, EXACT_LOCAL, _as_kind, cost_weights, squared_cost_matrix
from .qsim import SimulationError, Statevector, sample_counts
from .transport import TransportPlan

SHIFT = np.pi / 4
COST_FLOOR = 1e-8

_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class GradientVector:
    values: np.ndarray
    wrt: str
    shots: int | None = None
    evaluations: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite gradient")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def _flat_slots(spec: CircuitSpec, slots) -> np.ndarray:
    if slots is None:
        return np.arange(spec.n_params)
    slots = np.atleast_1d(np.asarray(slots, dtype=np.int64))
    if slots.size and (slots.min() < 0 or slots.max() >= spec.n_params):
        raise IndexError(f"parameter index out of range for {spec.n_params} parameters")
    return slots


def shift_differences(psis: np.ndarray, spec: CircuitSpec, angles: np.ndarray, weights: np.ndarray,
                      slots=None, shots: int | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """``F(a_s + pi/4) - F(a_s - pi/4)`` for ``F = sum_x w[x] P[x]``.

    ``psis`` has shape ``(S, 2**n)`` and ``angles`` ``(S, N_L, n)``; the result
    has shape ``(S, len(slots))``.  Each shifted evaluation draws its own
    ``shots`` measurements when ``shots`` is given.
    """
    slots = _flat_slots(spec, slots)
    s_count, dim = psis.shape
    out = np.empty((s_count, slots.size))
    per_slot = 2 * s_count * dim
    chunk = max(1, _CHUNK_ELEMENTS // per_slot)
    for k0 in range(0, slots.size, chunk):
        block = slots[k0:k0 + chunk]
        k = block.size
        shifted = np.broadcast_to(angles, (2, k) + angles.shape).copy()
        layer, qubit = np.divmod(block, spec.n)
        idx = np.arange(k)
        shifted[0, idx, :, layer, qubit] += SHIFT
        shifted[1, idx, :, layer, qubit] -= SHIFT
        states = np.broadcast_to(psis, (2, k, s_count, dim))
        probs = np.abs(apply_circuit(states, spec, shifted, inverse=True)) ** 2
        if shots is None:
            f = probs @ weights
        else:
            f = sample_counts(probs, shots, rng) @ weights / shots
        out[:, k0:k0 + k] = (f[0] - f[1]).T
    return out


def _latent_factors(spec: CircuitSpec, zs: np.ndarray) -> np.ndarray:
    """``z_eta`` for every slot, shape ``(S, N_L * n)``."""
    return spec.latent_with_bias(zs)[:, spec.eta.ravel()]


def _chain(spec: CircuitSpec, zs: np.ndarray, d_c2: np.ndarray, c: np.ndarray, wrt: str,
           slots: np.ndarray) -> np.ndarray:
    """Per-pair gradients of ``c`` from shift differences of ``c^2``."""
    safe = np.where(c > COST_FLOOR, c, 1.0)
    scale = np.where(c > COST_FLOOR, 1.0 / (2.0 * safe), 0.0)[:, None]
    if wrt == "theta":
        return d_c2 * _latent_factors(spec, zs)[:, slots] * scale
    if wrt == "z":
        theta = spec.theta.ravel()[slots]
        eta = spec.eta.ravel()[slots]
        per_slot = d_c2 * theta * scale
        out = np.zeros((d_c2.shape[0], spec.n_z))
        for k in range(1, spec.n_z + 1):
            out[:, k - 1] = per_slot[:, eta == k].sum(axis=1)
        return out
    raise ValueError(f"wrt must be 'theta' or 'z', got {wrt!r}")


def _pair_costs(psis, spec, angles, weights, shots, rng) -> np.ndarray:
    probs = np.abs(apply_circuit(psis, spec, angles, inverse=True)) ** 2
    if shots is None:
        c2 = probs @ weights
    else:
        c2 = sample_counts(probs, shots, rng) @ weights / shots
    return np.sqrt(np.clip(c2, 0.0, 1.0))


def shift_prob_grad(psi: Statevector, spec: CircuitSpec, z, k_qubit: int, param_index: int,
                    shots: int | None = None, rng: np.random.Generator | None = None) -> float:
    """``d p_k / d theta_s`` where ``p_k`` is the zero-probability of qubit ``k``."""
    if not 0 <= k_qubit < spec.n:
        raise IndexError(f"qubit {k_qubit} out of range")
    slots = _flat_slots(spec, [param_index])
    z = np.asarray(z, dtype=np.float64).reshape(1, spec.n_z)
    w = 1.0 - ((np.arange(1 << spec.n) >> k_qubit) & 1)
    d = shift_differences(psi.amps[None], spec, spec.angles(z), w.astype(np.float64), slots, shots, rng)
    return float(d[0, 0] * _latent_factors(spec, z)[0, slots[0]])


def local_cost_grad(psi: Statevector, spec: CircuitSpec, z, wrt: str = "theta",
                    kind=EXACT_LOCAL, rng: np.random.Generator | None = None,
                    slots=None) -> GradientVector:
    """Gradient of ``c(psi, U(z)|0>)``; zero where the cost itself is zero."""
    kind = _as_kind(kind)
    if psi.n != spec.n:
        raise SimulationError("dimension mismatch")
    slots = _flat_slots(spec, slots)
    z = np.asarray(z, dtype=np.float64).reshape(1, spec.n_z)
    w = cost_weights(kind.kind, spec.n)
    angles = spec.angles(z)
    psis = psi.amps[None]
    c = _pair_costs(psis, spec, angles, w, kind.shots, rng)
    d = shift_differences(psis, spec, angles, w, slots, kind.shots, rng)
    g = _chain(spec, z, d, c, wrt, slots)[0]
    return GradientVector(g, wrt, kind.shots, 2 * slots.size + 1)


def otl_grad(ensemble: Ensemble, spec: CircuitSpec, zs, plan: TransportPlan, wrt: str = "theta",
             kind=EXACT_LOCAL, rng: np.random.Generator | None = None, costs: np.ndarray | None = None,
             slots=None) -> GradientVector:
    """Fixed-plan gradient ``sum_{ij} pi_ij dc_ij``.

    ``costs`` (the matrix the plan was solved on) supplies the ``1/(2c)``
    factor; when omitted the supported costs are re-evaluated.
    """
    kind = _as_kind(kind)
    zs = np.asarray(zs, dtype=np.float64).reshape(-1, spec.n_z)
    if plan.m != len(ensemble) or plan.m_g != zs.shape[0]:
        raise ValueError("plan dimensions do not match the ensemble and latent batch")
    slots = _flat_slots(spec, slots)
    w = cost_weights(kind.kind, spec.n)
    psis = ensemble.matrix[plan.rows]
    pair_z = zs[plan.cols]
    angles = spec.angles(pair_z)
    if costs is None:
        c = _pair_costs(psis, spec, angles, w, kind.shots, rng)
    else:
        c = np.asarray(costs)[plan.rows, plan.cols]
    d = shift_differences(psis, spec, angles, w, slots, kind.shots, rng)
    per_pair = _chain(spec, pair_z, d, c, wrt, slots)
    values = plan.mass @ per_pair
    return GradientVector(values, wrt, kind.shots, len(plan) * (2 * slots.size + (costs is None)))


def otl_value_and_grad(ensemble: Ensemble, spec: CircuitSpec, zs, kind=EXACT_LOCAL,
                       rng: np.random.Generator | None = None, wrt: str = "theta", slots=None):
    """Solve the transport problem at ``theta`` and return ``(loss, grad, plan, costs)``."""
    from .transport import solve_ot_uniform, solve_ot_weighted

    kind = _as_kind(kind)
    c = np.sqrt(squared_cost_matrix(ensemble, spec, zs, kind, rng))
    if ensemble.is_uniform():
        loss, plan = solve_ot_uniform(c)
    else:
        loss, plan = solve_ot_weighted(c, ensemble.weights, np.full(c.shape[1], 1.0 / c.shape[1]))
    grad = otl_grad(ensemble, spec, zs, plan, wrt, kind, rng, costs=c, slots=slots)
    return loss, grad, plan, c
