"""Latent-variable circuit families and training-ensemble generators."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .qsim import (
    PAULI_AXES,
    Gate,
    SimulationError,
    Statevector,
    apply_diagonal,
    apply_gates,
    apply_permutation,
    cx_permutation,
    cz_phases,
    rotate,
)

ENTANGLERS = ("CZ_ladder", "CX_ladder")
FAMILIES = ("HEA", "ALA")


def default_layers(n: int, n_z: int) -> int:
    return 3 + n_z // n


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CircuitSpec:
    """Layered ansatz ``U(z, theta) = prod_l W_l V_l(z, theta_l)``.

    ``xi[l, q]`` indexes ``PAULI_AXES``; ``eta[l, q]`` selects the latent
    component multiplying ``theta[l, q]`` (0 is the constant bias ``z_0 = 1``).
    """

    n: int
    n_layers: int
    n_z: int
    xi: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    entangler: str = "CZ_ladder"
    family: str = "HEA"
    block_size: int | None = None

    def __post_init__(self):
        shape = (self.n_layers, self.n)
        xi = _frozen(self.xi, np.int64).reshape(shape)
        eta = _frozen(self.eta, np.int64).reshape(shape)
        theta = _frozen(self.theta, np.float64).reshape(shape)
        for name, arr in (("xi", xi), ("eta", eta), ("theta", theta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.n < 1 or self.n_layers < 0:
            raise ValueError("need n >= 1 and n_layers >= 0")
        if xi.size and (xi.min() < 0 or xi.max() > 2):
            raise ValueError("xi entries must index X, Y, Z")
        if eta.size and (eta.min() < 0 or eta.max() > self.n_z):
            raise ValueError(f"eta entries must lie in [0, {self.n_z}]")
        if self.entangler not in ENTANGLERS:
            raise ValueError(f"unknown entangler {self.entangler!r}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "ALA" and (self.block_size is None or self.block_size < 2):
            raise ValueError("ALA needs block_size >= 2")

    @property
    def n_params(self) -> int:
        return self.n_layers * self.n

    def with_theta(self, theta) -> "CircuitSpec":
        return replace(self, theta=np.asarray(theta, dtype=np.float64).reshape(self.n_layers, self.n))

    def structure_key(self) -> tuple:
        """Hashable view of the frozen structure (everything except theta)."""
        return (self.n, self.n_layers, self.n_z, self.entangler, self.family, self.block_size,
                self.xi.tobytes(), self.eta.tobytes())

    def __eq__(self, other):
        if not isinstance(other, CircuitSpec):
            return NotImplemented
        return self.structure_key() == other.structure_key() and np.array_equal(self.theta, other.theta)

    __hash__ = None

    # -- structure ----------------------------------------------------------

    def entangler_pairs(self, layer: int) -> list[tuple[int, int]]:
        n = self.n
        if self.family == "HEA" or self.block_size >= n:
            return [(q, q + 1) for q in range(n - 1)]
        b = self.block_size
        offset = (layer % 2) * (b // 2)
        pairs = []
        for start in range(offset, n, b):
            stop = min(start + b, n)
            pairs.extend((q, q + 1) for q in range(start, stop - 1))
        return pairs

    @cached_property
    def _layer_ops(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        ops = []
        for layer in range(self.n_layers):
            pairs = self.entangler_pairs(layer)
            if self.entangler == "CZ_ladder":
                d = cz_phases(pairs, self.n)
                ops.append(("diag", d, d))
            else:
                perm = cx_permutation(pairs, self.n)
                ops.append(("perm", perm, np.argsort(perm)))
        return ops

    # -- angles -------------------------------------------------------------

    def latent_with_bias(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.n_z:
            raise ValueError(f"latent vector must have {self.n_z} components, got {z.shape[-1]}")
        ones = np.ones(z.shape[:-1] + (1,))
        return np.concatenate([ones, z], axis=-1)

    def angles(self, z) -> np.ndarray:
        """Gate angles ``theta[l, q] * z[eta[l, q]]``, shape ``(..., N_L, n)``."""
        zb = self.latent_with_bias(z)
        return self.theta * zb[..., self.eta]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_layers": self.n_layers,
            "n_z": self.n_z,
            "family": self.family,
            "entangler": self.entangler,
            "block_size": self.block_size,
            "xi": [[PAULI_AXES[v] for v in row] for row in self.xi.tolist()],
            "eta": self.eta.tolist(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitSpec":
        n, n_layers = int(d["n"]), int(d["n_layers"])
        xi = [[PAULI_AXES.index(v) for v in row] for row in d["xi"]]
        return cls(
            n=n,
            n_layers=n_layers,
            n_z=int(d["n_z"]),
            xi=np.array(xi, dtype=np.int64).reshape(n_layers, n),
            eta=np.array(d["eta"], dtype=np.int64).reshape(n_layers, n),
            theta=np.array(d["theta"], dtype=np.float64).reshape(n_layers, n),
            entangler=d.get("entangler", "CZ_ladder"),
            family=d.get("family", "HEA"),
            block_size=d.get("block_size"),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CircuitSpec":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# constructors


def build_hea(n: int, n_layers: int | None, n_z: int, rng: np.random.Generator,
              entangler: str = "CZ_ladder") -> CircuitSpec:
    if n_layers is None:
        n_layers = default_layers(n, n_z)
    if n < 1 or n_layers < 1:
        raise ValueError("need n >= 1 and n_layers >= 1")
    xi = rng.integers(0, 3, size=(n_layers, n))
    eta = rng.integers(0, n_z + 1, size=(n_layers, n))
    return CircuitSpec(n, n_layers, n_z, xi, eta, np.zeros((n_layers, n)), entangler, "HEA")


def build_ala(n: int, n_layers: int | None, n_z: int, block_size: int,
              rng: np.random.Generator) -> CircuitSpec:
    if block_size < 2:
        raise ValueError("block_size must be >= 2")
    spec = build_hea(n, n_layers, n_z, rng)
    return replace(spec, family="ALA", block_size=block_size)


def init_theta(spec: CircuitSpec, rng: np.random.Generator,
               low: float = 0.0, high: float = 2 * np.pi) -> CircuitSpec:
    return spec.with_theta(rng.uniform(low, high, size=(spec.n_layers, spec.n)))


def random_spec(n: int, n_layers: int | None, n_z: int, rng: np.random.Generator) -> CircuitSpec:
    """HEA with random frozen structure and uniformly initialised theta."""
    return init_theta(build_hea(n, n_layers, n_z, rng), rng)


def sample_latents(m: int, n_z: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(m, n_z))


# --------------------------------------------------------------------------
# execution


def apply_circuit(states: np.ndarray, spec: CircuitSpec, angles: np.ndarray,
                  inverse: bool = False) -> np.ndarray:
    """Apply ``U`` (or ``U^dagger``) to a batch of states.

    ``angles[..., l, q]`` must broadcast against ``states.shape[:-1]`` once the
    two trailing axes are dropped.
    """
    n = spec.n
    angles = np.asarray(angles, dtype=np.float64)
    layers = range(spec.n_layers)
    if not inverse:
        for l in layers:
            for q in range(n):
                states = rotate(states, PAULI_AXES[spec.xi[l, q]], angles[..., l, q], q, n)
            kind, fwd, _ = spec._layer_ops[l]
            states = apply_diagonal(states, fwd) if kind == "diag" else apply_permutation(states, fwd)
    else:
        for l in reversed(layers):
            kind, _, inv = spec._layer_ops[l]
            states = apply_diagonal(states, inv) if kind == "diag" else apply_permutation(states, inv)
            for q in range(n):
                states = rotate(states, PAULI_AXES[spec.xi[l, q]], -angles[..., l, q], q, n)
    return states


def zero_states(shape: tuple, n: int) -> np.ndarray:
    out = np.zeros(tuple(shape) + (1 << n,), dtype=np.complex128)
    out[..., 0] = 1.0
    return out


def model_states(spec: CircuitSpec, zs) -> np.ndarray:
    """``U(z_j)|0>`` for every row of ``zs``; shape ``(M_g, 2**n)``."""
    angles = spec.angles(np.asarray(zs, dtype=np.float64).reshape(-1, spec.n_z))
    return apply_circuit(zero_states((angles.shape[0],), spec.n), spec, angles)


def circuit_gates(spec: CircuitSpec, z) -> list[Gate]:
    """The explicit gate sequence of ``U(z, theta)``."""
    angles = spec.angles(np.asarray(z, dtype=np.float64))
    gates = []
    for l in range(spec.n_layers):
        for q in range(spec.n):
            gates.append(Gate("R" + PAULI_AXES[spec.xi[l, q]], (q,), float(angles[l, q])))
        kind = "CZ" if spec.entangler == "CZ_ladder" else "CX"
        gates.extend(Gate(kind, p) for p in spec.entangler_pairs(l))
    return gates


def run_circuit(spec: CircuitSpec, z) -> Statevector:
    return apply_gates(Statevector.zero(spec.n), circuit_gates(spec, z))


# --------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True, eq=False)
class Ensemble:
    states: tuple[Statevector, ...]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise ValueError("ensemble must contain at least one state")
        if len({s.n for s in states}) != 1:
            raise ValueError("all states must share the qubit count")
        w = (np.full(len(states), 1.0 / len(states)) if self.weights is None
             else np.asarray(self.weights, dtype=np.float64))
        if w.shape != (len(states),) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("weights must be a probability vector over the states")
        w.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_matrix(cls, amps: np.ndarray, weights=None) -> "Ensemble":
        return cls(tuple(Statevector.from_amplitudes(a) for a in amps), weights)

    @property
    def n(self) -> int:
        return self.states[0].n

    def __len__(self) -> int:
        return len(self.states)

    @cached_property
    def matrix(self) -> np.ndarray:
        m = np.stack([s.amps for s in self.states])
        m.setflags(write=False)
        return m

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


def two_level_state(n: int, theta_t: float, phi_t: float) -> np.ndarray:
    """``cos(pi theta/2)|0> + e^{2 pi i phi} sin(pi theta/2)|2^n - 1>``."""
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = np.cos(np.pi * theta_t / 2)
    amps[-1] = np.exp(2j * np.pi * phi_t) * np.sin(np.pi * theta_t / 2)
    return amps


def _two_level_ensemble(n: int, thetas, phis) -> Ensemble:
    return Ensemble.from_matrix(np.stack([two_level_state(n, t, p) for t, p in zip(thetas, phis)]))


def gen_equator_ensemble(n: int, m: int, rng: np.random.Generator) -> Ensemble:
    if m < 1:
        raise ValueError("m must be >= 1")
    phis = rng.uniform(0.0, 1.0, size=m)
    return _two_level_ensemble(n, np.full(m, 0.5), phis)


def gen_localized_ensemble(n: int, m: int, mu: float, sigma: float, a: float, b: float,
                           rng: np.random.Generator) -> Ensemble:
    if sigma < 0 or a > b:
        raise ValueError("need sigma >= 0 and a <= b")
    dtheta = rng.normal(mu, sigma, size=m)
    dphi = rng.uniform(a, b, size=m)
    return _two_level_ensemble(n, dtheta, dphi)


def bp_target_states(zeta1: np.ndarray, zeta2: np.ndarray, n: int) -> np.ndarray:
    """``W' RZ(zeta2) W' RY(zeta1) |0>`` with ``W'`` a CX ladder."""
    batch = zeta1.shape[:-1]
    states = zero_states(batch, n)
    perm = cx_permutation([(q, q + 1) for q in range(n - 1)], n)
    for q in range(n):
        states = rotate(states, "Y", zeta1[..., q], q, n)
    states = apply_permutation(states, perm)
    for q in range(n):
        states = rotate(states, "Z", zeta2[..., q], q, n)
    return apply_permutation(states, perm)


def gen_bp_target_ensemble(n: int, m: int, rng: np.random.Generator) -> Ensemble:
    if m < 1:
        raise ValueError("m must be >= 1")
    zeta1 = rng.uniform(0.0, 2 * np.pi, size=(m, n))
    zeta2 = rng.uniform(0.0, 2 * np.pi, size=(m, n))
    return Ensemble.from_matrix(bp_target_states(zeta1, zeta2, n))


def standard_grid() -> np.ndarray:
    return np.round(np.arange(21) * 0.1, 10)


def gen_test_grid(n: int, theta_grid: Sequence[float], phi_grid: Sequence[float]):
    if len(theta_grid) == 0 or len(phi_grid) == 0:
        raise ValueError("grids must be non-empty")
    return [(float(t), float(p), Statevector(n, two_level_state(n, t, p)))
            for t in theta_grid for p in phi_grid]


def bloch_projection(state) -> tuple[float, float, float, float]:
    """Generalized Bloch vector in the span of ``|0...0>`` and ``|1...1>``.

    Returns ``(x, y, z, residual)`` where ``residual`` is the weight outside
    the two-dimensional span.
    """
    amps = state.amps if isinstance(state, Statevector) else np.asarray(state)
    a0, a1 = amps[0], amps[-1]
    cross = a0 * np.conj(a1)
    w0, w1 = abs(a0) ** 2, abs(a1) ** 2
    return float(2 * cross.real), float(2 * cross.imag), float(w0 - w1), float(max(0.0, 1.0 - w0 - w1))


def ideal_equator_spec(n: int) -> CircuitSpec:
    """A CX-ladder circuit with ``U(z)|0> = (|0...0> + e^{2 pi i z}|1...1>)/sqrt(2)``.

    Layer 1 puts qubit 0 in ``|+>`` and the ladder spreads it to a GHZ state;
    layer 2 writes the phase with ``RZ(pi z)``; further identity layers undo
    the extra ladder applications (the ladder permutation has finite order).
    """
    perm = cx_permutation([(q, q + 1) for q in range(n - 1)], n)
    order, p = 1, perm.copy()
    while not np.array_equal(p, np.arange(1 << n)):
        p = p[perm]
        order += 1
    n_layers = 1 + order
    xi = np.full((n_layers, n), 2)
    eta = np.zeros((n_layers, n), dtype=np.int64)
    theta = np.zeros((n_layers, n))
    xi[0, 0], theta[0, 0] = 1, np.pi / 4
    eta[1, 0], theta[1, 0] = 1, np.pi
    return CircuitSpec(n, n_layers, 1, xi, eta, theta, "CX_ladder", "HEA")
