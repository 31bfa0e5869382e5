"""Ground costs between pure states, exact and shot-sampled.

Both costs are read off the computational-basis distribution of
``U^dagger(z)|psi>``::

    c^2 = sum_x w[x] * P[x]

with ``w[x] = popcount(x) / n`` for the local cost (so that
``c^2 = (1/n) sum_k (1 - p_k)``) and ``w[x] = [x != 0]`` for the trace
distance to ``U(z)|0>`` (``c^2 = 1 - |<psi|U|0>|^2``).  A shot estimate
replaces ``P`` with empirical frequencies, which keeps ``c^2`` unbiased.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .ansatz import CircuitSpec, Ensemble, apply_circuit
from .qsim import SimulationError, Statevector, bit_table, sample_counts, sample_shots

LOCAL = "local"
TRACE = "trace"
COST_KINDS = (LOCAL, TRACE)

# cap on complex entries materialised per chunk of the cost matrix
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class GroundCostKind:
    kind: str = LOCAL
    shots: int | None = None  # None means exact

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown ground cost {self.kind!r}")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1 when finite")

    @property
    def exact(self) -> bool:
        return self.shots is None


EXACT_LOCAL = GroundCostKind(LOCAL)
EXACT_TRACE = GroundCostKind(TRACE)


def cost_weights(kind: str, n: int) -> np.ndarray:
    if kind == LOCAL:
        return bit_table(n).sum(axis=1) / n
    if kind == TRACE:
        w = np.ones(1 << n)
        w[0] = 0.0
        return w
    raise ValueError(f"unknown ground cost {kind!r}")


def _as_kind(kind) -> GroundCostKind:
    if isinstance(kind, GroundCostKind):
        return kind
    return GroundCostKind(kind)


def trace_distance(psi: Statevector, phi: Statevector) -> float:
    if psi.n != phi.n:
        raise SimulationError("dimension mismatch")
    overlap = abs(np.vdot(psi.amps, phi.amps)) ** 2
    return float(np.sqrt(max(0.0, 1.0 - overlap)))


def inverted_probabilities(psis: np.ndarray, spec: CircuitSpec, angles: np.ndarray) -> np.ndarray:
    """Basis probabilities of ``U^dagger |psi>`` for batched states and angles."""
    return np.abs(apply_circuit(psis, spec, angles, inverse=True)) ** 2


def _check_dims(psi: Statevector, spec: CircuitSpec) -> None:
    if psi.n != spec.n:
        raise SimulationError(f"state has {psi.n} qubits, circuit has {spec.n}")


def local_cost_exact(psi: Statevector, spec: CircuitSpec, z) -> float:
    _check_dims(psi, spec)
    probs = inverted_probabilities(psi.amps, spec, spec.angles(z))
    c2 = float(probs @ cost_weights(LOCAL, spec.n))
    return float(np.sqrt(max(c2, 0.0)))


def shot_estimate(table, kind: str = LOCAL) -> float:
    """Cost estimate from a single ``ShotTable`` (all qubits read per shot)."""
    w = cost_weights(kind, table.n)
    c2 = sum(w[x] * v for x, v in table.counts.items()) / table.total
    return float(np.sqrt(c2))


def local_cost_sampled(psi: Statevector, spec: CircuitSpec, z, n_s: int,
                       rng: np.random.Generator) -> float:
    _check_dims(psi, spec)
    amps = apply_circuit(psi.amps, spec, spec.angles(z), inverse=True)
    table = sample_shots(Statevector(spec.n, amps), n_s, rng)
    return shot_estimate(table, LOCAL)


def ground_cost(psi: Statevector, spec: CircuitSpec, z, kind=EXACT_LOCAL,
                rng: np.random.Generator | None = None) -> float:
    kind = _as_kind(kind)
    _check_dims(psi, spec)
    probs = inverted_probabilities(psi.amps, spec, spec.angles(z))
    w = cost_weights(kind.kind, spec.n)
    if kind.exact:
        return float(np.sqrt(max(float(probs @ w), 0.0)))
    counts = sample_counts(probs, kind.shots, rng)
    return float(np.sqrt(counts @ w / kind.shots))


def _pair_probability_chunks(psis: np.ndarray, spec: CircuitSpec, zs: np.ndarray):
    """Yield ``(j0, j1, probs)`` with ``probs[j, i, x]`` for ``U_j^dagger psi_i``."""
    m, dim = psis.shape
    angles = spec.angles(zs)
    m_g = angles.shape[0]
    via_unitary = dim <= m
    per_j = dim * (dim if via_unitary else m)
    chunk = max(1, _CHUNK_ELEMENTS // max(per_j, 1))
    for j0 in range(0, m_g, chunk):
        j1 = min(m_g, j0 + chunk)
        a = angles[j0:j1, None]
        if via_unitary:
            # rows of v are U_j applied to basis vectors: v[j, c, x] = U_j[x, c]
            eye = np.broadcast_to(np.eye(dim, dtype=np.complex128), (j1 - j0, dim, dim))
            v = apply_circuit(eye, spec, a)
            amps = np.matmul(np.conj(v), psis.T).transpose(0, 2, 1)
        else:
            amps = apply_circuit(np.broadcast_to(psis, (j1 - j0, m, dim)), spec, a, inverse=True)
        yield j0, j1, np.abs(amps) ** 2


def squared_cost_matrix(ensemble: Ensemble, spec: CircuitSpec, zs, kind=EXACT_LOCAL,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    kind = _as_kind(kind)
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    if ensemble.n != spec.n:
        raise SimulationError("ensemble and circuit qubit counts differ")
    zs = np.asarray(zs, dtype=np.float64).reshape(-1, spec.n_z)
    if zs.shape[0] == 0:
        raise ValueError("need at least one latent sample")
    if not kind.exact and rng is None:
        raise ValueError("a random generator is required for sampled costs")
    w = cost_weights(kind.kind, spec.n)
    out = np.empty((len(ensemble), zs.shape[0]))
    for j0, j1, probs in _pair_probability_chunks(ensemble.matrix, spec, zs):
        if kind.exact:
            c2 = probs @ w
        else:
            c2 = sample_counts(probs, kind.shots, rng) @ w / kind.shots
        out[:, j0:j1] = c2.T
    return np.clip(out, 0.0, 1.0)


def cost_matrix(ensemble: Ensemble, spec: CircuitSpec, zs, kind=EXACT_LOCAL,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """``c[i, j]`` between ensemble state ``i`` and model output ``U(z_j)|0>``."""
    return np.sqrt(squared_cost_matrix(ensemble, spec, zs, kind, rng))


def trace_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise trace distances between rows of two amplitude matrices."""
    overlap = np.abs(np.conj(a) @ b.T) ** 2
    return np.sqrt(np.clip(1.0 - overlap, 0.0, 1.0))


def write_cost_csv(c: np.ndarray, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["i", "j", "value"])
    for (i, j), v in np.ndenumerate(c):
        w.writerow([i, j, repr(float(v))])
