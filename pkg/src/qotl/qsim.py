"""Dense statevector simulation.

Conventions used throughout the package:

* Rotations carry no factor 1/2: ``R_P(a) = exp(-i a sigma_P)``.
* Qubit ``k`` is bit ``k`` of the basis-state index (qubit 0 is the least
  significant bit).

The batched kernels (``rotate``, ``apply_diagonal``, ``apply_permutation``)
operate on arrays of shape ``(..., 2**n)`` so that many circuits can be
simulated with one numpy call per gate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

MAX_QUBITS = 14
NORM_TOL = 1e-10

PAULI_AXES = ("X", "Y", "Z")
ROTATION_KINDS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATION_KINDS + ("CZ", "CX")


class SimulationError(ValueError):
    """Raised for malformed states or gates."""


@dataclass(frozen=True, eq=False)
class Statevector:
    n: int
    amps: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n <= MAX_QUBITS:
            raise SimulationError(f"qubit count {self.n} outside [1, {MAX_QUBITS}]")
        amps = np.array(self.amps, dtype=np.complex128)
        if amps.shape != (1 << self.n,):
            raise SimulationError(f"expected {1 << self.n} amplitudes, got shape {amps.shape}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise SimulationError(f"state is not normalized (norm^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    @classmethod
    def zero(cls, n: int) -> "Statevector":
        amps = np.zeros(1 << n, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n, amps)

    @classmethod
    def basis(cls, n: int, index: int) -> "Statevector":
        amps = np.zeros(1 << n, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n, amps)

    @classmethod
    def from_amplitudes(cls, amps: Sequence[complex]) -> "Statevector":
        amps = np.asarray(amps, dtype=np.complex128)
        n = int(round(np.log2(amps.size)))
        return cls(n, amps)

    @property
    def dim(self) -> int:
        return 1 << self.n

    def __eq__(self, other):
        if not isinstance(other, Statevector):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.amps, other.amps)

    __hash__ = None


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise SimulationError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        arity = 1 if self.kind in ROTATION_KINDS else 2
        if len(self.targets) != arity:
            raise SimulationError(f"{self.kind} acts on {arity} qubit(s), got {self.targets}")
        if len(set(self.targets)) != arity:
            raise SimulationError(f"targets must be distinct: {self.targets}")

    def check(self, n: int) -> None:
        for t in self.targets:
            if not 0 <= t < n:
                raise SimulationError(f"target {t} out of range for {n} qubits")


@dataclass(frozen=True)
class ShotTable:
    """Outcome counts of ``total`` computational-basis measurements."""

    n: int
    counts: Mapping[int, int] = field(default_factory=dict)
    total: int = 0

    def __post_init__(self):
        if sum(self.counts.values()) != self.total:
            raise SimulationError("counts do not sum to total")
        if any(k < 0 or k >= (1 << self.n) for k in self.counts):
            raise SimulationError("outcome out of range")

    def frequencies(self) -> np.ndarray:
        freq = np.zeros(1 << self.n)
        for k, v in self.counts.items():
            freq[k] = v
        return freq / self.total


# --------------------------------------------------------------------------
# batched kernels


def _split(states: np.ndarray, k: int, n: int) -> np.ndarray:
    return states.reshape(states.shape[:-1] + (1 << (n - k - 1), 2, 1 << k))


def rotate(states: np.ndarray, axis: str, angles, k: int, n: int) -> np.ndarray:
    """Apply ``exp(-i a sigma_axis)`` on qubit ``k`` to a batch of states.

    ``angles`` must broadcast against ``states.shape[:-1]``.
    """
    v = _split(states, k, n)
    a = np.asarray(angles, dtype=np.float64)[..., None, None]
    s0 = v[..., 0, :]
    s1 = v[..., 1, :]
    if axis == "Z":
        ph = np.exp(-1j * a)
        out0 = ph * s0
        out1 = np.conj(ph) * s1
    else:
        c = np.cos(a)
        s = np.sin(a)
        if axis == "X":
            out0 = c * s0 - 1j * s * s1
            out1 = c * s1 - 1j * s * s0
        elif axis == "Y":
            out0 = c * s0 - s * s1
            out1 = s * s0 + c * s1
        else:
            raise SimulationError(f"unknown axis {axis!r}")
    out = np.stack(np.broadcast_arrays(out0, out1), axis=-2)
    return out.reshape(out.shape[:-3] + (1 << n,))


def bit_table(n: int) -> np.ndarray:
    """``(2**n, n)`` array; entry ``[x, k]`` is bit ``k`` of ``x``."""
    x = np.arange(1 << n)
    return (x[:, None] >> np.arange(n)[None, :]) & 1


def cz_phases(pairs: Sequence[tuple[int, int]], n: int) -> np.ndarray:
    bits = bit_table(n)
    parity = np.zeros(1 << n, dtype=np.int64)
    for a, b in pairs:
        parity += bits[:, a] * bits[:, b]
    return np.where(parity % 2 == 0, 1.0, -1.0)


def cx_permutation(pairs: Sequence[tuple[int, int]], n: int) -> np.ndarray:
    """Index map ``perm`` with ``(CX_seq |psi>)[x] = psi[perm[x]]``.

    Gates are applied in the given order.
    """
    perm = np.arange(1 << n)
    for c, t in pairs:
        # new[x] = old[x ^ (bit_c(x) << t)]; composing: perm <- perm[g]
        x = np.arange(1 << n)
        g = x ^ (((x >> c) & 1) << t)
        perm = perm[g]
    return perm


def apply_diagonal(states: np.ndarray, diag: np.ndarray) -> np.ndarray:
    return states * diag


def apply_permutation(states: np.ndarray, perm: np.ndarray) -> np.ndarray:
    return states[..., perm]


# --------------------------------------------------------------------------
# single-state operations


def apply_gate(state: Statevector, g: Gate) -> Statevector:
    g.check(state.n)
    n = state.n
    if g.kind in ROTATION_KINDS:
        amps = rotate(state.amps, g.kind[1], g.angle, g.targets[0], n)
    elif g.kind == "CZ":
        amps = apply_diagonal(state.amps, cz_phases([g.targets], n))
    else:
        amps = apply_permutation(state.amps, cx_permutation([g.targets], n))
    return Statevector(n, amps)


def apply_gates(state: Statevector, gates: Sequence[Gate]) -> Statevector:
    for g in gates:
        state = apply_gate(state, g)
    return state


def basis_probabilities(state: Statevector) -> np.ndarray:
    return np.abs(state.amps) ** 2


def _sampling_probs(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


def sample_counts(probs: np.ndarray, n_s: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial outcome counts for a batch of probability vectors."""
    if n_s < 1:
        raise SimulationError("number of shots must be >= 1")
    return rng.multinomial(n_s, _sampling_probs(probs))


def sample_shots(state: Statevector, n_s: int, rng: np.random.Generator) -> ShotTable:
    counts = sample_counts(basis_probabilities(state), n_s, rng)
    table = {int(k): int(v) for k, v in enumerate(counts) if v}
    return ShotTable(state.n, table, int(n_s))


def marginal_zero_prob(probs_or_shots, k: int) -> float:
    """Probability that qubit ``k`` reads 0.

    Accepts an exact probability vector, a ``Statevector`` or a ``ShotTable``.
    """
    if isinstance(probs_or_shots, ShotTable):
        n = probs_or_shots.n
        if not 0 <= k < n:
            raise SimulationError(f"qubit {k} out of range for {n} qubits")
        zeros = sum(v for x, v in probs_or_shots.counts.items() if not (x >> k) & 1)
        return zeros / probs_or_shots.total
    if isinstance(probs_or_shots, Statevector):
        probs_or_shots = basis_probabilities(probs_or_shots)
    probs = np.asarray(probs_or_shots, dtype=np.float64)
    n = int(round(np.log2(probs.shape[-1])))
    if not 0 <= k < n:
        raise SimulationError(f"qubit {k} out of range for {n} qubits")
    mask = ((np.arange(probs.shape[-1]) >> k) & 1) == 0
    return float(probs[..., mask].sum(axis=-1))
