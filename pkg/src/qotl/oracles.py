"""Slow reference implementations used to cross-check the fast paths.

Nothing here shares code with the batched kernels: gates are dense matrices
built with ``scipy.linalg.expm`` and Kronecker products, and transport
problems are solved by enumeration.
"""
from __future__ import annotations

import itertools
from functools import reduce

import numpy as np
from scipy.linalg import expm

PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_I2 = np.eye(2, dtype=complex)
_P0 = np.diag([1, 0]).astype(complex)
_P1 = np.diag([0, 1]).astype(complex)


def embed(ops: dict, n: int) -> np.ndarray:
    """Kronecker product with ``ops[k]`` on qubit ``k`` (qubit 0 is the least significant bit)."""
    return reduce(np.kron, [ops.get(k, _I2) for k in reversed(range(n))])


def rotation(axis: str, angle: float) -> np.ndarray:
    return expm(-1j * angle * PAULI[axis])


def cz(c: int, t: int, n: int) -> np.ndarray:
    return embed({c: _P0}, n) + embed({c: _P1, t: PAULI["Z"]}, n)


def cx(c: int, t: int, n: int) -> np.ndarray:
    return embed({c: _P0}, n) + embed({c: _P1, t: PAULI["X"]}, n)


def dense_unitary(spec, z) -> np.ndarray:
    """``U(z, theta)`` as a dense matrix, gate by gate."""
    n = spec.n
    zbar = np.concatenate([[1.0], np.asarray(z, dtype=float).ravel()])
    u = np.eye(1 << n, dtype=complex)
    two = cz if spec.entangler == "CZ_ladder" else cx
    for l in range(spec.n_layers):
        for q in range(n):
            a = spec.theta[l, q] * zbar[spec.eta[l, q]]
            u = embed({q: rotation("XYZ"[spec.xi[l, q]], a)}, n) @ u
        for c, t in spec.entangler_pairs(l):
            u = two(c, t, n) @ u
    return u


def dense_state(spec, z) -> np.ndarray:
    return dense_unitary(spec, z)[:, 0]


def local_cost(psi: np.ndarray, spec, z) -> float:
    """``sqrt(mean_k (1 - p_k))`` with ``p_k`` the zero-probability of qubit ``k`` in ``U^dagger psi``."""
    phi = dense_unitary(spec, z).conj().T @ psi
    probs = np.abs(phi) ** 2
    n = spec.n
    p0 = [sum(probs[x] for x in range(1 << n) if not (x >> k) & 1) for k in range(n)]
    return float(np.sqrt(max(0.0, np.mean([1 - p for p in p0]))))


def trace_distance(psi: np.ndarray, phi: np.ndarray) -> float:
    """Half the nuclear norm of the difference of the two projectors."""
    d = np.outer(psi, psi.conj()) - np.outer(phi, phi.conj())
    return float(0.5 * np.abs(np.linalg.eigvalsh(d)).sum())


def brute_force_assignment(c: np.ndarray) -> float:
    """Minimum of ``mean_i c[i, sigma(i)]`` over all permutations."""
    m = c.shape[0]
    return min(sum(c[i, s[i]] for i in range(m)) / m for s in itertools.permutations(range(m)))


def enumerate_bfs(c: np.ndarray, p: np.ndarray, q: np.ndarray, tol: float = 1e-12) -> float:
    """Minimum cost over all basic feasible solutions of the transportation polytope."""
    m, n = c.shape
    cells = [(i, j) for i in range(m) for j in range(n)]
    rhs = np.concatenate([p, q])
    best = np.inf
    for subset in itertools.combinations(range(len(cells)), m + n - 1):
        a = np.zeros((m + n, len(subset)))
        for col, k in enumerate(subset):
            i, j = cells[k]
            a[i, col] = 1.0
            a[m + j, col] = 1.0
        if np.linalg.matrix_rank(a) < len(subset):
            continue
        x, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        if np.abs(a @ x - rhs).max() > 1e-10 or x.min() < -tol:
            continue
        best = min(best, float(sum(c[cells[k]] * v for k, v in zip(subset, x))))
    return best


def finite_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g
