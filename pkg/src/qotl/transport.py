"""Exact discrete optimal transport.

The general solver is a transportation simplex (MODI potentials) started from
the north-west corner rule, with Bland's rule for both the entering and the
leaving variable: among eligible cells the lexicographically smallest
``(i, j)`` wins.  Square problems with uniform marginals are optimal at a
permutation (Birkhoff), so they are routed to an assignment solver.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from typing import TextIO

import numpy as np
from scipy.optimize import linear_sum_assignment

REDUCED_COST_TOL = 1e-12
MARGINAL_TOL = 1e-9


class TransportError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling; ``rows[k], cols[k]`` carry mass ``mass[k] > 0``."""

    m: int
    m_g: int
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def dense(self) -> np.ndarray:
        out = np.zeros((self.m, self.m_g))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.rows, self.cols, self.mass)]

    def __len__(self) -> int:
        return len(self.mass)

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "mass"])
        for i, j, v in self.entries():
            w.writerow([i, j, repr(v)])


def _validate_costs(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise TransportError(f"cost matrix must be a non-empty 2-D array, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise TransportError("cost matrix has non-finite entries")
    if np.any(c < 0):
        raise TransportError("cost matrix has negative entries")
    return c


def _plan_from_cells(m, m_g, cells, scale=1.0, floor=0.0) -> TransportPlan:
    cells = sorted((i, j, v) for (i, j), v in cells.items() if v > floor)
    rows = np.array([i for i, _, _ in cells], dtype=np.int64)
    cols = np.array([j for _, j, _ in cells], dtype=np.int64)
    mass = np.array([v for _, _, v in cells], dtype=np.float64) / scale
    return TransportPlan(m, m_g, rows, cols, mass)


def _northwest_corner(supply, demand, tol):
    a = list(supply)
    b = list(demand)
    m, n = len(a), len(b)
    i = j = 0
    basis = {}
    while True:
        x = min(a[i], b[j])
        basis[i, j] = x
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        # exactly one index advances per cell so the basis is a spanning tree
        if j == n - 1 or (i < m - 1 and a[i] <= tol):
            i += 1
        else:
            j += 1
    return basis


def _potentials(c, basis, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = [None] * (m + n)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if pot[nb] is None:
                if node < m:
                    pot[nb] = c[node, nb - m] - pot[node]
                else:
                    pot[nb] = c[nb, node - m] - pot[node]
                queue.append(nb)
    return np.array(pot[:m]), np.array(pot[m:]), adj


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def transportation_simplex(c, supply, demand, tol: float = 1e-12, max_iter: int | None = None):
    """Solve ``min <c, pi>`` subject to row sums ``supply`` and column sums ``demand``.

    Returns ``(loss, basis)`` where ``basis`` maps ``(i, j)`` to the flow of
    each basic cell (degenerate zero-flow cells included).
    """
    c = _validate_costs(c)
    m, n = c.shape
    basis = _northwest_corner(supply, demand, tol)
    if max_iter is None:
        max_iter = 50 * (m + n) ** 2 + 1000
    for _ in range(max_iter):
        u, v, adj = _potentials(c, basis, m, n)
        reduced = c - u[:, None] - v[None, :]
        eligible = np.argwhere(reduced < -REDUCED_COST_TOL)
        eligible = [tuple(e) for e in eligible if tuple(e) not in basis]
        if not eligible:
            break
        ie, je = min(eligible)  # Bland: lowest (i, j)
        path = _tree_path(adj, ie, m + je)
        edges = []
        for a, b in zip(path[:-1], path[1:]):
            edges.append((a, b - m) if a < m else (b, a - m))
        minus = edges[0::2]
        plus = edges[1::2]
        theta = min(basis[e] for e in minus)
        leaving = min(e for e in minus if basis[e] <= theta + tol)
        for e in minus:
            basis[e] -= theta
        for e in plus:
            basis[e] += theta
        del basis[leaving]
        basis[ie, je] = theta
    else:
        raise TransportError("transportation simplex did not converge")
    loss = float(sum(c[i, j] * x for (i, j), x in basis.items()))
    return loss, basis


def solve_ot_weighted(c, p, q) -> tuple[float, TransportPlan]:
    c = _validate_costs(c)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != (c.shape[0],) or q.shape != (c.shape[1],):
        raise TransportError("weight vectors do not match the cost matrix")
    for name, w in (("p", p), ("q", q)):
        if np.any(w < 0) or abs(w.sum() - 1.0) > MARGINAL_TOL:
            raise TransportError(f"{name} is not a probability vector")
    _, basis = transportation_simplex(c, p, q, tol=1e-15)
    plan = _plan_from_cells(c.shape[0], c.shape[1], basis, floor=1e-15)
    return float(np.sum(c[plan.rows, plan.cols] * plan.mass)), plan


def solve_ot_uniform(c, method: str = "auto") -> tuple[float, TransportPlan]:
    """Empirical OT loss with uniform marginals ``1/M`` and ``1/M_g``.

    ``method`` is ``"auto"`` (assignment for square matrices, simplex
    otherwise), ``"assignment"`` or ``"simplex"``.
    """
    c = _validate_costs(c)
    m, m_g = c.shape
    if method == "auto":
        method = "assignment" if m == m_g else "simplex"
    if method == "assignment":
        if m != m_g:
            raise TransportError("assignment route needs a square cost matrix")
        rows, cols = linear_sum_assignment(c)
        order = np.argsort(rows, kind="stable")
        plan = TransportPlan(m, m_g, rows[order].astype(np.int64), cols[order].astype(np.int64),
                             np.full(m, 1.0 / m))
    elif method == "simplex":
        # integer masses (M_g per row, M per column) keep the pivots exact
        _, basis = transportation_simplex(c, np.full(m, float(m_g)), np.full(m_g, float(m)), tol=0.5)
        plan = _plan_from_cells(m, m_g, basis, scale=float(m * m_g))
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.sum(c[plan.rows, plan.cols] * plan.mass)), plan


def dual_objective(c, p, q, plan: TransportPlan) -> float:
    """Dual value from MODI potentials on the plan's support (for gap checks)."""
    c = _validate_costs(c)
    m, n = c.shape
    basis = {(int(i), int(j)): v for i, j, v in zip(plan.rows, plan.cols, plan.mass)}
    # pad the support to a spanning tree with zero-mass cells
    parent = list(range(m + n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in basis:
        parent[find(i)] = find(m + j)
    for i in range(m):
        for j in range(n):
            if find(i) != find(m + j):
                parent[find(i)] = find(m + j)
                basis[i, j] = 0.0
    u, v, _ = _potentials(c, basis, m, n)
    return float(np.dot(p, u) + np.dot(q, v))


def otl_between_ensembles(ensemble, spec, zs, kind="local", rng=None):
    """Empirical OT loss between an ensemble and the model outputs ``U(z_j)|0>``.

    Returns ``(loss, plan, cost_matrix)``.
    """
    from .cost import cost_matrix

    c = cost_matrix(ensemble, spec, zs, kind, rng)
    if ensemble.is_uniform():
        loss, plan = solve_ot_uniform(c)
    else:
        loss, plan = solve_ot_weighted(c, ensemble.weights, np.full(c.shape[1], 1.0 / c.shape[1]))
    return loss, plan, c
