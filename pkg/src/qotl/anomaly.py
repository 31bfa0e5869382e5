"""Anomaly scores: minimise the local ground cost over the latent variables.

Descent runs Adam on ``z`` with parameter-shift gradients, clamps ``z`` to
``[0, 1]^{N_z}`` after every step and keeps the best value seen.  With finite
shots every iterate is re-scored under one fixed evaluation seed so that the
best-so-far comparison is made on common random numbers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .ansatz import CircuitSpec, ideal_equator_spec, two_level_state
from .autodiff import _chain, shift_differences
from .cost import LOCAL, cost_weights, inverted_probabilities
from .qsim import Statevector, sample_counts

Z_INIT_POLICIES = ("uniform", "center", "grid")


@dataclass(frozen=True)
class AnomalyConfig:
    n_ad: int | None = 50  # shots per cost evaluation; None is exact
    iterations: int = 200
    step: float = 0.05
    restarts: int = 4
    z_init: str = "uniform"
    grid_size: int = 101  # candidates per latent axis for z_init="grid"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.n_ad is not None and self.n_ad < 1:
            raise ValueError("n_ad must be >= 1 when finite")
        if self.z_init not in Z_INIT_POLICIES:
            raise ValueError(f"unknown z_init policy {self.z_init!r}")
        if self.step <= 0:
            raise ValueError("step must be positive")


@dataclass
class AnomalyResult:
    score: float
    argmin_z: np.ndarray
    traces: list[np.ndarray] = field(default_factory=list)  # best-so-far per restart

    @property
    def restarts_used(self) -> int:
        return len(self.traces)


def _local_costs(psi: np.ndarray, spec: CircuitSpec, zs: np.ndarray, shots, rng) -> np.ndarray:
    probs = inverted_probabilities(np.broadcast_to(psi, (zs.shape[0], psi.size)), spec, spec.angles(zs))
    w = cost_weights(LOCAL, spec.n)
    if shots is None:
        c2 = probs @ w
    else:
        c2 = sample_counts(probs, shots, rng) @ w / shots
    return np.sqrt(np.clip(c2, 0.0, 1.0))


def _initial_latents(psi, spec, cfg, rng) -> np.ndarray:
    if cfg.z_init == "uniform":
        return rng.uniform(0.0, 1.0, size=(cfg.restarts, spec.n_z))
    if cfg.z_init == "center":
        return np.full((cfg.restarts, spec.n_z), 0.5)
    axis = np.linspace(0.0, 1.0, cfg.grid_size)
    cand = np.stack(np.meshgrid(*([axis] * spec.n_z), indexing="ij"), axis=-1).reshape(-1, spec.n_z)
    costs = _local_costs(psi, spec, cand, None, None)
    best = np.argsort(costs, kind="stable")[:cfg.restarts]
    return cand[np.resize(best, cfg.restarts)]


def anomaly_score(test: Statevector, trained: CircuitSpec, cfg: AnomalyConfig = AnomalyConfig(),
                  test_index: int = 0, z0=None) -> AnomalyResult:
    """Best-of-restarts minimum of ``c_local(test, U(z)|0>)`` over ``z``.

    Random streams derive from ``(cfg.seed, test_index)``.  ``z0`` overrides
    the initial latents (shape ``(restarts, N_z)`` or ``(N_z,)``).
    """
    if test.n != trained.n:
        raise ValueError("test state and model qubit counts differ")
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(test_index,))
    init_ss, eval_ss, grad_ss = ss.spawn(3)
    grad_rng = np.random.default_rng(grad_ss)
    psi = test.amps
    if z0 is None:
        z = _initial_latents(psi, trained, cfg, np.random.default_rng(init_ss))
    else:
        z = np.broadcast_to(np.asarray(z0, dtype=np.float64), (cfg.restarts, trained.n_z)).copy()
    z = np.clip(z, 0.0, 1.0)
    slots = np.flatnonzero(trained.eta.ravel() > 0)
    w = cost_weights(LOCAL, trained.n)

    def evaluate(zs):
        return _local_costs(psi, trained, zs, cfg.n_ad, np.random.default_rng(eval_ss))

    m = np.zeros_like(z)
    v = np.zeros_like(z)
    c = evaluate(z)
    best = c.copy()
    best_z = z.copy()
    history = [best.copy()]
    for t in range(1, cfg.iterations + 1):
        if slots.size:
            psis = np.broadcast_to(psi, (z.shape[0], psi.size))
            d = shift_differences(psis, trained, trained.angles(z), w, slots, cfg.n_ad, grad_rng)
            g = _chain(trained, z, d, c, "z", slots)
        else:
            g = np.zeros_like(z)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g ** 2
        step = cfg.step * (m / (1 - cfg.beta1 ** t)) / (np.sqrt(v / (1 - cfg.beta2 ** t)) + cfg.eps)
        z = np.clip(z - step, 0.0, 1.0)
        c = evaluate(z)
        improved = c < best
        best = np.where(improved, c, best)
        best_z[improved] = z[improved]
        history.append(best.copy())
    hist = np.array(history)
    r = int(np.argmin(best))
    return AnomalyResult(float(best[r]), best_z[r].copy(), [hist[:, k] for k in range(hist.shape[1])])


def theoretical_as_equator(theta_t: float, n: int, points: int = 400) -> float:
    """Minimum over the ideal equator model of the local cost to a test state.

    The ideal model outputs ``(|0...0> + e^{2 pi i z}|1...1>)/sqrt(2)``; the
    minimum over ``z`` is taken on a ``points``-point grid of ``[0, 1)``.
    """
    if not 0.0 <= theta_t <= 2.0:
        raise ValueError("theta_t must lie in [0, 2]")
    spec = ideal_equator_spec(n)
    zs = (np.arange(points) / points)[:, None]
    psi = two_level_state(n, theta_t, 0.0)
    return float(_local_costs(psi, spec, zs, None, None).min())


@dataclass(frozen=True)
class ScoreRow:
    theta_t: float
    phi_t: float
    score: float
    argmin_z: tuple
    restarts_used: int


def score_grid(tests: Sequence, trained: CircuitSpec, cfg: AnomalyConfig = AnomalyConfig()) -> list[ScoreRow]:
    """Score every ``(theta_t, phi_t, state)`` triple; row ``k`` uses stream ``k``."""
    rows = []
    for k, (theta_t, phi_t, state) in enumerate(tests):
        res = anomaly_score(state, trained, cfg, test_index=k)
        rows.append(ScoreRow(float(theta_t), float(phi_t), res.score,
                             tuple(float(x) for x in res.argmin_z), res.restarts_used))
    return rows


def write_scores_csv(rows: Sequence[ScoreRow], fh: TextIO, n_z: int, theory_n: int | None = None,
                     threshold: float | None = None) -> None:
    """Columns: theta_t, phi_t, score, argmin_z1..., restarts_used, then the
    optional ``theory`` and ``label`` columns."""
    header = ["theta_t", "phi_t", "score"] + [f"argmin_z{k + 1}" for k in range(n_z)] + ["restarts_used"]
    if theory_n is not None:
        header.append("theory")
    if threshold is not None:
        header.append("label")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        row = [repr(r.theta_t), repr(r.phi_t), repr(r.score)] + [repr(x) for x in r.argmin_z] + [r.restarts_used]
        if theory_n is not None:
            row.append(repr(theoretical_as_equator(r.theta_t, theory_n)))
        if threshold is not None:
            row.append("anomalous" if r.score > threshold else "normal")
        w.writerow(row)
