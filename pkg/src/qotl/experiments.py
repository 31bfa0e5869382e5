"""Monte-Carlo drivers for the sample-size, shot-noise and gradient-variance studies.

Every cell draws from its own stream ``SeedSequence(seed, spawn_key=(code, *cell))``
so results do not depend on evaluation order or on the worker count.
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .ansatz import (Ensemble, bp_target_states, default_layers, model_states, random_spec,
                     sample_latents)
from .autodiff import otl_grad
from .cost import EXACT_LOCAL, GroundCostKind, LOCAL, TRACE, cost_matrix
from .transport import solve_ot_uniform

EXPERIMENTS = ("scaling-a", "scaling-b", "shots", "gradvar")
_CODES = {"scaling-a": 1, "scaling-b": 2, "shots": 3, "gradvar": 4, "shot-bound": 5}


def _pow2(lo: int, hi: int) -> list[int]:
    return [2 ** i for i in range(lo, hi + 1)]


@dataclass
class ExperimentGrid:
    n: list = field(default_factory=lambda: [2])
    n_z: list = field(default_factory=lambda: [1])
    m: list = field(default_factory=lambda: _pow2(2, 10))
    n_s: list = field(default_factory=lambda: [None])  # None is exact
    n_layers: list | None = None  # None applies 3 + N_z // n
    n_monte: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "n_z", "m"):
            vals = getattr(self, name)
            if not vals or any(int(v) < 1 for v in vals):
                raise ValueError(f"{name} needs at least one value, all >= 1")
        if any(s is not None and s < 1 for s in self.n_s):
            raise ValueError("shot counts must be >= 1")
        if self.n_layers is not None and any(v < 1 for v in self.n_layers):
            raise ValueError("n_layers must be >= 1")
        if self.n_monte < 1:
            raise ValueError("n_monte must be >= 1")

    def layers_for(self, n: int, n_z: int) -> list[int]:
        if self.n_layers is None:
            return [default_layers(n, n_z)]
        return list(self.n_layers)

    @classmethod
    def preset(cls, name: str, full: bool = False, seed: int = 0) -> "ExperimentGrid":
        """Desk-scale grids by default; ``full`` restores the published sizes."""
        if name == "scaling-a":
            if full:
                return cls([1, 2, 4, 6, 8, 10], [1, 2, 4, 6, 8], _pow2(0, 10), n_monte=100, seed=seed)
            return cls([1, 2, 4], [1, 2, 4], _pow2(2, 10), n_monte=50, seed=seed)
        if name == "scaling-b":
            if full:
                return cls([1, 2, 4, 6, 8], [1, 2, 4, 6, 10, 14], _pow2(0, 10), n_monte=100, seed=seed)
            return cls([1, 2, 4], [1, 2, 4], _pow2(0, 10), n_monte=50, seed=seed)
        if name == "shots":
            if full:
                return cls([8], [1, 2, 4], _pow2(0, 10), [2 ** (i + 7) for i in range(8)], n_monte=256, seed=seed)
            return cls([4], [1], [4, 16, 64, 256], _pow2(7, 11), n_monte=64, seed=seed)
        if name == "gradvar":
            if full:
                return cls(list(range(2, 15, 2)), [1], _pow2(1, 4), n_layers=[10, 25, 50, 75, 100, 200],
                           n_monte=300, seed=seed)
            return cls([2, 4, 6, 8], [1], _pow2(1, 4), n_layers=[10], n_monte=100, seed=seed)
        raise ValueError(f"unknown experiment {name!r}")


@dataclass
class FitResult:
    a: float
    b: float
    c: float
    rss: float
    at_bound: bool = False  # b landed on the edge of the search grid
    flagged: bool = False  # residual far above the median of its peers

    def predict(self, m) -> np.ndarray:
        return self.a * np.asarray(m, dtype=np.float64) ** (-1.0 / self.b) + self.c


@dataclass
class ExperimentResult:
    name: str
    raw_header: list
    raw_rows: list
    cell_header: list
    cell_rows: list
    meta: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)

    def column(self, col: str, table: str = "cells", **where) -> np.ndarray:
        header, rows = (self.cell_header, self.cell_rows) if table == "cells" else (self.raw_header, self.raw_rows)
        k = header.index(col)
        keys = {header.index(name): v for name, v in where.items()}
        return np.array([r[k] for r in rows if all(r[i] == v for i, v in keys.items())], dtype=np.float64)

    def write(self, outdir: str) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        paths = []
        for suffix, header, rows in (("raw", self.raw_header, self.raw_rows),
                                     ("cells", self.cell_header, self.cell_rows)):
            path = os.path.join(outdir, f"{self.name}_{suffix}.csv")
            with open(path, "w", newline="") as fh:
                write_rows(fh, header, rows)
            paths.append(path)
        path = os.path.join(outdir, f"{self.name}_meta.json")
        with open(path, "w") as fh:
            json.dump(self.meta, fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")
        paths.append(path)
        return paths


def _fmt(v) -> str:
    if v is None:
        return "exact"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])


def cell_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)))


def _run_map(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _summary(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


def _meta(name: str, grid: ExperimentGrid, start: float, **extra) -> dict:
    meta = {"experiment": name, "grid": asdict(grid), "seed": grid.seed, "version": __version__,
            "wall_time_s": round(time.perf_counter() - start, 3)}
    meta.update(extra)
    return meta


# --------------------------------------------------------------------------
# curve fitting


def fit_power_law(m, y, b_min: float = 0.3, b_max: float = 20.0, b_step: float = 0.01) -> FitResult:
    """Least-squares fit of ``a * M**(-1/b) + c``.

    ``b`` is searched on a grid; for each ``b`` the model is linear in
    ``(a, c)`` and solved exactly.  The lowest residual wins.
    """
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if m.size != y.size:
        raise ValueError("m and y differ in length")
    if np.unique(m).size < 4:
        raise ValueError("need at least four distinct M values")
    if np.any(m <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("M must be positive and y finite")
    bs = np.round(np.arange(b_min, b_max + b_step / 2, b_step), 10)
    x = m[None, :] ** (-1.0 / bs[:, None])  # (B, P)
    # closed-form simple regression of y on x for every b at once
    xm = x.mean(axis=1, keepdims=True)
    ym = y.mean()
    sxx = ((x - xm) ** 2).sum(axis=1)
    sxy = ((x - xm) * (y - ym)).sum(axis=1)
    a = np.where(sxx > 0, sxy / np.where(sxx > 0, sxx, 1.0), 0.0)
    c = ym - a * xm[:, 0]
    rss = ((a[:, None] * x + c[:, None] - y) ** 2).sum(axis=1)
    k = int(np.argmin(rss))
    return FitResult(float(a[k]), float(bs[k]), float(c[k]), float(rss[k]),
                     at_bound=bool(k == 0 or k == bs.size - 1))


def loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, dtype=np.float64))
    y = np.log(np.asarray(y, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def fit_sqrt_log(m, y) -> tuple[float, float, float]:
    """Fit ``sqrt(c1 ln M + c2)`` by linear least squares on ``y**2``; returns ``(c1, c2, rss)``."""
    m = np.asarray(m, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.stack([np.log(m), np.ones_like(m)], axis=1)
    (c1, c2), *_ = np.linalg.lstsq(A, y ** 2, rcond=None)
    pred = np.sqrt(np.clip(c1 * np.log(m) + c2, 0.0, None))
    return float(c1), float(c2), float(((pred - y) ** 2).sum())


def fit_inverse_sqrt(m, y) -> tuple[float, float]:
    """Fit ``a * M**-0.5``; returns ``(a, rss)``."""
    x = np.asarray(m, dtype=np.float64) ** -0.5
    y = np.asarray(y, dtype=np.float64)
    a = float(x @ y / (x @ x))
    return a, float(((a * x - y) ** 2).sum())


def flag_outliers(fits: Sequence[FitResult], factor: float = 10.0) -> None:
    """Mark fits whose residual exceeds ``factor`` times the median residual."""
    if not fits:
        return
    med = float(np.median([f.rss for f in fits]))
    for f in fits:
        f.flagged = bool(f.rss > factor * med) if med > 0 else False


# --------------------------------------------------------------------------
# empirical loss between two generated ensembles


def empirical_loss(spec_a, spec_b, za, zb, kind=EXACT_LOCAL, rng=None) -> float:
    """OT loss between ``{U_a(za_i)|0>}`` and ``{U_b(zb_j)|0>}`` with uniform weights."""
    ens = Ensemble.from_matrix(model_states(spec_a, za))
    return solve_ot_uniform(cost_matrix(ens, spec_b, zb, kind, rng))[0]


def _scaling_cell(task):
    exp_name, seed, n, n_z, n_layers, ms, n_monte = task
    code = _CODES[exp_name]
    struct_rng = cell_rng(seed, code, n, n_z, n_layers)
    spec_t = random_spec(n, n_layers, n_z, struct_rng)
    spec_m = spec_t if exp_name == "scaling-a" else random_spec(n, n_layers, n_z, struct_rng)
    out = []
    for m in ms:
        rng = cell_rng(seed, code, n, n_z, n_layers, m)
        for trial in range(n_monte):
            zt = sample_latents(m, n_z, rng)
            zm = sample_latents(m, n_z, rng)
            out.append((n, n_z, n_layers, m, trial, empirical_loss(spec_t, spec_m, zt, zm)))
    return out


def _scaling(exp_name: str, grid: ExperimentGrid, workers: int):
    start = time.perf_counter()
    tasks = [(exp_name, grid.seed, n, n_z, nl, list(grid.m), grid.n_monte)
             for n in grid.n for n_z in grid.n_z for nl in grid.layers_for(n, n_z)]
    raw = [row for rows in _run_map(_scaling_cell, tasks, workers) for row in rows]
    cells = []
    for n, n_z, nl in [(t[2], t[3], t[4]) for t in tasks]:
        for m in grid.m:
            vals = [r[5] for r in raw if r[:4] == (n, n_z, nl, m)]
            cells.append((n, n_z, nl, m) + _summary(vals))
    return start, raw, cells


def experiment_a(grid: ExperimentGrid, workers: int = 1) -> ExperimentResult:
    """Mean empirical loss between two latent batches pushed through one circuit."""
    start, raw, cells = _scaling("scaling-a", grid, workers)
    return ExperimentResult("scaling-a", ["n", "n_z", "n_layers", "m", "trial", "loss"], raw,
                            ["n", "n_z", "n_layers", "m", "mean_loss", "stderr"], cells,
                            _meta("scaling-a", grid, start))


def experiment_b(grid: ExperimentGrid, workers: int = 1) -> ExperimentResult:
    """Mean empirical loss between two different circuits, fitted by ``a M^(-1/b) + c``.

    The large-sample reference is the mean at the largest grid ``M``; the
    ``gap`` column reports the reference minus the mean at each ``M``.
    """
    start, raw, cells = _scaling("scaling-b", grid, workers)
    m_max = max(grid.m)
    fits = {}
    out_cells = []
    for key in dict.fromkeys(c[:3] for c in cells):
        rows = [c for c in cells if c[:3] == key]
        ref = next(c[4] for c in rows if c[3] == m_max)
        out_cells += [c + (ref - c[4],) for c in rows]
        ms = [c[3] for c in rows]
        try:
            fits[key] = fit_power_law(ms, [c[4] for c in rows])
        except ValueError:
            fits[key] = None
    flag_outliers([f for f in fits.values() if f is not None])
    fit_rows = [key + ((f.a, f.b, f.c, f.rss, f.at_bound, f.flagged) if f else (None,) * 6)
                for key, f in fits.items()]
    meta = _meta("scaling-b", grid, start, reference_m=m_max,
                 fits={"header": ["n", "n_z", "n_layers", "a", "b", "c", "rss", "at_bound", "flagged"],
                       "rows": fit_rows})
    return ExperimentResult("scaling-b", ["n", "n_z", "n_layers", "m", "trial", "loss"], raw,
                            ["n", "n_z", "n_layers", "m", "mean_loss", "stderr", "gap"], out_cells,
                            meta, fits)


def b_vs_latent_slope(fits: dict, n: int) -> float:
    """Least-squares slope of ``b`` against ``N_z`` at fixed ``n`` (flagged fits excluded)."""
    pts = [(k[1], f.b) for k, f in fits.items() if k[0] == n and f is not None and not f.flagged]
    if len(pts) < 2:
        raise ValueError("fewer than two usable fits")
    x, y = np.array(pts, dtype=np.float64).T
    return float(np.polyfit(x, y, 1)[0])


# --------------------------------------------------------------------------
# shot noise


def _shots_cell(task):
    seed, n, n_z, n_layers, m, shots, n_monte = task
    code = _CODES["shots"]
    struct_rng = cell_rng(seed, code, n, n_z, n_layers)
    spec_t = random_spec(n, n_layers, n_z, struct_rng)
    spec_m = random_spec(n, n_layers, n_z, struct_rng)
    rng = cell_rng(seed, code, n, n_z, n_layers, m)
    out = []
    for trial in range(n_monte):
        zt = sample_latents(m, n_z, rng)
        zm = sample_latents(m, n_z, rng)
        ens = Ensemble.from_matrix(model_states(spec_t, zt))
        exact = solve_ot_uniform(cost_matrix(ens, spec_m, zm))[0]
        for n_s in shots:
            srng = cell_rng(seed, code, n, n_z, n_layers, m, n_s, trial)
            est = solve_ot_uniform(cost_matrix(ens, spec_m, zm, GroundCostKind(LOCAL, n_s), srng))[0]
            out.append((n, n_z, n_layers, m, n_s, trial, exact, est, abs(est - exact)))
    return out


def experiment_shots(grid: ExperimentGrid, workers: int = 1) -> ExperimentResult:
    """Mean ``|J_sampled - J_exact|`` per ``(N_z, M, N_s)`` on shared latent draws."""
    start = time.perf_counter()
    shots = [s for s in grid.n_s if s is not None]
    if not shots:
        raise ValueError("the shot experiment needs at least one finite shot count")
    tasks = [(grid.seed, n, n_z, nl, m, shots, grid.n_monte)
             for n in grid.n for n_z in grid.n_z for nl in grid.layers_for(n, n_z) for m in grid.m]
    raw = [row for rows in _run_map(_shots_cell, tasks, workers) for row in rows]
    cells = []
    for _, n, n_z, nl, m, _, _ in tasks:
        for n_s in shots:
            vals = [r[8] for r in raw if r[:5] == (n, n_z, nl, m, n_s)]
            cells.append((n, n_z, nl, m, n_s) + _summary(vals))
    return ExperimentResult(
        "shots", ["n", "n_z", "n_layers", "m", "n_s", "trial", "exact_loss", "sampled_loss", "abs_error"], raw,
        ["n", "n_z", "n_layers", "m", "n_s", "mean_abs_error", "stderr"], cells, _meta("shots", grid, start))


# --------------------------------------------------------------------------
# gradient variance


def _gradvar_cell(task):
    seed, n, n_layers, m, n_monte = task
    code = _CODES["gradvar"]
    target_rng = cell_rng(seed, code, n, m)
    zeta = target_rng.uniform(0.0, 2 * np.pi, size=(2, m, n))
    ens = Ensemble.from_matrix(bp_target_states(zeta[0], zeta[1], n))
    rng = cell_rng(seed, code, n, n_layers, m)
    out = []
    for trial in range(n_monte):
        spec = random_spec(n, n_layers, 1, rng)
        zs = sample_latents(m, 1, rng)
        row = [n, n_layers, m, trial]
        for kind in (TRACE, LOCAL):
            c = cost_matrix(ens, spec, zs, kind)
            _, plan = solve_ot_uniform(c)
            row.append(otl_grad(ens, spec, zs, plan, "theta", kind, costs=c, slots=[0]).values[0])
        out.append(tuple(row))
    return out


def experiment_gradvar(grid: ExperimentGrid, workers: int = 1) -> ExperimentResult:
    """Variance of ``dL/dtheta_{1,1}`` over random circuits, global and local costs.

    Targets are fixed per ``(n, M)``; every trial draws a new structure,
    new angles and new latents, and both costs are evaluated on that draw.
    """
    start = time.perf_counter()
    tasks = [(grid.seed, n, nl, m, grid.n_monte)
             for n in grid.n for nl in grid.layers_for(n, 1) for m in grid.m]
    raw = [row for rows in _run_map(_gradvar_cell, tasks, workers) for row in rows]
    cells = []
    for _, n, nl, m, _ in tasks:
        g = np.array([r[4:6] for r in raw if r[:3] == (n, nl, m)])
        var = g.var(axis=0, ddof=1) if len(g) > 1 else np.full(2, np.nan)
        cells.append((n, nl, m, float(var[0]), float(var[1])))
    return ExperimentResult("gradvar", ["n", "n_layers", "m", "trial", "grad_global", "grad_local"], raw,
                            ["n", "n_layers", "m", "var_global", "var_local"], cells,
                            _meta("gradvar", grid, start, derivative="theta[layer 1, qubit 1]"))


# --------------------------------------------------------------------------
# shot-error bound


def shot_error_bound(m: int, n_s: int, g: float, delta: float) -> float:
    """Deviation that ``|L_sampled - L_exact|`` exceeds with probability at most ``delta``
    when every exact ground cost is at least ``g``."""
    t1 = np.sqrt(2 * m / delta) * np.sqrt((1 - g) / n_s + (1 - g) ** 2 / (4 * n_s ** 2 * g))
    return float(t1 + (1 - g) / (2 * n_s * np.sqrt(g)))


def separated_instance(n: int, m: int, g: float, rng: np.random.Generator, n_z: int = 1,
                       max_tries: int = 1000):
    """Random targets and model draws whose exact local costs all exceed ``g``."""
    for _ in range(max_tries):
        spec = random_spec(n, None, n_z, rng)
        amps = rng.normal(size=(m, 1 << n)) + 1j * rng.normal(size=(m, 1 << n))
        ens = Ensemble.from_matrix(amps / np.linalg.norm(amps, axis=1, keepdims=True))
        zs = sample_latents(m, n_z, rng)
        c = cost_matrix(ens, spec, zs)
        if c.min() > g:
            return ens, spec, zs, c
    raise RuntimeError("could not draw a separated instance")


def shot_bound_check(trials: int = 500, m: int = 8, n_s: int = 512, g: float = 0.2,
                       delta: float = 0.1, n: int = 4, seed: int = 0) -> dict:
    """Fraction of trials where the sampled loss strays beyond the bound."""
    bound = shot_error_bound(m, n_s, g, delta)
    errors = np.empty(trials)
    for t in range(trials):
        rng = cell_rng(seed, _CODES["shot-bound"], t)
        ens, spec, zs, c = separated_instance(n, m, g, rng)
        exact = solve_ot_uniform(c)[0]
        est = solve_ot_uniform(cost_matrix(ens, spec, zs, GroundCostKind(LOCAL, n_s), rng))[0]
        errors[t] = abs(est - exact)
    return {"bound": bound, "violation_rate": float(np.mean(errors > bound)),
            "max_error": float(errors.max()), "errors": errors}


RUNNERS = {
    "scaling-a": experiment_a,
    "scaling-b": experiment_b,
    "shots": experiment_shots,
    "gradvar": experiment_gradvar,
}


def run_experiment(name: str, grid: ExperimentGrid, workers: int = 1) -> ExperimentResult:
    if name not in RUNNERS:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    return RUNNERS[name](grid, workers)
