"""Training loop: latent sampling, cost estimation, OT solve, shift gradient, Adam step."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, TextIO

import numpy as np

from .ansatz import CircuitSpec, Ensemble, model_states, sample_latents
from .autodiff import otl_grad
from .cost import GroundCostKind, squared_cost_matrix, trace_distance_matrix
from .transport import solve_ot_uniform, solve_ot_weighted


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became non-finite; ``trace`` holds the records so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrainConfig:
    iterations: int = 100
    m_g: int | None = None  # defaults to the ensemble size
    n_s: int | None = None  # shots per cost evaluation; None is exact
    cost: str = "local"
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"
    seed: int = 0
    record_global: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def kind(self) -> GroundCostKind:
        return GroundCostKind(self.cost, self.n_s)


class Adam:
    def __init__(self, size, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m.tolist(), "v": self.v.tolist()}

    def load(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)


class SGD:
    def __init__(self, size, lr=0.01, **_):
        self.lr = lr
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        return params - self.lr * grad

    def state(self) -> dict:
        return {"t": self.t}

    def load(self, state: dict) -> None:
        self.t = int(state["t"])


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    grad_norm: float
    shots_forward: int
    shots_gradient: int
    global_loss: float | None = None
    wall_time: float = 0.0


@dataclass
class TrainTrace:
    records: list[TrainRecord] = field(default_factory=list)
    optimizer_state: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def global_losses(self) -> np.ndarray:
        return np.array([np.nan if r.global_loss is None else r.global_loss for r in self.records])

    def write_csv(self, fh: TextIO) -> None:
        """Deterministic columns only (wall time is left out)."""
        with_global = any(r.global_loss is not None for r in self.records)
        cols = ["iteration", "loss", "grad_norm", "shots_used"] + (["global_loss"] if with_global else [])
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            row = [r.iteration, repr(r.loss), repr(r.grad_norm), r.shots_forward + r.shots_gradient]
            if with_global:
                row.append(repr(r.global_loss))
            w.writerow(row)


def make_optimizer(cfg: TrainConfig, size: int):
    cls = Adam if cfg.optimizer == "adam" else SGD
    return cls(size, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def _solve(c: np.ndarray, ensemble: Ensemble):
    if ensemble.is_uniform():
        return solve_ot_uniform(c)
    return solve_ot_weighted(c, ensemble.weights, np.full(c.shape[1], 1.0 / c.shape[1]))


def eval_global_otl(ensemble: Ensemble, spec: CircuitSpec, zs) -> float:
    """OT loss with the trace-distance ground cost at the current parameters."""
    c = trace_distance_matrix(ensemble.matrix, model_states(spec, zs))
    return _solve(c, ensemble)[0]


def budget(m: int, m_g: int, support: int, n_params: int, n_s: int | None) -> tuple[int, int]:
    """Copies of training states consumed by the cost estimate and by the gradient.

    Exact evaluation counts one copy per circuit execution.
    """
    shots = 1 if n_s is None else n_s
    return m * m_g * shots, support * 2 * n_params * shots


def train(ensemble: Ensemble, spec: CircuitSpec, cfg: TrainConfig,
          optimizer_state: dict | None = None,
          callback: Callable[[TrainRecord], None] | None = None) -> tuple[CircuitSpec, TrainTrace]:
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    rng = np.random.default_rng(cfg.seed)
    kind = cfg.kind
    m_g = cfg.m_g or len(ensemble)
    opt = make_optimizer(cfg, spec.n_params)
    if optimizer_state:
        opt.load(optimizer_state)
    trace = TrainTrace()
    theta = spec.theta.ravel().copy()
    start = time.perf_counter()
    for it in range(cfg.iterations):
        zs = sample_latents(m_g, spec.n_z, rng)
        c = np.sqrt(squared_cost_matrix(ensemble, spec, zs, kind, rng))
        loss, plan = _solve(c, ensemble)
        grad = otl_grad(ensemble, spec, zs, plan, "theta", kind, rng, costs=c) if np.isfinite(loss) else None
        fwd, bwd = budget(len(ensemble), m_g, len(plan), spec.n_params, cfg.n_s)
        record = TrainRecord(
            iteration=it,
            loss=float(loss),
            grad_norm=grad.norm if grad is not None else float("nan"),
            shots_forward=fwd,
            shots_gradient=bwd,
            global_loss=eval_global_otl(ensemble, spec, zs) if cfg.record_global else None,
            wall_time=time.perf_counter() - start,
        )
        trace.records.append(record)
        if grad is None:
            trace.optimizer_state = opt.state()
            raise TrainingDiverged(f"non-finite loss at iteration {it}", trace)
        if callback is not None:
            callback(record)
        theta = opt.step(theta, grad.values)
        if not np.all(np.isfinite(theta)):
            trace.optimizer_state = opt.state()
            raise TrainingDiverged(f"non-finite parameters after iteration {it}", trace)
        spec = spec.with_theta(theta)
    trace.optimizer_state = opt.state()
    return spec, trace


# --------------------------------------------------------------------------
# checkpoints


def checkpoint_text(spec: CircuitSpec, optimizer_state: dict | None = None, meta: dict | None = None) -> str:
    doc = {"spec": spec.to_dict(), "optimizer": optimizer_state or {}, "meta": meta or {}}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def parse_checkpoint(text: str) -> tuple[CircuitSpec, dict, dict]:
    doc = json.loads(text)
    if "spec" not in doc:
        return CircuitSpec.from_dict(doc), {}, {}
    return CircuitSpec.from_dict(doc["spec"]), doc.get("optimizer", {}), doc.get("meta", {})


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
