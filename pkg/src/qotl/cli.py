"""Command-line entry point: ``qotl {train,anomaly,experiment,bloch,selftest}``.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(``#`` starts a comment); keys are the long option names with dashes or
underscores.  Flags given on the command line override the file.

Exit codes: 0 success, 1 selftest failure, 2 usage error, 3 numerical
divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__

EXIT_OK, EXIT_SELFTEST, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4
OUTPUT_ENV = "QOTL_OUTPUT_DIR"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# run records


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunRecord:
    command: str
    config: dict
    started: str = field(default_factory=_now)
    finished: str | None = None
    artifacts: dict = field(default_factory=dict)  # file name -> sha256
    version: str = __version__

    def add(self, path: str) -> None:
        self.artifacts[os.path.basename(path)] = sha256_file(path)

    def write(self, outdir: str) -> str:
        self.finished = _now()
        path = os.path.join(outdir, "run.json")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")
        return path


# --------------------------------------------------------------------------
# argument helpers


def _shots(text: str):
    if str(text).lower() in ("exact", "inf", "none"):
        return None
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("shot counts must be >= 1 or 'exact'")
    return v


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).replace(",", " ").split()]


def _shot_list(text: str) -> list:
    return [_shots(t) for t in str(text).replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(",", " ").split()]


def _grid_values(text: str | None) -> list[float]:
    """``"standard"`` is 0, 0.1, ..., 2; otherwise a comma/space list (may be empty)."""
    from .ansatz import standard_grid

    if text is None or text == "standard":
        return [float(x) for x in standard_grid()]
    return _float_list(text)


def read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, argv) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    try:
        values = read_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    sub = parser._qotl_subparsers[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in actions or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for '{args.command}'")
        act = actions[key]
        if act.nargs == 0:  # store_true flags
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            try:
                defaults[key] = act.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for {key!r}: {raw!r}") from exc
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _outdir(args) -> str:
    out = args.out or os.environ.get(OUTPUT_ENV) or "qotl_out"
    os.makedirs(out, exist_ok=True)
    return out


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _write_text(path: str, text: str) -> str:
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


# --------------------------------------------------------------------------
# train


def _dataset(args, rng):
    from .ansatz import gen_bp_target_ensemble, gen_equator_ensemble, gen_localized_ensemble

    if args.dataset == "equator":
        return gen_equator_ensemble(args.n, args.m, rng)
    if args.dataset == "localized":
        return gen_localized_ensemble(args.n, args.m, args.mu, args.sigma, args.a, args.b, rng)
    if args.dataset == "bp":
        return gen_bp_target_ensemble(args.n, args.m, rng)
    raise UsageError(f"unknown dataset {args.dataset!r}")


def _seed_streams(seed: int):
    data, structure, training = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(data), np.random.default_rng(structure),
            int(training.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))


def cmd_train(args) -> int:
    from .ansatz import build_ala, build_hea, init_theta
    from .train import TrainConfig, TrainingDiverged, checkpoint_text, config_dict, parse_checkpoint, train

    out = _outdir(args)
    data_rng, spec_rng, train_seed = _seed_streams(args.seed)
    ensemble = _dataset(args, data_rng)
    opt_state = {}
    if args.resume:
        with open(args.resume) as fh:
            spec, opt_state, _ = parse_checkpoint(fh.read())
        if spec.n != args.n:
            raise UsageError("checkpoint qubit count differs from --n")
    else:
        if args.family == "ALA":
            spec = build_ala(args.n, args.n_layers, args.n_z, args.block_size, spec_rng)
        else:
            spec = build_hea(args.n, args.n_layers, args.n_z, spec_rng, args.entangler)
        spec = init_theta(spec, spec_rng, 0.0, args.init_high)
    cfg = TrainConfig(iterations=args.iterations, m_g=args.m_g, n_s=args.shots, cost=args.cost,
                      learning_rate=args.lr, seed=train_seed, record_global=args.record_global)
    record = RunRecord("train", _config_echo(args))
    status = EXIT_OK
    try:
        trained, trace = train(ensemble, spec, cfg, optimizer_state=opt_state)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        trained, trace, status = spec, exc.trace, EXIT_DIVERGED
    meta = {"train_config": config_dict(cfg), "dataset": args.dataset, "m": args.m}
    if trace.records:
        last = trace.records[-1]
        meta.update(final_loss=last.loss, shots_forward_per_iter=last.shots_forward,
                    shots_gradient_per_iter=last.shots_gradient)
    record.add(_write_text(os.path.join(out, "checkpoint.json"),
                           checkpoint_text(trained, trace.optimizer_state, meta)))
    with open(os.path.join(out, "trace.csv"), "w", newline="") as fh:
        trace.write_csv(fh)
    record.add(os.path.join(out, "trace.csv"))
    record.config["budget"] = {k: meta[k] for k in ("shots_forward_per_iter", "shots_gradient_per_iter") if k in meta}
    record.write(out)
    if status == EXIT_OK and trace.records:
        print(f"trained {len(trace)} iterations; final loss {trace.records[-1].loss:.6f}; wrote {out}")
    return status


# --------------------------------------------------------------------------
# anomaly


def _load_spec(path: str):
    from .train import parse_checkpoint

    with open(path) as fh:
        return parse_checkpoint(fh.read())[0]


def cmd_anomaly(args) -> int:
    from .anomaly import AnomalyConfig, score_grid, write_scores_csv
    from .ansatz import gen_test_grid

    spec = _load_spec(args.checkpoint)
    out = _outdir(args)
    thetas, phis = _grid_values(args.theta_grid), _grid_values(args.phi_grid)
    tests = gen_test_grid(spec.n, thetas, phis) if thetas and phis else []
    cfg = AnomalyConfig(n_ad=args.n_ad, iterations=args.iterations, step=args.step,
                        restarts=args.restarts, z_init=args.z_init, seed=args.seed)
    rows = score_grid(tests, spec, cfg)
    path = os.path.join(out, "scores.csv")
    with open(path, "w", newline="") as fh:
        write_scores_csv(rows, fh, spec.n_z, theory_n=spec.n if args.with_theory else None,
                         threshold=args.threshold)
    record = RunRecord("anomaly", _config_echo(args))
    record.add(path)
    if args.with_theory:
        record.config["theory"] = "grid minimum over an ideal equator model (interpretation)"
    record.write(out)
    print(f"scored {len(rows)} test states; wrote {path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# experiment


def cmd_experiment(args) -> int:
    from .experiments import ExperimentGrid, run_experiment

    grid = ExperimentGrid.preset(args.name, full=args.full, seed=args.seed)
    for key in ("n", "n_z", "m", "n_s", "n_layers", "n_monte"):
        v = getattr(args, key)
        if v is not None:
            setattr(grid, key, v)
    grid.__post_init__()
    out = _outdir(args)
    result = run_experiment(args.name, grid, workers=args.workers)
    record = RunRecord("experiment", _config_echo(args))
    for path in result.write(out):
        record.add(path)
    record.write(out)
    print(f"{args.name}: {len(result.raw_rows)} trials in {len(result.cell_rows)} cells; wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# bloch


def cmd_bloch(args) -> int:
    import csv

    from .ansatz import bloch_projection, model_states

    out = _outdir(args)
    if args.checkpoint:
        spec = _load_spec(args.checkpoint)
        if spec.n_z != 1:
            raise UsageError("the latent sweep needs a model with one latent variable")
        zs = np.linspace(0.0, 1.0, args.z_steps)
        states = model_states(spec, zs[:, None])
        label, keys = "z_latent", [repr(float(z)) for z in zs]
    else:
        data_rng, _, _ = _seed_streams(args.seed)
        states = _dataset(args, data_rng).matrix
        label, keys = "index", [str(i) for i in range(len(states))]
    path = os.path.join(out, "bloch.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label, "x", "y", "z", "residual"])
        for key, amps in zip(keys, states):
            w.writerow([key] + [repr(v) for v in bloch_projection(amps)])
    record = RunRecord("bloch", _config_echo(args))
    record.add(path)
    record.write(out)
    print(f"wrote {len(keys)} rows to {path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# selftest


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(seed=args.seed)
    ok = True
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_SELFTEST


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./qotl_out)")


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=("equator", "localized", "bp"), default="equator")
    p.add_argument("--n", type=int, default=2, help="qubits")
    p.add_argument("--m", type=int, default=30, help="training-ensemble size")
    p.add_argument("--mu", type=float, default=0.0, help="localized: mean of the polar offset")
    p.add_argument("--sigma", type=float, default=0.02, help="localized: std of the polar offset")
    p.add_argument("--a", type=float, default=0.0, help="localized: phase lower bound")
    p.add_argument("--b", type=float, default=0.1, help="localized: phase upper bound")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qotl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"qotl {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    parser._qotl_subparsers = {}

    p = subs.add_parser("train", help="fit a latent-variable circuit to an ensemble",
                        description="Writes checkpoint.json, trace.csv (iteration, loss, grad_norm, "
                                    "shots_used[, global_loss]) and run.json.")
    _common(p)
    _data_args(p)
    p.add_argument("--n-z", type=int, default=1, help="latent dimension")
    p.add_argument("--n-layers", type=int, default=10)
    p.add_argument("--family", choices=("HEA", "ALA"), default="HEA")
    p.add_argument("--entangler", choices=("CZ_ladder", "CX_ladder"), default="CZ_ladder")
    p.add_argument("--block-size", type=int, default=2, help="ALA block size")
    p.add_argument("--init-high", type=float, default=0.1,
                   help="initial angles are drawn from U(0, init_high) (default 0.1)")
    p.add_argument("--m-g", type=int, default=None, help="generated batch size (default: M)")
    p.add_argument("--shots", type=_shots, default=None, help="shots per cost estimate or 'exact'")
    p.add_argument("--cost", choices=("local", "trace"), default="local")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=1500)
    p.add_argument("--record-global", action="store_true", help="also log the trace-distance loss")
    p.add_argument("--resume", help="continue from a checkpoint (parameters and optimizer state)")
    p.set_defaults(func=cmd_train)
    parser._qotl_subparsers["train"] = p

    p = subs.add_parser("anomaly", help="score test states against a trained model",
                        description="Writes scores.csv (theta_t, phi_t, score, argmin_z..., restarts_used"
                                    "[, theory][, label]) and run.json.")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--theta-grid", default="standard", help="'standard' (0, 0.1, ..., 2) or a list")
    p.add_argument("--phi-grid", default="0", help="'standard' or a list (default 0)")
    p.add_argument("--n-ad", type=_shots, default=50, help="shots per evaluation or 'exact'")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--z-init", choices=("uniform", "center", "grid"), default="uniform")
    p.add_argument("--with-theory", action="store_true", help="add the ideal-equator oracle column")
    p.add_argument("--threshold", type=float, default=None, help="label rows above it as anomalous")
    p.set_defaults(func=cmd_anomaly)
    parser._qotl_subparsers["anomaly"] = p

    p = subs.add_parser("experiment", help="run a Monte-Carlo study",
                        description="Writes NAME_raw.csv, NAME_cells.csv, NAME_meta.json and run.json.")
    _common(p)
    p.add_argument("name", choices=("scaling-a", "scaling-b", "shots", "gradvar"))
    p.add_argument("--full", action="store_true", help="published grid sizes instead of desk scale")
    p.add_argument("--n", type=_int_list, default=None, help="qubit counts, e.g. '1,2,4'")
    p.add_argument("--n-z", type=_int_list, default=None)
    p.add_argument("--m", type=_int_list, default=None)
    p.add_argument("--n-s", type=_shot_list, default=None)
    p.add_argument("--n-layers", type=_int_list, default=None)
    p.add_argument("--n-monte", type=int, default=None)
    p.add_argument("--workers", type=int, default=1, help="process pool size")
    p.set_defaults(func=cmd_experiment)
    parser._qotl_subparsers["experiment"] = p

    p = subs.add_parser("bloch", help="generalized Bloch coordinates of a dataset or model sweep",
                        description="Writes bloch.csv (index or z_latent, x, y, z, residual).")
    _common(p)
    _data_args(p)
    p.add_argument("--checkpoint", help="sweep z over [0, 1] through this model instead")
    p.add_argument("--z-steps", type=int, default=101)
    p.set_defaults(func=cmd_bloch)
    parser._qotl_subparsers["bloch"] = p

    p = subs.add_parser("selftest", help="run the built-in oracle checks")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    parser._qotl_subparsers["selftest"] = p
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _apply_config(parser, args, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
