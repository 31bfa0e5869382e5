import csv
import json
import os
import subprocess
import sys

import pytest

from qotl.cli import EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USAGE, main, read_config, sha256_file


def run(*argv):
    return main([str(a) for a in argv])


def digests(outdir):
    with open(os.path.join(outdir, "run.json")) as fh:
        return json.load(fh)["artifacts"]


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "train"
    assert run("train", "--n", 2, "--m", 4, "--n-layers", 2, "--iterations", 5, "--out", out) == EXIT_OK
    return out


def test_train_outputs(trained):
    assert sorted(os.listdir(trained)) == ["checkpoint.json", "run.json", "trace.csv"]
    table = rows(trained / "trace.csv")
    assert table[0] == ["iteration", "loss", "grad_norm", "shots_used"]
    assert len(table) == 6
    d = digests(trained)
    assert d["trace.csv"] == sha256_file(trained / "trace.csv")
    meta = json.loads((trained / "checkpoint.json").read_text())["meta"]
    assert meta["shots_forward_per_iter"] == 16


def test_train_is_reproducible(tmp_path):
    for name in ("a", "b"):
        run("train", "--n", 2, "--m", 3, "--n-layers", 2, "--iterations", 4, "--shots", 16, "--out",
            tmp_path / name)
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
    run("train", "--n", 2, "--m", 3, "--n-layers", 2, "--iterations", 4, "--shots", 16, "--seed", 1,
        "--out", tmp_path / "c")
    assert digests(tmp_path / "c")["trace.csv"] != digests(tmp_path / "a")["trace.csv"]


def test_zero_iterations(tmp_path):
    assert run("train", "--n", 1, "--m", 2, "--n-layers", 1, "--iterations", 0, "--out", tmp_path) == EXIT_OK
    assert rows(tmp_path / "trace.csv") == [["iteration", "loss", "grad_norm", "shots_used"]]


def test_resume_from_checkpoint(trained, tmp_path):
    out = tmp_path / "resumed"
    assert run("train", "--n", 2, "--m", 4, "--iterations", 2, "--resume", trained / "checkpoint.json",
               "--out", out) == EXIT_OK
    doc = json.loads((out / "checkpoint.json").read_text())
    assert doc["optimizer"]["t"] == 7
    assert run("train", "--n", 3, "--m", 4, "--iterations", 1, "--resume", trained / "checkpoint.json",
               "--out", out) == EXIT_USAGE


def test_divergence_exit_code(tmp_path):
    assert run("train", "--n", 1, "--m", 2, "--n-layers", 1, "--iterations", 3, "--lr", "inf",
               "--out", tmp_path) == EXIT_DIVERGED
    assert (tmp_path / "trace.csv").exists()


def test_usage_errors(tmp_path):
    assert run("train", "--n", "x") == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE
    assert run("anomaly") == EXIT_USAGE
    assert run("train", "--m", 0, "--out", tmp_path) == EXIT_USAGE


def test_missing_files_are_io_errors(tmp_path):
    assert run("anomaly", "--checkpoint", tmp_path / "nope.json", "--out", tmp_path) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("anomaly", "--checkpoint", bad, "--out", tmp_path) == EXIT_IO


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nn = 1\nm = 2\nn-layers = 1\niterations = 3\nrecord_global = true\n")
    assert read_config(cfg)["n_layers"] == "1"
    out = tmp_path / "out"
    assert run("train", "--config", cfg, "--out", out) == EXIT_OK
    table = rows(out / "trace.csv")
    assert len(table) == 4 and table[0][-1] == "global_loss"
    # command-line flags win over the file
    assert run("train", "--config", cfg, "--iterations", 1, "--out", out) == EXIT_OK
    assert len(rows(out / "trace.csv")) == 2
    cfg.write_text("colour = blue\n")
    assert run("train", "--config", cfg, "--out", out) == EXIT_USAGE
    cfg.write_text("just words\n")
    assert run("train", "--config", cfg, "--out", out) == EXIT_USAGE
    assert run("train", "--config", tmp_path / "missing.cfg", "--out", out) == EXIT_USAGE


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("QOTL_OUTPUT_DIR", str(tmp_path / "env"))
    assert run("bloch", "--n", 1, "--m", 3) == EXIT_OK
    assert (tmp_path / "env" / "bloch.csv").exists()


def test_anomaly_outputs(trained, tmp_path):
    out = tmp_path / "scores"
    ck = trained / "checkpoint.json"
    assert run("anomaly", "--checkpoint", ck, "--theta-grid", "0,0.5,1", "--iterations", 5,
               "--with-theory", "--threshold", 0.1, "--out", out) == EXIT_OK
    table = rows(out / "scores.csv")
    assert table[0] == ["theta_t", "phi_t", "score", "argmin_z1", "restarts_used", "theory", "label"]
    assert len(table) == 4
    assert float(table[2][5]) == pytest.approx(0.0, abs=1e-12)
    first = digests(out)["scores.csv"]
    run("anomaly", "--checkpoint", ck, "--theta-grid", "0,0.5,1", "--iterations", 5, "--with-theory",
        "--threshold", 0.1, "--out", out)
    assert digests(out)["scores.csv"] == first


def test_anomaly_standard_grid_and_empty_grid(trained, tmp_path):
    ck = trained / "checkpoint.json"
    assert run("anomaly", "--checkpoint", ck, "--iterations", 2, "--restarts", 1, "--out", tmp_path) == EXIT_OK
    assert len(rows(tmp_path / "scores.csv")) == 22
    assert run("anomaly", "--checkpoint", ck, "--theta-grid", "", "--out", tmp_path) == EXIT_OK
    assert rows(tmp_path / "scores.csv") == [["theta_t", "phi_t", "score", "argmin_z1", "restarts_used"]]


def test_bloch_outputs(trained, tmp_path):
    assert run("bloch", "--checkpoint", trained / "checkpoint.json", "--out", tmp_path) == EXIT_OK
    table = rows(tmp_path / "bloch.csv")
    assert table[0] == ["z_latent", "x", "y", "z", "residual"] and len(table) == 102
    assert run("bloch", "--dataset", "equator", "--n", 2, "--m", 5, "--out", tmp_path / "d") == EXIT_OK
    table = rows(tmp_path / "d" / "bloch.csv")
    assert len(table) == 6 and all(abs(float(r[3])) < 1e-12 for r in table[1:])


def test_experiment_outputs(tmp_path):
    args = ("experiment", "scaling-a", "--n", "1", "--n-z", "1", "--m", "1,2,4,8", "--n-monte", 2)
    assert run(*args, "--out", tmp_path / "a") == EXIT_OK
    assert run(*args, "--out", tmp_path / "b") == EXIT_OK
    da, db = digests(tmp_path / "a"), digests(tmp_path / "b")
    for name in ("scaling-a_raw.csv", "scaling-a_cells.csv"):
        assert da[name] == db[name]
    assert run("experiment", "scaling-a", "--m", "0", "--out", tmp_path) == EXIT_USAGE


def test_selftest_passes(capsys):
    assert run("selftest") == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qotl.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("qotl ")
