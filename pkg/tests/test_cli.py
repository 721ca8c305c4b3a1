import subprocess
import sys

import pytest

from castle import __version__
from castle.analysis import BoundInputs, evaluate_bound, model_inputs
from castle.cli import main
from castle.harness.data import load_csv
from castle.harness.metrics import MetricsTable
from castle.network import load_checkpoint


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert run("synth", "--nodes", 10, "--branching", 3, "--n", 300, "--seed", 7, "--out", out) == 0
    return out


@pytest.fixture
def trained(tmp_path, synth_dir):
    out = tmp_path / "model"
    assert run("train", "--data", synth_dir / "data.csv", "--epochs", 5, "--out", out, "--seed", 1) == 0
    return out


class TestSynth:
    def test_deterministic(self, tmp_path, synth_dir):
        again = tmp_path / "again"
        run("synth", "--nodes", 10, "--branching", 3, "--n", 300, "--seed", 7, "--out", again)
        for name in ("data.csv", "data_edges.txt"):
            assert (again / name).read_bytes() == (synth_dir / name).read_bytes()

    def test_seed_matters(self, tmp_path, synth_dir):
        other = tmp_path / "other"
        run("synth", "--nodes", 10, "--branching", 3, "--n", 300, "--seed", 8, "--out", other)
        assert (other / "data.csv").read_bytes() != (synth_dir / "data.csv").read_bytes()

    def test_toy_with_noise(self, tmp_path):
        run("synth", "--toy", "--n", 50, "--sigma", 1.0, "--noise-vars", 2, "--out", tmp_path, "--name", "toy")
        ds = load_csv(tmp_path / "toy.csv")
        assert ds.d == 11 and ds.noise.sum() == 2
        assert "y -> x8" in (tmp_path / "toy_edges.txt").read_text()

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CASTLE_OUTPUT_DIR", str(tmp_path / "env"))
        assert run("synth", "--n", 20) == 0
        assert (tmp_path / "env" / "data.csv").exists()


class TestTrainAnalyze:
    def test_train_artifacts(self, trained):
        assert (trained / "model.ckpt").exists()
        lines = (trained / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 6

    def test_analyze(self, tmp_path, trained, synth_dir):
        out = tmp_path / "an"
        assert run("analyze", "--checkpoint", trained / "model.ckpt", "--truth",
                   synth_dir / "data_edges.txt", "--threshold", 0.0, "--out", out) == 0
        assert "->" in (out / "edges.txt").read_text()
        assert (out / "roles.csv").read_text().startswith("role,count,mean_in,mean_out")

    def test_bound_matches_library(self, tmp_path, trained, synth_dir):
        out = tmp_path / "b"
        assert run("bound", "--checkpoint", trained / "model.ckpt", "--data", synth_dir / "data.csv",
                   "--delta", 0.05, "--out", out) == 0
        params = load_checkpoint(trained / "model.ckpt")
        ds = load_csv(synth_dir / "data.csv")
        res = evaluate_bound(params, model_inputs(params, ds.xt), BoundInputs(delta=0.05))
        assert f"value = {res.value!r}\n" in (out / "bound.txt").read_text()

    def test_bad_delta_exit_code(self, tmp_path, trained, synth_dir):
        code = run("bound", "--checkpoint", trained / "model.ckpt", "--data", synth_dir / "data.csv",
                   "--delta", 1.5, "--out", tmp_path)
        assert code == 2

    def test_missing_file_exit_code(self, tmp_path, capsys):
        assert run("train", "--data", tmp_path / "absent.csv", "--out", tmp_path) == 1
        assert "castle: error" in capsys.readouterr().err

    def test_data_error_exit_code(self, tmp_path):
        (tmp_path / "bad.csv").write_text("y,x\n1,a\n")
        assert run("train", "--data", tmp_path / "bad.csv", "--out", tmp_path) == 1


class TestBenchmark:
    def test_grid_shape(self, tmp_path):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text("data = toy\nn = 60\ntest_n = 40\nfolds = 2\nepochs = 2\npatience = 2\n"
                       "regularizers = baseline, l2, castle\nbetas = 0.1\n")
        assert run("benchmark", "--config", cfg, "--out", tmp_path / "b") == 0
        table = MetricsTable.read_csv(tmp_path / "b" / "metrics.csv")
        assert sorted((r.regularizer, r.fold) for r in table.rows) == \
            sorted((g, f) for g in ("baseline", "l2", "castle") for f in range(2))
        assert (tmp_path / "b" / "ranks.csv").exists()

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text("n = 60\ntest_n = 20\nfolds = 5\nepochs = 2\npatience = 2\nregularizers = baseline\n")
        run("benchmark", "--config", cfg, "--folds", 2, "--out", tmp_path / "b")
        assert len(MetricsTable.read_csv(tmp_path / "b" / "metrics.csv")) == 2

    def test_sweep(self, tmp_path):
        cfg = tmp_path / "toy.cfg"
        cfg.write_text("n = 60\ntest_n = 20\nfolds = 2\nmax_folds = 1\nepochs = 2\npatience = 2\n"
                       "regularizers = baseline, castle\n")
        assert run("sweep", "--config", cfg, "--param", "beta", "--values", "0.01,1", "--out", tmp_path) == 0
        assert (tmp_path / "sweep_ranks.csv").exists()

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus = 1\n")
        assert run("benchmark", "--config", cfg, "--out", tmp_path) == 2


class TestProcess:
    def _proc(self, *args):
        return subprocess.run([sys.executable, "-m", "castle", *args], capture_output=True, text=True)

    def test_version(self):
        r = self._proc("--version")
        assert r.returncode == 0 and r.stdout.strip() == f"castle {__version__} (spec 1)"

    def test_unknown_flag(self):
        r = self._proc("synth", "--no-such-flag")
        assert r.returncode == 2 and "usage" in r.stderr

    def test_no_subcommand(self):
        assert self._proc().returncode == 2
