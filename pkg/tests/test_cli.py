"""Command-line interface: outputs, exit codes and error reporting."""

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nuvmpc import __version__
from nuvmpc.cli import main, parse_mu_range, worker_count
from nuvmpc.lssm import load_model

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def small_dac(tmp_path):
    return write_config(tmp_path, {"kind": "dac", "params": {"K": 40}})


class TestRun:
    def test_writes_trace_and_summary(self, tmp_path, small_dac):
        out = tmp_path / "out"
        code = main(["run", small_dac, "--out-dir", str(out), "--max-iters", "30", "--quiet"])
        assert code == 2  # binarizing EM does not settle in 30 iterations
        rows = read_csv(out / "dac_trace.csv")
        assert rows[0][0] == "k" and len(rows[0]) == 1 + 1 + 2 + 3
        assert len(rows) == 41
        summary = json.loads((out / "dac_summary.json").read_text())
        assert summary["iterations"] == 30 and summary["converged"] is False
        assert summary["manifest"]["seed"] == 1234
        assert summary["config"]["iake"]["max_iters"] == 30

    def test_full_length_default_config(self, tmp_path):
        code = main(["run", "--config", str(CONFIGS / "dac.json"), "--out-dir", str(tmp_path),
                     "--max-iters", "2", "--quiet"])
        assert code == 2
        assert len(read_csv(tmp_path / "dac_trace.csv")) == 451

    def test_converged_exit_zero(self, tmp_path):
        cfg = write_config(tmp_path, {"kind": "corridor", "params": {"version": 1, "K": 20,
                                      "segments": [[0, 20, -1, 1]]}})
        assert main(["run", cfg, "--out-dir", str(tmp_path), "--quiet"]) == 0

    def test_csv_is_deterministic(self, tmp_path, small_dac):
        for d in ("a", "b"):
            main(["run", small_dac, "--out-dir", str(tmp_path / d), "--max-iters", "20", "--quiet"])
        a = (tmp_path / "a" / "dac_trace.csv").read_bytes()
        b = (tmp_path / "b" / "dac_trace.csv").read_bytes()
        assert a == b

    def test_svg_and_version_override(self, tmp_path):
        cfg = write_config(tmp_path, {"kind": "corridor"})
        main(["run", cfg, "--version", "3", "--out-dir", str(tmp_path), "--max-iters", "5",
              "--svg", "--quiet"])
        assert (tmp_path / "corridor_v3.svg").read_text().startswith("<svg")
        assert (tmp_path / "corridor_v3_trace.csv").exists()

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"kind": "dac",\n "params": {"K": }\n}')
        out = tmp_path / "out"
        assert main(["run", str(p), "--out-dir", str(out)]) == 1
        err = capsys.readouterr().err
        assert "line 2" in err
        assert not out.exists() or not any(out.iterdir())

    def test_unknown_field(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"kind": "dac", "params": {"Kx": 4}})
        assert main(["run", cfg, "--out-dir", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "params" in err and "Kx" in err

    def test_out_of_horizon_slit(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"kind": "flappy", "params": {"K": 50}})
        assert main(["run", cfg, "--out-dir", str(tmp_path / "o")]) == 1
        assert "params.slits[0]" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        assert main(["run"]) == 1
        assert "config" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.json")]) == 1


class TestScalarSweep:
    def test_csv(self, tmp_path):
        out = tmp_path / "s.csv"
        code = main(["scalar-sweep", "--prior", "box", "--a", "-1", "--b", "1",
                     "--s2", "0.5,2", "--mu-range=-3:3:5", "--out", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert rows[0] == ["mu", "s2", "x_hat", "iterations", "converged"]
        assert len(rows) == 11
        x = np.array([float(r[2]) for r in rows[1:] if float(r[1]) == 2.0])
        assert np.all(np.abs(x) <= 1 + 1e-6)

    def test_em_staircase(self, tmp_path):
        from nuvmpc.scalar_lab import em_threshold

        out = tmp_path / "em.csv"
        assert main(["scalar-sweep", "--prior", "binarizing-em", "--a", "0", "--b", "1",
                     "--s2", "0.3", "--mu-range=-0.5:1.5:41", "--out", str(out)]) == 0
        for r in read_csv(out)[1:]:
            mu, x = float(r[0]), float(r[2])
            if abs(mu - 0.5) > 1e-9:
                assert (x < 0.5) == (mu < 0.5)
            if em_threshold(0.0, 1.0, mu) < 0.9 * 0.3:
                assert min(abs(x), abs(x - 1)) < 1e-2

    def test_empty_range(self, capsys):
        assert main(["scalar-sweep", "--mu-range", "0:1:0"]) == 0
        assert capsys.readouterr().out.strip() == "mu,s2,x_hat,iterations,converged"

    def test_bad_variance(self):
        assert main(["scalar-sweep", "--s2", "0.5,-1"]) == 1

    def test_bad_range(self):
        with pytest.raises(ValueError):
            parse_mu_range("1:2")


class TestVerify:
    def test_suites_pass(self, capsys):
        assert main(["verify", "--suite", "thresholds"]) == 0
        assert "checks passed" in capsys.readouterr().out

    def test_injected_fault_is_caught(self):
        assert main(["verify", "--suite", "thresholds", "--inject-fault"]) == 1

    def test_unknown_suite(self):
        assert main(["verify", "--suite", "nope"]) == 1

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("NUVMPC_THREADS", "2")
        assert worker_count(5) == 2
        monkeypatch.setenv("NUVMPC_THREADS", "x")
        with pytest.raises(Exception):
            worker_count(5)


class TestExportModel:
    def test_linear(self, tmp_path, small_dac):
        out = tmp_path / "m.json"
        assert main(["export-model", small_dac, "--out", str(out), "--quiet"]) == 0
        m, bc, atts = load_model(out)
        assert (m.K, m.N) == (40, 3)
        assert len(atts) == 80
        assert json.loads(out.read_text())["scenario"]["kind"] == "dac"

    def test_nonlinear_is_linearized(self, tmp_path):
        cfg = write_config(tmp_path, {"kind": "obstacle", "params": {"K": 10}})
        out = tmp_path / "o.json"
        assert main(["export-model", cfg, "--out", str(out), "--quiet"]) == 0
        m, _, _ = load_model(out)
        assert m.H == 3 and not m.is_constant()


class TestEntryPoints:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_module_invocation(self):
        res = subprocess.run([sys.executable, "-m", "nuvmpc", "--help"], capture_output=True,
                             text=True, check=False)
        assert res.returncode == 0
        for cmd in ("run", "scalar-sweep", "verify", "export-model"):
            assert cmd in res.stdout
