import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from nlsls.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NOT_CERTIFIED, EXIT_OK, main
from nlsls.io import load_affine_clm

DEADBEAT = """
seed = 0
[plant]
kind = "lti"
A = [[1.0]]
B = [[1.0]]
horizon = 3
[synthesis]
T = 2
"""

UNSTABLE_2D = """
seed = 3
[plant]
kind = "lti"
A = [[1.1, 0.3], [0.0, 0.9]]
B = [[0.0], [1.0]]
horizon = 25
[synthesis]
T = 5
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def report(path):
    out = {}
    for line in path.read_text().splitlines():
        if " = " in line and not line.startswith(" "):
            key, val = line.split(" = ", 1)
            out[key.strip()] = val.strip()
    return out


def run(tmp_path, command, config_text=None, *extra, out="out"):
    args = [command, "--out-dir", str(tmp_path / out)]
    if config_text is not None:
        args += ["--config", write(tmp_path, config_text)]
    return main(args + list(extra)), tmp_path / out


class TestSynthesize:
    def test_deadbeat_kernels(self, tmp_path):
        code, out = run(tmp_path, "synthesize", DEADBEAT)
        assert code == EXIT_OK
        clm = load_affine_clm(out / "clm")
        assert np.allclose(clm.M.blocks[:, 0], -1.0, atol=1e-12)
        assert np.all(clm.R.blocks[:, 0] == 1.0) and np.all(clm.R.blocks[:, 1] == 0.0)
        rep = report(out / "synthesis_report.txt")
        assert float(rep["subspace_residual"]) <= 1e-12
        assert float(rep["h2_cost"]) == pytest.approx(8.0)

    def test_infeasible_reports_h(self, tmp_path):
        cfg = DEADBEAT.replace("A = [[1.0]]", "A = [[2.0]]").replace("B = [[1.0]]", "B = [[0.0]]")
        code, out = run(tmp_path, "synthesize", cfg)
        assert code == EXIT_INFEASIBLE
        assert report(out / "synthesis_report.txt")["h"] == "0"

    def test_missing_reference_is_config_error(self, tmp_path, capsys):
        cfg = 'seed = 0\n[plant]\nkind = "cartpole"\n[cartpole]\nreference = "nope.csv"\n' \
              "[synthesis]\nT = 60\n"
        code, _ = run(tmp_path, "synthesize", cfg)
        assert code == EXIT_CONFIG
        assert "nope.csv" in capsys.readouterr().err

    def test_cartpole_at_default_parameters(self, tmp_path):
        cfg = 'seed = 0\n[plant]\nkind = "cartpole"\n[cartpole]\nduration = 4.0\n' \
              "[synthesis]\nT = 60\n"
        code, out = run(tmp_path, "synthesize", cfg)
        assert code == EXIT_OK
        assert float(report(out / "synthesis_report.txt")["subspace_residual"]) <= 1e-8
        assert (out / "reference.csv").exists()

    def test_missing_config_and_bad_toml(self, tmp_path):
        assert main(["synthesize", "--config", str(tmp_path / "none.toml"),
                     "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG
        code, _ = run(tmp_path, "synthesize", "seed = = 1")
        assert code == EXIT_CONFIG

    def test_missing_fir_horizon(self, tmp_path):
        code, _ = run(tmp_path, "synthesize", DEADBEAT.replace("T = 2", ""))
        assert code == EXIT_CONFIG


class TestSimulate:
    def test_exact_clm_matches_closed_loop(self, tmp_path):
        code, out = run(tmp_path, "simulate", UNSTABLE_2D)
        assert code == EXIT_OK
        rep = report(out / "simulation_summary.txt")
        assert float(rep["max_abs_x_minus_psi_x"]) <= 1e-10
        assert float(rep["max_abs_u_minus_psi_u"]) <= 1e-10
        assert {"w_hat_norm_p1", "w_hat_norm_p2", "w_hat_norm_pinf"} <= set(rep)

    def test_p_norm_flag(self, tmp_path):
        code, out = run(tmp_path, "simulate", UNSTABLE_2D, "--p-norm", "inf")
        rep = report(out / "simulation_summary.txt")
        assert code == EXIT_OK and "w_hat_norm_pinf" in rep and "w_hat_norm_p1" not in rep

    def test_same_seed_same_bytes(self, tmp_path):
        _, a = run(tmp_path, "simulate", UNSTABLE_2D, out="a")
        _, b = run(tmp_path, "simulate", UNSTABLE_2D, out="b")
        _, c = run(tmp_path, "simulate", UNSTABLE_2D, "--seed", "4", out="c")
        assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
        assert (a / "trace.csv").read_bytes() != (c / "trace.csv").read_bytes()

    def test_seed_required(self, tmp_path):
        code, _ = run(tmp_path, "simulate", UNSTABLE_2D.replace("seed = 3", ""))
        assert code == EXIT_CONFIG

    def test_kernels_from_previous_run(self, tmp_path):
        run(tmp_path, "synthesize", UNSTABLE_2D, out="syn")
        cfg = UNSTABLE_2D.replace("[synthesis]\nT = 5", '[clm]\ndir = "syn/clm"')
        code, out = run(tmp_path, "simulate", cfg)
        assert code == EXIT_OK
        assert float(report(out / "simulation_summary.txt")["max_abs_x_minus_psi_x"]) <= 1e-10

    def test_manifest_lists_artifacts(self, tmp_path):
        _, out = run(tmp_path, "simulate", UNSTABLE_2D)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate" and manifest["exit_code"] == 0
        for art in manifest["artifacts"]:
            data = (out / art["path"]).read_bytes()
            assert hashlib.sha256(data).hexdigest() == art["sha256"]
        _, again = run(tmp_path, "simulate", UNSTABLE_2D, out="again")
        assert json.loads((again / "manifest.json").read_text())["config_sha256"] == \
            manifest["config_sha256"]


class TestCertify:
    def test_contractive_delay(self, tmp_path):
        cfg = 'seed = 1\n[certify]\ntarget = "delay"\ngamma = 0.5\nsamples = 50\n'
        code, out = run(tmp_path, "certify", cfg)
        text = (out / "certificate.txt").read_text()
        assert code == EXIT_OK and "overall = CERTIFIED" in text and "FAIL" not in text

    def test_expansive_delay(self, tmp_path):
        cfg = 'seed = 1\n[certify]\ntarget = "delay"\ngamma = 1.2\nsamples = 50\n'
        code, out = run(tmp_path, "certify", cfg)
        assert code == EXIT_NOT_CERTIFIED
        assert "NOT CERTIFIED" in (out / "certificate.txt").read_text()

    def test_exact_clm(self, tmp_path):
        cfg = UNSTABLE_2D + "[certify]\nsamples = 30\ntrials = 2\n"
        code, out = run(tmp_path, "certify", cfg)
        assert code == EXIT_OK
        assert "overall = CERTIFIED" in (out / "certificate.txt").read_text()

    def test_antiwindup_target(self, tmp_path):
        code, out = run(tmp_path, "certify", 'seed = 0\n[certify]\ntarget = "antiwindup"\n')
        assert code == EXIT_OK
        text = (out / "certificate.txt").read_text()
        assert "branch = global" in text

    def test_unknown_target(self, tmp_path):
        code, _ = run(tmp_path, "certify", 'seed = 0\n[certify]\ntarget = "nope"\n')
        assert code == EXIT_CONFIG


class TestDemos:
    def test_antiwindup(self, tmp_path):
        code, out = run(tmp_path, "demo-antiwindup")
        assert code == EXIT_OK
        text = (out / "antiwindup_report.txt").read_text()
        assert "branch = global" in text
        assert "t_prime = none" in text

    def test_cartpole_columns(self, tmp_path):
        cfg = "[cartpole]\nduration = 2.0\n"
        code, out = run(tmp_path, "demo-cartpole", cfg)
        assert code == EXIT_OK
        header = (out / "trace.csv").read_text().splitlines()[0].split(",")
        for col in ("t", "x_1", "u_0", "w_hat_0", "x_ref_1", "e_bar_0"):
            assert col in header
        assert report(out / "simulation_summary.txt")["diverged"] == "False"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nlsls", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("nlsls ")
