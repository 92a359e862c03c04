import io
import subprocess
import sys

import pytest
import yaml

from stationary_bvp.cli import dispatch


def run(argv):
    buf = io.StringIO()
    code = dispatch(argv, stdout=buf)
    return code, (yaml.safe_load(buf.getvalue()) if buf.getvalue() else None), buf.getvalue()


class TestVerbs:
    """Documented invocations of each verb."""

    def test_check_ellipticity_builtin(self):
        code, rep, _ = run(["check-ellipticity", "--builtin", "P1", "--eta", "1,0"])
        assert code == 0
        sample = rep["result"]["samples"][0]
        assert sample["properly_elliptic"] is True and sample["complementing"] is True
        assert rep["result"]["l_plus"] == "(z - I)**8"

    def test_check_ellipticity_spec_file(self, tmp_path):
        f = tmp_path / "lap.bvp"
        f.write_text("system laplace\nunknowns: f\ninterior:\nrow: xi0^2 + xi1^2 + xi2^2\nboundary:\nrow: 1\n")
        code, rep, _ = run(["check-ellipticity", "--spec", str(f)])
        assert code == 0 and len(rep["result"]["samples"]) == 3

    def test_residual_minkowski(self):
        code, rep, _ = run(["residual", "--oracle", "minkowski", "--grid", "16,8"])
        assert code == 0
        for row in rep["result"]["residual"].values():
            assert all(v == 0.0 for v in row.values())

    def test_solve_from_minkowski(self, tmp_path):
        code, rep, _ = run(["solve", "--boundary", "from-oracle 0.1", "--init", "builtin:minkowski",
                            "--grid", "16,8", "--steps", "2", "--out", str(tmp_path)])
        assert code == 0 and rep["result"]["converged"] is True
        assert rep["result"]["final_residual"] <= 1e-9
        assert (tmp_path / "solution" / "g.csv").is_file() and (tmp_path / "report.yaml").is_file()

    def test_oracle_then_norms(self, tmp_path):
        code, _, _ = run(["oracle", "--family", "schwarzschild", "--grid", "16,8", "--out", str(tmp_path)])
        assert code == 0
        code, rep, _ = run(["norms", "--input", str(tmp_path / "fields")])
        assert code == 0 and rep["result"]["grid"][:2] == [16, 8]

    def test_boundary_map(self):
        code, rep, _ = run(["boundary-map", "--grid", "16,8"])
        assert code == 0 and rep["passed"] is True


class TestReports:
    """Determinism, configuration precedence and usage errors."""

    def test_deterministic(self):
        argv = ["residual", "--oracle", "kerr", "--mass", "0.1", "--spin", "0.05", "--grid", "16,8"]
        assert run(argv)[2] == run(argv)[2]

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("[global]\ngrid = 12,6\nrmax = 10\n[residual]\noracle = schwarzschild\n")
        _, rep, _ = run(["residual", "--config", str(cfg)])
        assert rep["config"]["grid"] == "12,6" and rep["config"]["oracle"] == "schwarzschild"
        assert float(rep["config"]["rmax"]) == 10.0
        _, rep, _ = run(["residual", "--config", str(cfg), "--grid", "16,8"])
        assert rep["config"]["grid"] == "16,8"

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("[global]\nresolution = 3\n")
        assert run(["residual", "--config", str(cfg)])[0] == 2

    @pytest.mark.parametrize("argv", [["frobnicate"], ["residual", "--grid", "abc"], ["residual", "--bogus"]])
    def test_usage_errors(self, argv):
        assert run(argv)[0] == 2

    def test_console_entry(self):
        out = subprocess.run([sys.executable, "-m", "stationary_bvp", "check-ellipticity", "--builtin", "Phat",
                              "--eta", "3/5,4/5"], capture_output=True, text=True)
        assert out.returncode == 0 and "complementing: true" in out.stdout
