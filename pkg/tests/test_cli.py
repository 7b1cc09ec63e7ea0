import io
import json

import pytest

from stabfem.cli import RunConfig, ConfigError, cli_main
from stabfem.mesh import build_unit_square_mesh, format_mesh


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli_main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_check_passes_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        code, _, _ = run("check", "--n", "8", "--k", "1", "--stab", "bp", "--no-timestamp", "--out", str(path))
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    assert report["schema"] == 1 and report["passed"] and "timestamp" not in report


def test_timestamp_present_by_default():
    code, out, _ = run("infsup", "--n", "4")
    assert code == 0 and "timestamp" in json.loads(out)


def test_infsup_stabilization_helps():
    _, none, _ = run("infsup", "--n", "8", "--k", "1", "--stab", "none", "--no-timestamp")
    code, bp, _ = run("infsup", "--n", "8", "--k", "1", "--stab", "bp", "--no-timestamp")
    assert code == 0
    assert json.loads(bp)["gamma_stab"] > json.loads(none)["gamma_stab"]


def test_negative_mu_is_config_error():
    code, _, err = run("solve", "--problem", "nse", "--mu", "-1")
    assert code == 2 and "mu" in err


@pytest.mark.parametrize("argv, field", [
    (("solve", "--n", "0"), "n"),
    (("check", "--stab", "bh", "--k", "2"), "stab"),
    (("check", "--stab", "lps", "--n", "5"), "n"),
    (("coercivity", "--samples", "0"), "samples"),
    (("convergence", "--levels", "8,4"), "levels"),
    (("solve", "--delta0-p", "-0.5"), "delta0_p"),
])
def test_range_checks(argv, field):
    code, _, err = run(*argv)
    assert code == 2 and field in err


def test_argparse_rejects_unknown_choice():
    with pytest.raises(SystemExit) as exc:
        run("solve", "--stab", "pspg")
    assert exc.value.code == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mu": 0.5, "n": 4, "problem": "stokes"}))
    code, out, _ = run("solve", "--config", str(cfg), "--mu", "0.25", "--no-timestamp")
    rep = json.loads(out)
    assert code == 0 and rep["config"]["mu"] == 0.25 and rep["config"]["n"] == 4
    cfg.write_text(json.dumps({"mu": 0.5, "bogus": 1}))
    code, _, err = run("solve", "--config", str(cfg))
    assert code == 2 and "bogus" in err


def test_solve_outputs_fields():
    code, out, _ = run("solve", "--problem", "nse", "--mu", "0.05", "--n", "8", "--vstab", "supg", "--no-timestamp")
    rep = json.loads(out)
    assert code == 0 and rep["log"]["converged"] and "wall_time" not in rep["log"]
    assert len(rep["solution"]["u"]) == 2 * rep["solution"]["n_nodes"]


@pytest.mark.parametrize("problem", ["stokes", "gstokes", "oseen"])
def test_solve_problem_kinds(problem):
    code, out, _ = run("solve", "--problem", problem, "--n", "4", "--no-timestamp")
    assert code == 0 and json.loads(out)["problem"] == problem


def test_solve_from_mesh_file(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text(format_mesh(build_unit_square_mesh(4)))
    code, out, _ = run("solve", "--mesh", str(path), "--case", "stokes_trig", "--no-timestamp")
    assert code == 0 and json.loads(out)["config"]["mesh"] == str(path)
    code, _, err = run("solve", "--mesh", str(tmp_path / "missing.txt"))
    assert code == 2 and "mesh" in err
    path.write_text("3 1 0\n0 0\n1 0\n0 1\n0 1 5\n")
    code, _, err = run("solve", "--mesh", str(path))
    assert code == 2 and "line 5" in err


def test_convergence_csv(tmp_path):
    out = tmp_path / "t.csv"
    code, _, _ = run("convergence", "--case", "stokes_trig", "--levels", "4,8", "--out", str(out))
    lines = out.read_text().splitlines()
    assert code == 0 and lines[0] == "n,h,eu_l2,eu_h1,ep_l2,eoc_u_l2,eoc_u_h1,eoc_p_l2" and len(lines) == 3


def test_convergence_failure_exit_code():
    code, out, err = run("convergence", "--stab", "none", "--levels", "8,16")
    assert code == 1 and "near-null" in err
    assert out.splitlines()[0].startswith("n,h")


def test_lab_commands():
    code, out, _ = run("coercivity", "--n", "8", "--stab", "lps", "--samples", "20", "--no-timestamp")
    rep = json.loads(out)
    assert code == 0 and rep["report"]["beta_min"] > 0
    code, out, _ = run("signcheck", "--n", "4", "--samples", "5", "--no-timestamp")
    rep = json.loads(out)
    assert code == 0 and len(rep["report"]["margins"]) == 20
    code, _, err = run("signcheck", "--problem", "stokes")
    assert code == 2 and "problem" in err


def test_unstabilized_coercivity_is_verdict_failure():
    code, out, _ = run("coercivity", "--n", "4", "--stab", "none", "--samples", "5", "--no-timestamp")
    assert code == 1 and json.loads(out)["passed"] is False


def test_run_config_validation_direct():
    with pytest.raises(ConfigError, match="seed"):
        RunConfig(seed=-1).validate()
    with pytest.raises(ConfigError, match="radius_grid"):
        RunConfig(radius_grid=(1.0, -2.0)).validate()
