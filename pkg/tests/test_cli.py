import subprocess
import sys
from pathlib import Path

import pytest

from parnewt import report
from parnewt.cli import SpecError, load_spec, main, parse_spec

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"

BASE = """
[grid]
dim = {dim}
nodes = 11
horizon = 1.0
steps = 11

[coefficients]
a = {a}
f = "{f}"
lambda = {lam}
p = {p}
"""


def write(tmp_path, text=None, **kw):
    opts = {"dim": 1, "a": '"1 + 0.5*sin(u)"', "f": "u*xi1 + x1*(1 - x1)", "lam": 2.0, "p": 4.0}
    opts.update(kw)
    path = tmp_path / "spec.toml"
    path.write_text(BASE.format(**opts) + (text or ""))
    return path


def rejected(path):
    with pytest.raises(SpecError) as err:
        load_spec(path)
    return err.value


def test_p_boundary_in_two_dimensions_rejected(tmp_path):
    err = rejected(write(tmp_path, dim=2, a='[["1", "0"], ["0", "1"]]', p=4.0))
    assert err.hypothesis == "H4" and "H4" in str(err)


def test_p_four_accepted_in_one_dimension(tmp_path):
    spec = load_spec(write(tmp_path))
    assert spec.coefficients.p == 4.0 and spec.grid.dim == 1


def test_lambda_zero_names_h3(tmp_path):
    err = rejected(write(tmp_path, lam=0.0))
    assert err.hypothesis == "H3" and "H3" in str(err)


def test_asymmetric_matrix_names_h3(tmp_path):
    err = rejected(write(tmp_path, dim=2, a='[["1", "0.2"], ["0", "1"]]', p=5.0))
    assert err.hypothesis == "H3" and "symmetric" in str(err)


def test_ellipticity_violated_along_start_names_h3(tmp_path):
    err = rejected(write(tmp_path, a='"0.2"', lam=2.0))
    assert "H3" in str(err)


def test_toml_error_reports_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[grid]\ndim = 1\nnodes = = 3\n")
    assert "line 3" in str(rejected(path))


def test_expression_error(tmp_path):
    assert "cannot parse" in str(rejected(write(tmp_path, f="u*(xi1")))


@pytest.mark.parametrize("extra, match", [
    ("[newton]\ntolerance = 1e-8\n", "unknown keys"),
    ("[plot]\nx = 1\n", "unknown section"),
    ("[perturbation]\nf_tilde = \"1\"\nepsilons = [0.1, 0.01]\n", "increasing"),
    ("[perturbation]\nf_tilde = \"1\"\nepsilons = [-0.1]\n", "positive"),
    ("[vmo]\nradii = [0.01]\n", "spacing"),
    ("[mms]\nu_exact = \"t*x1\"\n", "parabolic boundary"),
    ("[output]\nseed = -1\n", "64-bit"),
])
def test_invalid_spec(extra, match, tmp_path):
    assert match in str(rejected(write(tmp_path, extra)))


def test_missing_key():
    with pytest.raises(SpecError, match="missing"):
        parse_spec({"grid": {"dim": 1, "nodes": 11, "horizon": 1.0}})


def run_cli(args, tmp_path):
    return main(list(args) + ["--out", str(tmp_path)])


def status(tmp_path):
    return report.read_csv(tmp_path / "status.csv")[1][0]


def test_solve_writes_outputs(tmp_path):
    assert run_cli(["solve", "--spec", str(PROBLEMS / "semilinear_1d.toml")], tmp_path) == 0
    assert (tmp_path / "solution.csv").exists() and (tmp_path / "newton_trace.csv").exists()
    assert status(tmp_path)[:3] == ["solve", "ok", "0"]


def test_spec_error_exit_code(tmp_path):
    code = run_cli(["solve", "--spec", str(write(tmp_path, lam=0.0))], tmp_path / "o")
    assert code == 2
    assert status(tmp_path / "o")[1] == "spec_error" and "H3" in status(tmp_path / "o")[3]


def test_analysis_failure_exit_code(tmp_path):
    path = write(tmp_path, "[newton]\nmax_iter = 1\n")
    assert run_cli(["solve", "--spec", str(path)], tmp_path / "o") == 1
    row = status(tmp_path / "o")
    assert row[1] == "analysis_failure" and row[3].startswith("max_iter")


def test_missing_section_for_subcommand(tmp_path):
    assert run_cli(["perturb-sweep", "--spec", str(write(tmp_path))], tmp_path / "o") == 2


def test_vmo_zero_for_x_independent_coefficient(tmp_path):
    path = write(tmp_path, "[vmo]\nradii = [0.1, 0.2, 0.4]\n")
    assert run_cli(["vmo", "--spec", str(path)], tmp_path / "o") == 0
    header, rows = report.read_csv(tmp_path / "o" / "vmo.csv")
    assert header == ["R", "modulus", "kind"]
    assert [float(r[1]) for r in rows] == [0.0, 0.0, 0.0]


def test_vmo_jump_coefficient_positive(tmp_path):
    path = write(tmp_path, "[vmo]\nradii = [0.1, 0.2]\n", a='"1.5 + 0.5*sign(x1 - 0.5)"')
    assert run_cli(["vmo", "--spec", str(path)], tmp_path / "o") == 0
    _, rows = report.read_csv(tmp_path / "o" / "vmo.csv")
    assert all(float(r[1]) > 0 for r in rows)


def test_check_hypotheses_lists_all(tmp_path):
    assert run_cli(["check-hypotheses", "--spec", str(PROBLEMS / "semilinear_1d.toml")], tmp_path) == 0
    header, rows = report.read_csv(tmp_path / "hypotheses.csv")
    assert header == ["hypothesis", "status", "value", "detail"]
    names = {r[0]: r[1] for r in rows}
    assert {"H1", "H2", "H3", "H4"} <= set(names)
    assert all(names[h] == "pass" for h in ("H1", "H2", "H3", "H4"))


def test_perturb_sweep_footer(tmp_path):
    assert run_cli(["perturb-sweep", "--spec", str(PROBLEMS / "quasilinear_1d.toml")], tmp_path) == 0
    header, rows = report.read_csv(tmp_path / "stability.csv")
    assert header == ["epsilon", "deviation_w21p", "sensitivity_error", "converged"]
    assert rows[-1][0] == "slope" and 0.9 <= float(rows[-1][1]) <= 1.1


def test_newton_trace_and_mms(tmp_path):
    spec = str(PROBLEMS / "quasilinear_1d.toml")
    assert run_cli(["newton-trace", "--spec", spec], tmp_path) == 0
    _, rows = report.read_csv(tmp_path / "newton_trace.csv")
    assert rows[-1][0] == "order" and 1.7 <= float(rows[-1][2]) <= 2.3
    assert run_cli(["mms-verify", "--spec", spec], tmp_path) == 0
    _, rows = report.read_csv(tmp_path / "mms.csv")
    assert float(rows[0][2]) < 1e-2


def test_seed_override_validated(tmp_path):
    with pytest.raises(SystemExit):
        main(["solve", "--spec", str(write(tmp_path)), "--seed", "abc"])
    assert run_cli(["solve", "--spec", str(write(tmp_path)), "--seed", str(2**64)], tmp_path / "o") == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "parnewt.cli", "solve", "--spec", str(write(tmp_path)),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
