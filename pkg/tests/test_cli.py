import json
import math

import numpy as np
import pytest

from relboltz import cli
from relboltz.errors import ConfigError
from relboltz.kernels import write_table

MINIMAL = """
[scenario]
name = tiny

[truncation]
n = 4
"""

TINY_RUN = """
[scenario]
name = tiny_relax

[truncation]
n = 5

[lattice]
p_max = 4.0
n_axis = 8

[quadrature]
n_theta = 4
n_psi = 4

[initial]
kind = double_juttner
drift = 0.3
amplitude = 0.01
truncate = no

[solver]
mode = march
T = 0.5
dt = 0.25
conservative = yes

[diagnostics]
checks = conservation_drift, apriori_moment_bound
"""


def test_minimal_config_defaults():
    cfg = cli.parse_config(MINIMAL)
    assert cfg.name == "tiny"
    assert cfg.truncation().n == 4
    assert cfg.lattice().p_max == 6.0 and cfg.lattice().n_axis == 16
    assert cfg.quadrature().n_theta == 16 and cfg.quadrature().n_psi == 16
    assert cfg.grid().homogeneous
    assert cfg.model.family == "constant" and cfg.model.c0 == 1.0
    sc = cfg.solver_config()
    assert (sc.mode, sc.T, sc.dt, sc.tol, sc.max_iter) == ("march", 1.0, 0.1, 1e-8, 30)
    assert cfg.checks == []
    assert cfg["run"]["seed"] == 0


def test_zero_n_names_the_key():
    with pytest.raises(ConfigError) as err:
        cli.parse_config(MINIMAL.replace("n = 4", "n = 0"))
    assert ("truncation.n", "must be an integer >= 1") in err.value.problems


def test_all_problems_reported():
    text = """
[scenario]
colour = blue

[lattice]
n_axis = many

[solver]
mode = sideways

[bogus]
x = 1
"""
    with pytest.raises(ConfigError) as err:
        cli.parse_config(text)
    keys = {k for k, _ in err.value.problems}
    assert {"scenario.colour", "scenario.name", "truncation.n", "lattice.n_axis", "solver.mode",
            "bogus"} <= keys


def test_unknown_check_rejected():
    with pytest.raises(ConfigError) as err:
        cli.parse_config(MINIMAL + "\n[diagnostics]\nchecks = h_theorem, vibes\n")
    assert err.value.problems == [("diagnostics.checks", "unknown check 'vibes'")]


def test_vector_values():
    cfg = cli.parse_config(MINIMAL + "\n[initial]\ndrift = 0.1 0.2 0.3\ncenter = 1\n")
    assert cfg["initial"]["drift"] == (0.1, 0.2, 0.3)
    assert cfg["initial"]["center"] == 1.0
    with pytest.raises(ConfigError):
        cli.parse_config(MINIMAL + "\n[initial]\ndrift = 0.1 0.2\n")


def test_tabulated_cross_section(tmp_path):
    write_table(tmp_path / "sigma.tab", [0.0, 2.0], [0.0, math.pi], [[1.0, 1.0], [3.0, 3.0]])
    text = MINIMAL + "\n[cross_section]\nfamily = tabulated\ntable = sigma.tab\n"
    path = tmp_path / "run.ini"
    path.write_text(text)
    cfg = cli.load_config(path)
    assert cfg.model.family == "tabulated"
    assert cfg.model.source == str(tmp_path / "sigma.tab")
    assert cfg.model.sigma(1.0, 0.3) == pytest.approx(2.0)
    with pytest.raises(ConfigError) as err:
        cli.parse_config(text, base_dir=tmp_path / "missing")
    assert err.value.problems[0][0] == "cross_section.table"


def test_list_and_describe():
    names = cli.list_scenarios()
    for name in ("juttner_stationary", "free_streaming", "hard_kernel_conditions",
                 "double_juttner_relaxation", "picard_contraction"):
        assert name in names
    assert "dH/dt = -D" in cli.describe("h_theorem")
    assert "juttner_stationary" in cli.describe("juttner_stationary")
    with pytest.raises(KeyError):
        cli.describe("no_such_thing")


def test_main_list_describe(capsys):
    assert cli.main(["list"]) == 0
    assert "free_streaming" in capsys.readouterr().out
    assert cli.main(["describe", "nope"]) == 2
    assert "unknown" in capsys.readouterr().err
    assert cli.main(["frobnicate"]) == 2


def test_main_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(MINIMAL.replace("n = 4", "n = 0"))
    assert cli.main(["run", str(bad)]) == 2
    assert "truncation.n" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "absent.ini")]) == 2


def test_check_kernel(tmp_path):
    out = tmp_path / "k"
    assert cli.main(["check-kernel", "hard_kernel_conditions", "--output-dir", str(out)]) == 0
    rows = (out / "kernel_conditions.csv").read_text().splitlines()
    assert rows[0] == "p,jiang,de,error"
    jiang = [float(r.split(",")[1]) for r in rows[1:]]
    assert len(jiang) == 4 and all(b < a for a, b in zip(jiang, jiang[1:]))
    reports = json.loads((out / "reports.json").read_text())
    assert reports[0]["name"] == "kernel_conditions" and reports[0]["passed"]


def test_run_writes_outputs_and_is_deterministic(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.ini"
    cfg_path.write_text(TINY_RUN)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert cli.main(["run", str(cfg_path), "--output-dir", str(out), "--seed", "7",
                         "--threads", "1"]) == 0
        outs.append(out)
    table = capsys.readouterr().out
    assert "apriori_moment_bound" in table and "FAIL" not in table
    for name in ("moments.csv", "reports.json", "final.rbef"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    header = (outs[0] / "moments.csv").read_text().splitlines()[0]
    assert header == "t,mass,px,py,pz,energy,inertia,H,absLogMass,D"


def test_failing_check_gives_exit_1(tmp_path):
    text = TINY_RUN.replace("conservative = yes", "conservative = no").replace(
        "checks = conservation_drift, apriori_moment_bound",
        "checks = conservation_drift\nconservation_bound = 1e-15")
    cfg = cli.parse_config(text)
    assert cli.run_scenario(cfg, out_dir=tmp_path) == 1


def test_non_convergence_gives_exit_3(tmp_path, capsys):
    text = """
[scenario]
name = stubborn

[truncation]
n = 6

[lattice]
p_max = 2.0
n_axis = 5

[quadrature]
n_theta = 2
n_psi = 2

[initial]
kind = double_juttner

[solver]
mode = picard_window
T = 0.2
dt = 0.1
max_iter = 1
tol = 1e-14
entropy = no
"""
    assert cli.run_scenario(cli.parse_config(text), out_dir=tmp_path) == 3
    err = capsys.readouterr().err
    assert str(tmp_path / "trace.csv") in err
    assert (tmp_path / "trace.csv").read_text().startswith("iter,distance,ratio")


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.run_scenario(cli.parse_config(TINY_RUN), out_dir=blocker / "sub") == 3


@pytest.mark.slow
def test_shipped_juttner_stationary(tmp_path):
    assert cli.main(["run", "juttner_stationary", "--output-dir", str(tmp_path)]) == 0
    rows = np.genfromtxt(tmp_path / "moments.csv", delimiter=",", names=True)
    assert np.all(np.abs(rows["D"]) < 1e-20)


@pytest.mark.slow
def test_shipped_free_streaming(tmp_path):
    assert cli.main(["run", "free_streaming", "--output-dir", str(tmp_path)]) == 0
    rows = np.genfromtxt(tmp_path / "moments.csv", delimiter=",", names=True)
    assert np.ptp(rows["mass"]) <= 1e-8 * rows["mass"][0]
