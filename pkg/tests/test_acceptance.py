"""Desk-scale acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the
"acceptance criteria" section at the end of the pytest run.
Run just this file with ``pytest tests/test_acceptance.py -v``.
"""
import json
import math

import numpy as np
import pytest

from relboltz import cli
from relboltz import diagnostics as dg
from relboltz.collision import (AngularQuadrature, CollisionInvariant, collision_field,
                                entropy_production, weak_form)
from relboltz.kernels import (CrossSectionModel, TruncationParams, check_jiang_condition,
                              truncation_convergence)
from relboltz.kinematics import collide_batch, energy, invariant_g, invariant_s
from relboltz.phase_space import (MomentumLattice, SpatialGrid, make_initial, read_checkpoint,
                                  read_moments_csv)
from relboltz.solver import (SolverConfig, picard_map, solve_fixed_point, solve_march,
                             trajectory_records)

ONE = CrossSectionModel.constant(1.0)
HARD = CrossSectionModel.power_law(1.0, 2.0)  # sigma = g^2
HOM = SpatialGrid()
INVARIANTS = {
    "1": CollisionInvariant(b0_bar=1.0),
    "px": CollisionInvariant(b=(1.0, 0.0, 0.0)),
    "py": CollisionInvariant(b=(0.0, 1.0, 0.0)),
    "pz": CollisionInvariant(b=(0.0, 0.0, 1.0)),
    "p0": CollisionInvariant(c0=1.0),
}

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


# ---------------------------------------------------------------------------
# shared runs

@pytest.fixture(scope="module")
def relaxation(tmp_path_factory):
    """The shipped relaxation scenario, with a checkpoint at every step."""
    out = tmp_path_factory.mktemp("relaxation")
    cfg = cli.load_config(cli.scenario_path("double_juttner_relaxation"),
                          {("solver", "checkpoint_every"): 1})
    status = cli.run_scenario(cfg, out)
    reports = {r["name"]: r for r in json.loads((out / "reports.json").read_text())}
    fields = [read_checkpoint(p) for p in sorted(out.glob("checkpoint_*.rbef"))]
    return status, reports, read_moments_csv(out / "moments.csv"), fields


@pytest.fixture(scope="module")
def picard_window():
    """Fixed point of the shipped Picard scenario, capped at 30 iterations."""
    cfg = cli.load_config(cli.scenario_path("picard_contraction"),
                          {("solver", "max_iter"): 30})
    f0n = cli._initial_field(cfg)
    model, trunc, quad, scfg = cfg.model, cfg.truncation(), cfg.quadrature(), cfg.solver_config()
    traj, trace = solve_fixed_point(f0n, model, trunc, quad, scfg)
    return cfg, f0n, traj, trace


# ---------------------------------------------------------------------------
# criteria

def test_c01_kinematic_invariants(acceptance):
    rng = np.random.default_rng(1)
    m = 100_000
    p = rng.uniform(-10, 10, (m, 3))
    p1 = rng.uniform(-10, 10, (m, 3))
    theta = np.arccos(rng.uniform(-1, 1, m))
    psi = rng.uniform(0, 2 * np.pi, m)
    pp, pp1 = collide_batch(p, p1, theta, psi)
    e_in = energy(p) + energy(p1)
    e_out = energy(pp) + energy(pp1)
    mom = np.max(np.linalg.norm(pp + pp1 - p - p1, axis=1) / e_in)
    en = np.max(np.abs(e_out - e_in) / e_in)
    g_err = s_err = 0.0
    for i in range(m):
        g = invariant_g(p[i], p1[i])
        g_err = max(g_err, abs(invariant_g(pp[i], pp1[i]) - g) / g)
        s = invariant_s(p[i], p1[i])
        s_err = max(s_err, abs(s - 4 - 4 * g * g) / s)
    ok = mom <= 1e-12 and en <= 1e-12 and g_err <= 1e-10 and s_err <= 1e-12
    acceptance("criterion 01 kinematic invariants", ok,
               f"momentum {mom:.2e}, energy {en:.2e}, g {g_err:.2e}, s {s_err:.2e} "
               f"over {m} draws")
    assert ok


def test_c02_detailed_balance(acceptance):
    lat = MomentumLattice(6.0, 16)
    f = make_initial("juttner", lat, HOM, representation="closed-form", beta=1.0)
    cf = collision_field(f, ONE, TruncationParams(8), AngularQuadrature(16, 16))
    rel = float(np.max(np.abs(cf.q))) / cf.gain_scale
    ok = rel <= 1e-12
    acceptance("criterion 02 detailed balance", ok, f"max|Q| / max gain = {rel:.2e}")
    assert ok


@pytest.mark.slow
def test_c03_collision_invariants(acceptance):
    worst = 0.0
    for n_axis in (8, 16):
        lat = MomentumLattice(6.0, n_axis)
        f = make_initial("double_juttner", lat, HOM, beta=1.0, drift=0.5)
        for nq in (4, 8, 16):
            quad = AngularQuadrature(nq, nq)
            for psi in INVARIANTS.values():
                val, scale = weak_form(f, psi, ONE, TruncationParams(8), quad, return_scale=True)
                worst = max(worst, abs(val) / scale)
    ok = worst <= 1e-12
    acceptance("criterion 03 collision invariants", ok,
               f"max |weak form| / L1 scale = {worst:.2e} (lattice 8^3, 16^3; angles 4..16)")
    assert ok


@pytest.mark.slow
def test_c04_h_theorem(relaxation, acceptance):
    status, reports, records, _ = relaxation
    rep = reports["h_theorem"]
    H = np.array([r.h_value for r in records])
    step = float(np.max(np.diff(H) / np.abs(H[:-1])))
    ok = rep["passed"] and records[-1].time == pytest.approx(5.0)
    acceptance("criterion 04 H-theorem", ok,
               f"max relative step increase {step:.2e}, |dH/dt + D| / D = {rep['measured']:.3f}")
    assert ok


@pytest.mark.slow
def test_c05_contraction(picard_window, acceptance):
    _, _, _, trace = picard_window
    ratios = [r for r in trace.ratios if not math.isnan(r)]
    worst = max(ratios)
    ok = worst <= 0.55 and trace.iterations <= 30 and trace.distances[-1] < 1e-8
    acceptance("criterion 05 contraction", ok,
               f"{trace.iterations} iterations, max ratio {worst:.3f}, "
               f"final distance {trace.distances[-1]:.1e}")
    assert ok


@pytest.mark.slow
def test_c06_positivity(picard_window, relaxation, acceptance):
    cfg, f0n, traj, _ = picard_window
    image = picard_map(traj, f0n, cfg.model, cfg.truncation(), cfg.quadrature(),
                       cfg.solver_config())
    fields = relaxation[3]
    march_min = min(float(f.values.min()) for f in fields)
    rel = image.min_value() / image.max_value()
    ok = traj.min_value() >= 0 and march_min >= 0 and rel >= -1e-12 and len(fields) == 20
    acceptance("criterion 06 positivity", ok,
               f"fixed point min {traj.min_value():.2e}, march min {march_min:.2e}, "
               f"unclamped image min/max {rel:.2e}")
    assert ok


def test_c07_inertia(acceptance):
    lat = MomentumLattice(4.0, 8)
    grid = SpatialGrid("periodic", 4.0, 8)
    f0 = make_initial("gaussian_x_juttner_p", lat, grid, representation="closed-form",
                      beta=1.0, width=0.8)
    # horizon T = 1 against a box width of 8 at speed < 1
    cfg = SolverConfig("march", T=1.0, dt=0.1, record_entropy=False)
    fields, recs = solve_march(f0, CrossSectionModel.constant(0.0), TruncationParams(8),
                               AngularQuadrature(2, 2), cfg)
    run = dg.run_from_fields(fields, recs)
    ident = dg.inertia_identity_check(run, rtol=0.02)
    gron = dg.gronwall_inertia_bound(run, 1.0)
    ok = ident.passed and gron.passed
    acceptance("criterion 07 inertia", ok,
               f"identity mismatch {ident.measured:.2e}, sup inertia {gron.measured:.4g} <= "
               f"{gron.details['rhs']:.4g}")
    assert ok


@pytest.mark.slow
def test_c08_apriori_bound(relaxation, picard_window, tmp_path, acceptance):
    results = {"double_juttner_relaxation": relaxation[1]["apriori_moment_bound"]["passed"]}
    for name in ("juttner_stationary", "free_streaming"):
        out = tmp_path / name
        cfg = cli.load_config(cli.scenario_path(name))
        assert "apriori_moment_bound" in cfg.checks
        cli.run_scenario(cfg, out)
        reports = {r["name"]: r for r in json.loads((out / "reports.json").read_text())}
        results[name] = reports["apriori_moment_bound"]["passed"]
    # same computation run_scenario performs for a picard_window scenario
    cfg, f0n, traj, _ = picard_window
    recs = trajectory_records(traj, cfg.model, cfg.truncation(), cfg.quadrature(), entropy=False)
    rep = dg.apriori_moment_bound(dg.run_from_fields(traj.fields, recs), cfg.solver_config().T, f0n)
    results["picard_contraction"] = rep.passed
    solving = [s for s in cli.list_scenarios()
               if cli.load_config(cli.scenario_path(s))["solver"]["mode"] != "none"]
    ok = sorted(results) == sorted(solving) and all(results.values())
    acceptance("criterion 08 a-priori bound", ok,
               ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in sorted(results.items())))
    assert ok


def _separation(model):
    rep = check_jiang_condition(model, 1.0, [5, 10, 20, 40])
    j, d = rep.jiang_values, rep.de_values
    ok = (all(b < a for a, b in zip(j, j[1:])) and j[-1] / j[0] <= 0.2
          and 0.8 <= d[-1] / d[-2] <= 1.25)
    detail = (f"jiang {', '.join(f'{v:.4g}' for v in j)}; last/first {j[-1] / j[0]:.3f}; "
              f"de last/penultimate {d[-1] / d[-2]:.4f}")
    return ok, detail


def test_c09_condition_separation(acceptance):
    ok, detail = _separation(HARD)
    acceptance("criterion 09 condition separation (sigma = g^2)", ok, detail)
    assert ok


def test_c09_condition_separation_constant_sigma(acceptance):
    ok, detail = _separation(ONE)
    acceptance("criterion 09 companion (sigma = 1)", ok, detail)
    assert ok


def test_c10_truncation_convergence(acceptance):
    ns = [2, 4, 8, 16, 1024]
    bounded = truncation_convergence(ONE, 2.0, 2.0, ns)
    hard = truncation_convergence(HARD, 2.0, 2.0, [2, 4, 8, 16])
    ok = (all(b <= a for a, b in zip(bounded, bounded[1:])) and bounded[-1] == 0.0
          and bounded[0] > 0 and all(b < a for a, b in zip(hard, hard[1:])))
    acceptance("criterion 10 truncation convergence", ok,
               f"sigma = 1 at n = {ns}: {', '.join(f'{v:.3g}' for v in bounded)}; "
               f"sigma = g^2: {', '.join(f'{v:.3g}' for v in hard)}")
    assert ok


@pytest.mark.slow
def test_c11_tail_convergence(acceptance):
    lat = MomentumLattice(6.0, 16)
    f = make_initial("juttner", lat, HOM, beta=3.0)
    rep = dg.loss_tail_convergence(f, HARD, TruncationParams(64), 1.0, [2, 3, 4, 5],
                                   AngularQuadrature(8, 8))
    ok = rep.passed and rep.details["strictly_decreasing"]
    acceptance("criterion 11 tail convergence", ok,
               f"tails {', '.join(f'{v:.3g}' for v in rep.details['tails'])}; "
               f"final/initial {rep.measured:.2e}")
    assert ok


def _rates(n_axis, n_quad):
    """Relative mass/energy production and the entropy-identity mismatch at t = 0."""
    lat = MomentumLattice(6.0, n_axis)
    f = make_initial("double_juttner", lat, HOM, beta=1.0, drift=0.5)
    trunc, quad = TruncationParams(7), AngularQuadrature(n_quad, n_quad)
    q = collision_field(f, ONE, trunc, quad).q[0]
    fv = f.values[0]
    dv = lat.cell_volume
    p0 = lat.energies().reshape(lat.shape)
    drift = max(abs(np.sum(q)) / np.sum(fv), abs(np.sum(q * p0)) / np.sum(fv * p0))
    dHdt = float(np.sum((1.0 + np.log(fv)) * q) * dv)
    D = entropy_production(f, ONE, trunc, quad)
    return drift, abs(dHdt + D) / D


@pytest.mark.slow
def test_c12_refinement(acceptance):
    coarse = _rates(8, 8)
    fine = _rates(16, 16)
    gains = [c / f for c, f in zip(coarse, fine)]
    ok = all(g >= 2.0 for g in gains)
    acceptance("criterion 12 refinement", ok,
               f"drift {coarse[0]:.3g} -> {fine[0]:.3g} (x{gains[0]:.2f}), "
               f"|dH/dt + D|/D {coarse[1]:.3g} -> {fine[1]:.3g} (x{gains[1]:.2f})")
    assert ok
