import math

import numpy as np
import pytest
from scipy import integrate

from relboltz.errors import InvalidArgument, InvalidModel
from relboltz.kernels import (CrossSectionModel, TruncationParams, angular_integral_A,
                              check_hard_lower_bound, check_jiang_condition, kernel_B, load_table,
                              truncated_kernel_Bn, truncated_sigma, truncation_convergence,
                              write_table)

ONE = CrossSectionModel.constant(1.0)
G2 = CrossSectionModel.power_law(1.0, 2.0, 0.0)
ZERO = CrossSectionModel.constant(0.0)


@pytest.mark.parametrize("g, theta, model, expected", [
    (0.0, 1.0, ONE, 0.0),
    (0.0, 0.3, G2, 0.0),
    (1.0, math.pi / 2, ONE, math.sqrt(2.0)),
    (2.0, 0.7, G2, 8.0 * math.sqrt(5.0)),
])
def test_kernel_B(g, theta, model, expected):
    assert kernel_B(g, theta, model) == pytest.approx(expected, rel=1e-14, abs=1e-300)


def test_kernel_B_angle_check():
    with pytest.raises(InvalidArgument):
        kernel_B(1.0, -0.1, ONE)


@pytest.mark.parametrize("model, g, p0, p10, n, expected", [
    (CrossSectionModel.constant(3.0), 1.0, 1.0, 1.0, 2, 0.0),
    (ONE, 1.0, 1.0, 1.0, 2, 1.0),
    (ONE, 0.4, 1.0, 1.0, 2, 0.0),
    (ONE, 1.0, 2.0, 1.5, 2, 0.0),
])
def test_truncated_sigma(model, g, p0, p10, n, expected):
    assert truncated_sigma(g, math.pi / 2, p0, p10, model, TruncationParams(n)) == expected


def test_truncated_sigma_small_angle():
    assert truncated_sigma(1.0, 0.4, 1.0, 1.0, ONE, TruncationParams(2)) == 0.0


def test_truncated_kernel_Bn():
    t2 = TruncationParams(2)
    assert truncated_kernel_Bn(1.0, math.pi / 2, 1.0, 1.0, ONE, t2) == pytest.approx(math.sqrt(2))
    assert truncated_kernel_Bn(1.0, math.pi / 2, 1.5, 1.0, ONE, t2) == 0.0
    big = TruncationParams(1000)
    for g, th in [(0.5, 0.3), (3.0, 2.0), (7.0, 1.1)]:
        assert truncated_kernel_Bn(g, th, 2.0, 3.0, ONE, big) == kernel_B(g, th, ONE)


@pytest.mark.parametrize("n", [0, -1, 2.5])
def test_truncation_params_validation(n):
    with pytest.raises(InvalidArgument):
        TruncationParams(n)


def test_model_validation():
    with pytest.raises(InvalidModel):
        CrossSectionModel.constant(-1.0)
    with pytest.raises(InvalidArgument):
        CrossSectionModel.power_law(1.0, -1.0)
    with pytest.raises(InvalidArgument):
        CrossSectionModel.tabulated([0, 1], [0, 1], np.ones((3, 2)))


@pytest.mark.parametrize("g, expected", [
    (0.0, 0.0),
    (1.0, 4 * math.pi * math.sqrt(2)),
    (3.0, 4 * math.pi * 3 * math.sqrt(10)),
])
def test_angular_integral_closed_form(g, expected):
    assert angular_integral_A(g, ONE) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_angular_integral_against_scipy():
    model = CrossSectionModel.power_law(0.7, 1.5, 2.0)
    for g in (0.2, 1.3, 6.0):
        ref, _ = integrate.quad(lambda t: g * math.sqrt(1 + g * g) * 0.7 * g**1.5
                                * math.sin(t) ** 3, 0, math.pi, epsabs=0, epsrel=1e-13)
        assert angular_integral_A(g, model) == pytest.approx(2 * math.pi * ref, rel=1e-10)


def test_table_round_trip(tmp_path):
    gg = np.array([0.0, 1.0, 4.0])
    tg = np.array([0.0, math.pi])
    vals = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    path = tmp_path / "sigma.tab"
    write_table(path, gg, tg, vals)
    model = load_table(path)
    assert model.family == "tabulated"
    np.testing.assert_array_equal(model.values, vals)
    # bilinear midpoint of the first cell
    assert model.sigma(0.5, math.pi / 2) == pytest.approx(2.5)
    # clamped beyond the last g row
    assert model.sigma(10.0, 0.0) == pytest.approx(5.0)


def test_table_malformed(tmp_path):
    path = tmp_path / "bad.tab"
    path.write_text("2 2\n0 1\n0 3.14\n1 2 3\n")
    with pytest.raises(InvalidArgument):
        load_table(path)


def test_jiang_zero_model():
    rep = check_jiang_condition(ZERO, 1.0, [5, 10])
    assert rep.jiang_values == [0.0, 0.0]
    assert rep.de_values == [0.0, 0.0]


def test_jiang_hard_sphere_decays():
    rep = check_jiang_condition(ONE, 1.0, [5, 10, 20, 40])
    j = rep.jiang_values
    assert all(b < a for a, b in zip(j, j[1:]))
    # A ~ O(p0) so the 1/p0^2 integral ~ 1/p0
    assert j[-1] * 40 == pytest.approx(j[-2] * 20, rel=0.01)
    assert max(rep.error_estimates) < 1e-8


def test_jiang_against_scipy_oracle():
    # p along z, integrate over the unit ball in (r, cos) with scipy
    p = 5.0
    p0 = math.sqrt(1 + p * p)

    def integrand(c, r):
        q = np.array([r * math.sqrt(1 - c * c), 0.0, r * c])
        q0 = math.sqrt(1 + r * r)
        s = 2 + 2 * (p0 * q0 - p * q[2])
        g = math.sqrt((s - 4) / 4)
        return 2 * math.pi * r * r * 4 * math.pi * g * math.sqrt(1 + g * g) / q0

    ref, _ = integrate.dblquad(integrand, 0, 1, -1, 1, epsabs=0, epsrel=1e-11)
    rep = check_jiang_condition(ONE, 1.0, [p])
    assert rep.jiang_values[0] == pytest.approx(ref / p0**2, rel=1e-8)


def test_hard_lower_bound():
    probes = [0.5, 1.0, 2.0, 5.0]
    expected = min(4 * math.pi * math.sqrt(1 + g * g) / g for g in probes)
    assert check_hard_lower_bound(ONE, probes) == pytest.approx(expected, rel=1e-12)
    assert check_hard_lower_bound(ZERO, probes) == 0.0
    # sigma tuned so that A(g) = g^2 at the table nodes
    sig = [g / (4 * math.pi * math.sqrt(1 + g * g)) for g in probes]
    tuned = CrossSectionModel.tabulated(probes, [0.0, math.pi], np.column_stack([sig, sig]))
    assert check_hard_lower_bound(tuned, probes) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(InvalidArgument):
        check_hard_lower_bound(ONE, [0.0, 1.0])


def test_truncation_convergence_bounded():
    vals = truncation_convergence(ONE, 2.0, 2.0, [2, 4, 8, 16, 512, 1024])
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert vals[0] > 0
    # beyond sup(p0 + p10) = 2 sqrt 5 only the g >= 1/n cut binds; the smallest g on the
    # node set pairs p1 = 0 with the innermost radial node, g = sqrt((p0 - 1) / 2)
    r_min = 1.0 + np.polynomial.legendre.leggauss(32)[0][0]
    g_min = math.sqrt((math.sqrt(1 + r_min**2) - 1) / 2)
    assert 512 < 1 / g_min < 1024
    assert vals[2] < 1e-3 * vals[0]
    assert vals[4] > 0.0
    assert vals[5] == 0.0


def test_truncation_convergence_hard_power_law():
    vals = truncation_convergence(G2, 2.0, 2.0, [2, 4, 8, 16])
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0


def test_truncation_convergence_argument_checks():
    with pytest.raises(InvalidArgument):
        truncation_convergence(ONE, 1.0, 1.0, [4, 2])
