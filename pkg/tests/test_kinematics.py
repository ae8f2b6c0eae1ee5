import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relboltz.errors import DegenerateCollision, InvalidArgument
from relboltz.kinematics import (Momentum, collide_batch, energy, invariant_g, invariant_s,
                                 post_collision, scattering_angle, transition_symmetry_check)

comp = st.floats(-20.0, 20.0, allow_nan=False)
vec = st.tuples(comp, comp, comp)
theta_st = st.floats(0.0, math.pi)
psi_st = st.floats(0.0, 2 * math.pi, exclude_max=True)


def minkowski_s(p, p1):
    # independent form: s = 2 + 2 (p0 p10 - p . p1)
    p, p1 = np.asarray(p, float), np.asarray(p1, float)
    return 2.0 + 2.0 * (math.sqrt(1 + p @ p) * math.sqrt(1 + p1 @ p1) - p @ p1)


@pytest.mark.parametrize("p, expected", [
    ((0, 0, 0), 1.0),
    ((1, 1, 1), 2.0),
    ((0, 3, 4), math.sqrt(26.0)),
])
def test_energy_examples(p, expected):
    assert energy(p) == pytest.approx(expected, rel=1e-15)


def test_energy_rejects_non_finite():
    with pytest.raises(InvalidArgument):
        energy((0.0, math.nan, 1.0))
    with pytest.raises(InvalidArgument):
        Momentum((math.inf, 0, 0))


@pytest.mark.parametrize("p, p1, s, g", [
    ((0.3, -1.0, 2.0), (0.3, -1.0, 2.0), 4.0, 0.0),
    ((1, 0, 0), (-1, 0, 0), 8.0, 1.0),
    ((0, 0, 0), (0, 0, 0), 4.0, 0.0),
])
def test_invariant_examples(p, p1, s, g):
    assert invariant_s(p, p1) == pytest.approx(s, rel=1e-14)
    assert invariant_g(p, p1) == pytest.approx(g, abs=1e-14)


@given(vec, vec)
def test_s_equals_4_plus_4g2(p, p1):
    g = invariant_g(p, p1)
    s = minkowski_s(p, p1)
    assert abs(s - 4 - 4 * g * g) <= 1e-12 * s
    assert invariant_s(p, p1) == pytest.approx(s, rel=1e-9)


def test_forward_scattering_is_identity():
    p, p1 = np.array([0.5, -2.0, 1.0]), np.array([3.0, 0.1, -0.7])
    out = post_collision(p, p1, 0.0, 1.3)
    np.testing.assert_allclose(out.p_prime.p, p, atol=1e-13)
    np.testing.assert_allclose(out.p1_prime.p, p1, atol=1e-13)


def test_head_on_backscatter():
    out = post_collision((1, 0, 0), (-1, 0, 0), math.pi, 0.0)
    np.testing.assert_allclose(out.p_prime.p, [-1, 0, 0], atol=1e-14)
    np.testing.assert_allclose(out.p1_prime.p, [1, 0, 0], atol=1e-14)


def test_post_collision_argument_checks():
    with pytest.raises(InvalidArgument):
        post_collision((1, 0, 0), (0, 0, 0), 4.0, 0.0)
    with pytest.raises(InvalidArgument):
        post_collision((1, 0, 0), (0, 0, 0), 1.0, 2 * math.pi)
    with pytest.raises(DegenerateCollision):
        post_collision((1, 2, 3), (1, 2, 3), 1.0, 0.0)
    # g = 0 with theta = 0 is the identity, not an error
    out = post_collision((1, 2, 3), (1, 2, 3), 0.0, 0.0)
    np.testing.assert_array_equal(out.p_prime.p, [1, 2, 3])


@settings(max_examples=300)
@given(vec, vec, theta_st, psi_st)
def test_collision_conserves_and_keeps_g(p, p1, theta, psi):
    p, p1 = np.array(p), np.array(p1)
    if invariant_g(p, p1) < 1e-6:
        return
    out = post_collision(p, p1, theta, psi)
    q, q1 = out.p_prime.p, out.p1_prime.p
    scale = np.abs(p).sum() + np.abs(p1).sum() + 1.0
    np.testing.assert_allclose(q + q1, p + p1, atol=1e-12 * scale)
    e_in, e_out = energy(p) + energy(p1), energy(q) + energy(q1)
    assert abs(e_out - e_in) <= 1e-12 * e_in
    g_in = invariant_g(p, p1)
    assert abs(invariant_g(q, q1) - g_in) <= 1e-10 * max(g_in, 1.0)


@pytest.mark.parametrize("p, p1, pp, expected", [
    ((0.4, 1.0, -2.0), (3.0, 0.0, 1.0), (0.4, 1.0, -2.0), 0.0),
    ((1, 0, 0), (-1, 0, 0), (-1, 0, 0), math.pi),
])
def test_scattering_angle_examples(p, p1, pp, expected):
    assert scattering_angle(p, p1, pp) == pytest.approx(expected, abs=1e-7)


def test_scattering_angle_degenerate():
    with pytest.raises(DegenerateCollision):
        scattering_angle((1, 1, 1), (1, 1, 1), (0, 0, 0))


@settings(max_examples=200)
@given(vec, vec, st.floats(0.05, math.pi - 0.05), psi_st)
def test_scattering_angle_round_trip(p, p1, theta, psi):
    if invariant_g(p, p1) < 1e-2:
        return
    out = post_collision(p, p1, theta, psi)
    assert scattering_angle(p, p1, out.p_prime.p) == pytest.approx(theta, abs=1e-6)


def test_transition_symmetry_examples(rng):
    assert transition_symmetry_check((1, 0, 0), (-1, 0, 0), math.pi / 2, 0.0)
    p = rng.uniform(-10, 10, (10_000, 3))
    p1 = rng.uniform(-10, 10, (10_000, 3))
    th = rng.uniform(0, math.pi, 10_000)
    ps = rng.uniform(0, 2 * math.pi, 10_000)
    assert all(transition_symmetry_check(*args) for args in zip(p, p1, th, ps))


def test_collide_batch_matches_scalar(rng):
    p = rng.normal(size=(50, 3)) * 3
    p1 = rng.normal(size=(50, 3)) * 3
    th = rng.uniform(0, math.pi, 50)
    ps = rng.uniform(0, 2 * math.pi, 50)
    bp, bp1 = collide_batch(p, p1, th, ps)
    for k in range(50):
        out = post_collision(p[k], p1[k], th[k], ps[k])
        np.testing.assert_allclose(bp[k], out.p_prime.p, atol=1e-13)
        np.testing.assert_allclose(bp1[k], out.p1_prime.p, atol=1e-13)
