import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from da_forge import umeasure as um
from da_forge.errors import BudgetError, ParameterError
from da_forge.torus import BoxChart, nearest_offset


@pytest.fixture(scope="module")
def box(pve_params):
    return pve_params.chart


@pytest.fixture(scope="module")
def seed(g_sys, box):
    # a short leaf through the deformation box, off its centre
    x = np.asarray(box.center) + box.frame.vectors @ np.array([0.3, 0.2, 0.1]) * box.half_width_inner
    return um.seed_curve(g_sys, x, 0.05)


def _wide_box(frame, center=(0.5, 0.5, 0.5)):
    return BoxChart(center, frame, 0.07, 0.072)


def test_linear_image_length_is_exact(g_sys, box):
    lin = g_sys.linearized()
    cur = um.seed_curve(lin, np.asarray(box.center) + 0.1, 0.05)
    rate = um.strong_unstable_rate(lin)
    img = um.iterate_curve(cur, 1, 0.05)
    assert img.arclength == pytest.approx(rate * cur.arclength, rel=1e-10)
    lr = um.length_log_ratios(cur, 6)
    assert np.allclose(lr, np.arange(7) * math.log(rate), rtol=0, atol=1e-10)


def test_seed_chords_follow_the_field(g_sys, seed):
    mids = seed.lifted[:-1] + 0.5 * seed.chords
    field = um.unstable_field(g_sys, mids % 1.0)
    t = seed.chords / np.linalg.norm(seed.chords, axis=1, keepdims=True)
    assert np.min(np.abs(np.einsum("ij,ij->i", t, field))) > 1 - 1e-12
    assert seed.arclength == pytest.approx(0.05, rel=1e-9)
    assert np.array_equal(seed.point_at(0.0), seed.vertices[0])


def test_refinement_converges(seed):
    a = um.iterate_curve(seed, 1, 0.02)
    b = um.iterate_curve(seed, 1, 0.01)
    assert abs(a.arclength - b.arclength) / b.arclength < 1e-6
    assert np.max(np.linalg.norm(nearest_offset(np.diff(b.vertices, axis=0)), axis=1)) <= 0.01
    # tangent pushforward agrees with the refined image
    pushed = math.exp(um.length_log_ratios(seed, 1)[-1]) * seed.arclength
    assert pushed == pytest.approx(b.arclength, rel=1e-6)


def test_refinement_budget(seed):
    with pytest.raises(BudgetError):
        um.iterate_curve(seed, 1, 0.01, budget=1000)


def test_length_envelope(seed, pve_params):
    env = um.length_envelope_violations(seed, 8, pve_params.kappa)
    assert env["violations"] == 0
    assert env["max_abs_log_deviation"] < env["allowed"]
    assert len(env["log_ratios"]) == 9


def test_masses_at_time_zero(g_sys, box):
    axis = box.frame.vectors[:, g_sys.roles["uu"]]
    inside = um.UnstableCurve(
        g_sys, np.asarray(box.center) + np.outer([-0.5, 0.5], axis) * box.half_width_inner,
        np.array([0.0, box.half_width_inner]),
    )
    st0 = um.pushforward_mass(inside, 0, box, samples=1000)
    assert st0.region_mass == 1.0 and st0.quadrature_mass == pytest.approx(1.0)
    outside = um.UnstableCurve(g_sys, inside.lifted + 0.25, inside.params)
    st1 = um.pushforward_mass(outside, 0, box, samples=1000)
    assert st1.region_mass == 0.0 and st1.quadrature_mass == 0.0
    assert 0.0 < st1.confidence_halfwidth < 0.01


def test_straight_chord_quadrature_is_exact(g_sys, box):
    axis = box.frame.vectors[:, 0]
    hw = box.half_width_inner
    pts = np.asarray(box.center) + np.outer([-2.0, 2.0], axis) * hw
    cur = um.UnstableCurve(g_sys, pts, np.array([0.0, 4.0 * hw]))
    assert um.quadrature_mass(cur, box) == pytest.approx(0.5, rel=1e-12)
    assert um.quadrature_mass(cur, [box, box]) == pytest.approx(1.0, rel=1e-12)


def test_quadrature_agrees_with_monte_carlo(seed, g_sys):
    wide = _wide_box(g_sys.frame)
    stats = um.pushforward_mass(seed, 1, wide, samples=40_000, seed=3)
    assert stats.quadrature_mass is not None and stats.region_mass > 0
    assert abs(stats.quadrature_mass - stats.region_mass) <= 4 * stats.confidence_halfwidth


def test_mass_series_shape_and_regions(seed, g_sys, box):
    series = um.mass_series(seed, 3, box, samples=500)
    assert [s.n for s in series] == [0, 1, 2, 3]
    with pytest.raises(ParameterError):
        um.mass_series(seed, 1, "box")


def test_mass_bound_and_threshold(pve_params, g_sys):
    assert um.mass_bound(pve_params.kappa) == pytest.approx(0.8877, abs=1e-3)
    rate = um.strong_unstable_rate(g_sys)
    assert um.mass_threshold_n(pve_params.kappa, rate, 0.05) == 1
    assert um.mass_decay_term(pve_params.kappa, rate, 0, 0.05) == math.inf


@settings(max_examples=100)
@given(st.floats(0.0, 5.0), st.floats(1.5, 100.0), st.floats(1e-3, 1.0))
def test_threshold_is_first_crossing(kappa, rate, length):
    n = um.mass_threshold_n(kappa, rate, length)
    assert um.mass_decay_term(kappa, rate, n, length) <= 0.01
    if n:
        assert um.mass_decay_term(kappa, rate, n - 1, length) > 0.01


def test_birkhoff_of_constant(seed):
    est = um.birkhoff_average(seed, 5, lambda Y: np.ones(len(Y)), samples=100)
    assert est.value == 1.0 and est.stderr == 0.0 and est.partial == [1.0] * 5


def test_linear_estimators_exact(g_sys, seed, pve_params):
    lin = g_sys.linearized()
    cur = um.UnstableCurve(lin, seed.lifted, seed.params)
    est = um.center_exponent(lin, cur, 20, samples=200)
    assert est.value == pytest.approx(-math.log(pve_params.lambda_s), abs=1e-12)
    trip = um.exponent_triplet(lin, cur, 20, samples=100)
    logs = np.log(np.abs(lin.linear_rates))
    for name in ("uu", "c", "ss"):
        assert trip[name].value == pytest.approx(logs[lin.roles[name]], abs=1e-9)
    assert abs(trip["residual"].value) < 1e-9


def test_center_exponent_bound_and_triplet(f_sys, g_sys, seed, pve_params):
    est = um.center_exponent(g_sys, seed, 50, samples=2000)
    lb = um.center_exponent_lower_bound(pve_params.kappa, 1 / pve_params.lambda_s)
    assert est.value >= lb
    trip = um.exponent_triplet(g_sys, seed, 40, samples=300)
    assert abs(trip["residual"].value) < 1e-6
    with pytest.raises(ParameterError):
        um.exponent_triplet(f_sys, seed, 1)


def test_fixed_point_rates(G_sys):
    r = um.fixed_point_rates(G_sys)
    assert r["cu_rate_q1"] == pytest.approx(0.5, rel=1e-12)
    assert r["cs_rate_q2"] == pytest.approx(2.0, rel=1e-12)


def test_mixed_exponents_small_run(G_sys, mixed_params):
    cur = um.seed_curve(G_sys, np.full(3, 0.37), 0.05)
    me = um.mixed_exponents(G_sys, cur, 60, samples=1000)
    lo, hi = um.mixed_exponent_bounds(mixed_params.kappa2, mixed_params.lambda_u, mixed_params.lambda_ss)
    assert me.cu.value >= lo and me.cs.value <= hi
    assert me.unconverged_fraction == 0.0
    assert len(me.cu.partial) == 60 and len(me.cs.partial) == 60


def test_mixed_exponents_reject_other_systems(g_sys, seed):
    with pytest.raises(ParameterError):
        um.mixed_exponents(g_sys, seed, 5, samples=10)


def test_one_step_cu_rates_at_q1(G_sys, mixed_params):
    q1 = np.asarray(mixed_params.charts[0].center, dtype=float)
    assert um.cu_one_step_rates(G_sys, q1)[0] == pytest.approx(0.5, rel=1e-9)
