import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from da_forge.bump import BumpProfile, compute_m, forward_modification_infeasibility, psi, psi_prime
from da_forge.errors import DaForgeError
from oracles import mp_psi

# minimum of x psi'(x) + psi(x), found by a bracketed mpmath root of its
# derivative at 40 digits; it does not depend on delta
M_ORACLE = 2.748556717296577726

deltas = st.sampled_from([1 / 1024, 1 / 64, 0.01, 0.3])


def test_plateau_zero_and_symmetry_exact():
    b = BumpProfile(0.01)
    x = np.random.default_rng(0).uniform(-0.02, 0.02, 10_000)
    v, d = b.evaluate(x)
    assert np.all(v[np.abs(x) <= 0.005] == 1.0)
    assert np.all(v[np.abs(x) >= 0.01] == 0.0)
    assert np.all(d[np.abs(x) >= 0.01] == 0.0)
    assert np.array_equal(b.psi(-x), v)
    assert np.all(x * d <= 0.0)


@settings(max_examples=200)
@given(deltas, st.floats(-1.0, 1.0))
def test_range_and_monotone(delta, t):
    b = BumpProfile(delta)
    x = t * delta
    v = psi(b, x)
    assert 0.0 <= v <= 1.0
    assert x * psi_prime(b, x) <= 0.0
    assert psi(b, abs(x) * 1.001) <= v


def test_derivative_matches_mpmath():
    b = BumpProfile(0.01)
    with mp.workdps(30):
        for x in np.linspace(0.0051, 0.0099, 25):
            want = mp.diff(lambda t: mp_psi(t, mp.mpf("0.01")), mp.mpf(float(x)))
            assert psi_prime(b, x) == pytest.approx(float(want), rel=1e-9, abs=1e-9)
            assert psi(b, x) == pytest.approx(float(mp_psi(mp.mpf(float(x)), mp.mpf("0.01"))), abs=1e-15)


@pytest.mark.parametrize("delta", [1 / 1024, 1 / 64, 0.3])
def test_m_matches_oracle_for_every_delta(delta):
    bound = compute_m(BumpProfile(delta))
    assert bound.m == pytest.approx(M_ORACLE, abs=1e-12)
    assert bound.upper == 1.0
    assert abs(bound.argmin_x) / delta == pytest.approx(0.80329104215, abs=1e-6)


def test_weight_product_in_bounds_on_grid():
    b = BumpProfile(1 / 1024)
    m = compute_m(b).m
    g = np.linspace(-b.delta, b.delta, 1000)
    v, d = b.evaluate(g)
    prod = np.multiply.outer(g * d + v, b.psi(g))
    assert prod.min() >= -m and prod.max() <= 1.0


def test_bad_profile_inputs():
    with pytest.raises(ValueError):
        BumpProfile(0.0)
    with pytest.raises(DaForgeError):
        BumpProfile(0.1, "triangle")


def test_scalar_evaluation():
    b = BumpProfile(0.1)
    assert b.psi(0.0) == 1.0 and isinstance(b.psi(0.0), float)
    assert b.psi_prime(0.2) == 0.0


def test_forward_modification_infeasible_with_witness(pve_params):
    v = forward_modification_infeasibility(M_ORACLE, pve_params.lambda_ss, pve_params.bump, pve_params.k)
    assert v.fails
    assert v.threshold == pytest.approx(1 / (1 - 2 / pve_params.lambda_ss))
    assert v.witness_derivative is not None and v.witness_derivative <= 0.0
    assert abs(v.witness_c) < pve_params.delta / pve_params.k and v.witness_r < pve_params.delta


def test_forward_modification_feasible_case():
    # lambda_ss close to 2 drives the threshold far below -m
    v = forward_modification_infeasibility(1.0, 1.9)
    assert not v.fails
    with pytest.raises(DaForgeError):
        forward_modification_infeasibility(1.0, 2.5)
