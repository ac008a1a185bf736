import math

import numpy as np
import pytest
from scipy.stats import norm

from src.errors import DomainError, MethodError
from src.limits import (BridgeSpec, DiagSpec, bivariate_normal_survival, bridge_covariance, bridge_crossing,
                        diag_limit, offdiag_two_point_limit, sample_correlated_bridges)
from src.scaling import RegionQuery, level_curve_time, make_params


def _random_spec(rng, count):
    total = rng.uniform(0.5, 2.0)
    times = np.sort(rng.uniform(0.1, 0.9, size=count)) * total
    while np.min(np.diff(np.concatenate([[0.0], times, [total]]))) < 0.05 * total:
        times = np.sort(rng.uniform(0.1, 0.9, size=count)) * total
    thresholds = rng.normal(0.0, 0.4, size=count)
    return BridgeSpec(total, tuple(times), tuple(thresholds))


def test_bridge_midpoint_zero_threshold_is_half():
    assert bridge_crossing(BridgeSpec(1.0, (0.5,), (0.0,))).value == pytest.approx(0.5, abs=1e-12)


def test_bridge_single_time_gaussian_tail():
    spec = BridgeSpec(1.0, (0.25,), (math.sqrt(3.0 / 16.0),))
    assert bridge_crossing(spec).value == pytest.approx(0.158655, abs=1e-6)


def test_closed_form_rejects_three_times():
    with pytest.raises(MethodError):
        bridge_crossing(BridgeSpec(1.0, (0.2, 0.5, 0.7), (0.0, 0.0, 0.0)), 'closed_form')


def test_bridge_spec_requires_increasing_times():
    with pytest.raises(DomainError):
        BridgeSpec(1.0, (0.5, 0.3), (0.0, 0.0))
    with pytest.raises(DomainError):
        BridgeSpec(1.0, (1.0,), (0.0,))


def test_contour_matches_closed_form_on_random_specs():
    rng = np.random.default_rng(2024)
    for k in range(20):
        spec = _random_spec(rng, 1 + k % 2)
        exact = bridge_crossing(spec, 'closed_form').value
        assert bridge_crossing(spec, 'contour').value == pytest.approx(exact, abs=1e-6)


@pytest.mark.slow
def test_contour_matches_closed_form_hundred_specs():
    rng = np.random.default_rng(99)
    for k in range(100):
        spec = _random_spec(rng, 1 + k % 2)
        exact = bridge_crossing(spec, 'closed_form').value
        assert bridge_crossing(spec, 'contour').value == pytest.approx(exact, abs=1e-6)


def test_genz_matches_contour_for_three_times():
    spec = BridgeSpec(1.0, (0.2, 0.5, 0.8), (-0.1, 0.05, -0.2))
    genz = bridge_crossing(spec, 'genz').value
    assert bridge_crossing(spec, 'contour').value == pytest.approx(genz, abs=1e-5)


def test_gaussian_mc_within_standard_errors():
    spec = BridgeSpec(1.0, (0.3, 0.6), (0.1, -0.1))
    exact = bridge_crossing(spec).value
    result = bridge_crossing(spec, 'gaussian_mc', n_paths=40000, seed=5)
    # discretization at 2^10 steps is far below the MC error here
    assert abs(result.value - exact) < 4 * result.error


def test_bridge_decreasing_in_thresholds():
    rng = np.random.default_rng(17)
    for _ in range(50):
        spec = _random_spec(rng, 2)
        bumped = BridgeSpec(spec.total, spec.times, (spec.thresholds[0] + 0.1, spec.thresholds[1]))
        assert bridge_crossing(bumped).value <= bridge_crossing(spec).value + 1e-12


def test_bivariate_survival_independent():
    assert bivariate_normal_survival(0.3, -0.4, 0.0) == pytest.approx(norm.sf(0.3) * norm.sf(-0.4), abs=1e-14)


def test_bivariate_survival_orthant_identity():
    for rho in (-0.9, -0.3, 0.2, 0.75, 0.95):
        expected = 0.25 + math.asin(rho) / (2.0 * math.pi)
        assert bivariate_normal_survival(0.0, 0.0, rho) == pytest.approx(expected, abs=1e-10)


def test_bivariate_survival_matches_sampling():
    rng = np.random.default_rng(8)
    h, k, rho = 0.2, -0.5, 0.6
    x = rng.standard_normal(10 ** 6)
    y = rho * x + math.sqrt(1 - rho ** 2) * rng.standard_normal(10 ** 6)
    estimate = np.mean((x > h) & (y > k))
    se = math.sqrt(estimate * (1 - estimate) / 10 ** 6)
    assert abs(bivariate_normal_survival(h, k, rho) - estimate) < 3 * se + 1e-12


def test_diag_limit_single_constraint_factorizes():
    p = make_params(1.0, 2.0, 8.0)
    t, h = 0.4, 0.3
    sd = math.sqrt(t * (1 - t))
    expected = norm.sf(h / (math.sqrt(2) * p.c_plus * sd)) * norm.sf(h / (math.sqrt(2) * p.c_minus * sd))
    assert diag_limit(DiagSpec(p, ((0.0, t, h),))).value == pytest.approx(expected, abs=1e-10)


def test_diag_limit_very_low_threshold_is_one():
    p = make_params(1.0, 1.0, 5.0)
    assert diag_limit(DiagSpec(p, ((0.2, 0.5, -50.0),))).value == pytest.approx(1.0, abs=1e-12)


def test_diag_limit_shift_symmetry_at_equal_speeds():
    p = make_params(1.0, 1.0, 5.0)
    left = diag_limit(DiagSpec(p, ((0.3, 0.4, 0.1), (-0.2, 0.7, 0.05)))).value
    right = diag_limit(DiagSpec(p, ((-0.3, 0.4, 0.1), (0.2, 0.7, 0.05)))).value
    assert left == pytest.approx(right, abs=1e-9)


def test_diag_limit_sampling_agrees_with_factorization():
    p = make_params(1.0, 2.0, 8.0)
    spec = DiagSpec(p, ((0.1, 0.3, -0.2), (-0.1, 0.6, 0.0)))
    exact = diag_limit(spec).value
    sampled = diag_limit(spec, 'gaussian_mc', n_paths=200000, seed=3)
    assert abs(sampled.value - exact) < 4 * sampled.error


def test_sampled_bridges_have_predicted_cross_covariance():
    p = make_params(1.0, 2.0, 8.0)
    b1, b2 = sample_correlated_bridges(p, [0.5], 400000, seed=1)
    empirical = float(np.mean(b1[:, 0] * b2[:, 0]))
    assert empirical == pytest.approx(bridge_covariance(p, 0.5), abs=0.01)


def test_bridge_covariance_identities():
    p = make_params(1.0, 2.0, 8.0)
    for t in (0.1, 0.5, 0.9):
        expected = (p.c_plus ** 2 - p.c_minus ** 2) / 2 * t * (1 - t)
        assert bridge_covariance(p, t) == pytest.approx(expected, abs=1e-12)
    assert bridge_covariance(make_params(1.0, 1.0, 5.0), 0.3) == 0.0


def test_offdiag_coincident_points_give_marginal():
    p = make_params(1.0, 1.0, 5.0)
    q = RegionQuery(0.5, 0.4, 0.5, 0.4)
    u = level_curve_time(p, 0.5, 0.4)
    expected = norm.sf(0.3 / (p.c_plus * math.sqrt(u * (1 - u))))
    assert offdiag_two_point_limit(p, q, 0.3, 0.3) == pytest.approx(expected, abs=1e-12)


def test_offdiag_level_curve_invariance():
    p = make_params(1.0, 1.0, 5.0)
    m = p.m_slope
    delta = 0.01
    q = RegionQuery(0.5, 0.4, 0.7, 0.6)
    moved = RegionQuery(0.5 + m * delta, 0.4 + delta, 0.7 + m * delta, 0.6 + delta)
    assert offdiag_two_point_limit(p, moved, 0.1, -0.2) == pytest.approx(
        offdiag_two_point_limit(p, q, 0.1, -0.2), abs=1e-12)


def test_offdiag_low_thresholds_give_one():
    p = make_params(1.0, 1.0, 5.0)
    assert offdiag_two_point_limit(p, RegionQuery(0.3, 0.2, 0.6, 0.45), -40.0, -40.0) == pytest.approx(1.0)


def test_offdiag_rejects_pair_straddling_diagonal():
    p = make_params(1.0, 1.0, 5.0)
    with pytest.raises(DomainError):
        offdiag_two_point_limit(p, RegionQuery(0.3, 0.2, 0.4, 0.6), 0.0, 0.0)
