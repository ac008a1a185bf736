import math

import numpy as np
import pytest

from src.contours import ObservationPlan
from src.errors import DomainError, ShapeError, ToleranceError
from src.finite import (cdf, conditional_probability, density_and_tail, density_sweep, eval_D_n, eval_Q, eval_Q_n,
                        identity_tolerance, leading_integral, require_identity, single_point_terms,
                        verify_identity, z_normalization, z_weight)
from src.limits import offdiag_two_point_limit
from src.scaling import RegionQuery, make_params, rate_function


def _density_2x2(T):
    return math.exp(-T) * (T * T - 2 * T + 2 - 2 * math.exp(-T))


def _tail_2x2(T):
    return math.exp(-T) * (T * T + 2) - math.exp(-2 * T)


@pytest.mark.parametrize('T', [0.5, 1.0, 3.0, 7.0])
def test_single_cell_density_and_tail(T):
    density, tail = density_and_tail(1, 1, T)
    assert density == pytest.approx(math.exp(-T), rel=1e-8)
    assert tail == pytest.approx(math.exp(-T), rel=1e-8)


@pytest.mark.parametrize('M,N', [(2, 1), (1, 2)])
def test_gamma_density_for_a_single_row(M, N):
    for T in (0.5, 2.0, 6.0):
        density, tail = density_and_tail(M, N, T)
        assert density == pytest.approx(T * math.exp(-T), rel=1e-8)
        assert tail == pytest.approx((1 + T) * math.exp(-T), rel=1e-8)
        assert cdf(M, N, T).value == pytest.approx(1 - (1 + T) * math.exp(-T), abs=1e-12)


def test_two_by_two_closed_form():
    for T in (0.5, 1.5, 3.0, 8.0):
        density, tail = density_and_tail(2, 2, T)
        assert density == pytest.approx(_density_2x2(T), rel=1e-8)
        assert tail == pytest.approx(_tail_2x2(T), rel=1e-8)


def test_tail_at_zero_is_one():
    for M, N in ((1, 1), (2, 3), (4, 4)):
        assert density_and_tail(M, N, 0.0)[1] == pytest.approx(1.0, abs=1e-12)
        assert cdf(M, N, 0.0).value == pytest.approx(0.0, abs=1e-12)


def test_distribution_symmetric_in_shape():
    for T in (2.0, 5.0, 9.0):
        assert density_and_tail(3, 2, T) == pytest.approx(density_and_tail(2, 3, T), rel=1e-10)


def test_quad_tail_matches_series_tail():
    density, series_tail = density_and_tail(3, 2, 6.0)
    _, quad_tail = density_and_tail(3, 2, 6.0, tail_method='quad')
    assert quad_tail == pytest.approx(series_tail, rel=1e-6)


def test_exact_terms_have_rank_many_entries():
    terms = single_point_terms(5, 3, 4.0)
    assert terms.rank == 3
    assert len(terms.cdf) == 4 and len(terms.density) == 4
    with pytest.raises(DomainError):
        single_point_terms(0, 3, 1.0)
    with pytest.raises(DomainError):
        single_point_terms(2, 3, -1.0)


def test_density_sweep_columns():
    table = density_sweep(2, 2, [1.0, 2.0, 3.0])
    assert list(table.columns) == ['T', 'density', 'tail', 'err']
    assert table['density'].tolist() == pytest.approx([_density_2x2(T) for T in (1.0, 2.0, 3.0)], rel=1e-8)
    assert (table['err'] == 0.0).all()


def test_tail_rate_bounded_below_by_rate_function():
    p = make_params(1.0, 1.0, 5.0)
    J = rate_function(p)
    rates = {}
    for L in (1, 2, 4, 8):
        _, tail = density_and_tail(L, L, 5.0 * L)
        rates[L] = -math.log(tail) / L
        assert rates[L] >= J - 1e-9
    assert rates[1] == pytest.approx(5.0, rel=1e-8)
    assert rates[2] == pytest.approx(-math.log(102 * math.exp(-10.0) - math.exp(-20.0)) / 2, rel=1e-8)
    # P(L(2n, 2n) > 10n) >= P(L(n, n) > 5n)^2
    for n in (1, 2, 4):
        assert rates[2 * n] <= rates[n] + 1e-9


def test_z_normalization_unit_scale():
    assert z_normalization(make_params(1.0, 1.0, 5.0), 1.0).Z == pytest.approx(0.73255, abs=1e-5)


def test_first_term_by_quadrature_matches_residue():
    plan = ObservationPlan.single(1, 1, 1.0)
    value = eval_Q_n(plan, (1,), radius_mode='linear', method='tensor')
    assert value == pytest.approx(math.exp(-1.0), rel=1e-10)
    assert eval_Q_n(plan, (1,)) == pytest.approx(math.exp(-1.0), rel=1e-10)


def test_eval_Q_n_rejects_wrong_length():
    plan = ObservationPlan.single(1, 1, 1.0)
    with pytest.raises(ShapeError):
        eval_Q_n(plan, (1, 1))
    with pytest.raises(DomainError):
        eval_Q_n(plan, (-1,))


def test_z_weight_exact_and_trapezoid_agree():
    for n_i, n_next, degree in ((2, 1, 0), (3, 1, 1), (3, 1, 2), (4, 2, 3), (1, 1, 1), (2, 2, 0)):
        exact = z_weight(n_i, n_next, degree, 'exact')
        assert z_weight(n_i, n_next, degree) == pytest.approx(exact, abs=1e-12)


def test_conditional_probability_needs_two_or_three_points():
    with pytest.raises(DomainError):
        conditional_probability(ObservationPlan.single(2, 2, 3.0))


def test_identity_tolerance_tiers():
    assert identity_tolerance(4) == 1e-4
    assert identity_tolerance(6) == 1e-4
    assert identity_tolerance(8) == 1e-2
    assert identity_tolerance(12) == 1e-2


def test_verify_identity_unknown_name():
    p = make_params(1.0, 1.0, 5.0)
    with pytest.raises(DomainError):
        verify_identity('QQ999', p, RegionQuery(0.3, 0.2, 0.5, 0.45), 4.0)


@pytest.mark.slow
def test_quadrature_series_matches_two_by_two_density():
    result = eval_Q(ObservationPlan.single(2, 2, 3.0), n_max=2, radius_mode='geometric', method='tensor')
    assert result.value == pytest.approx(_density_2x2(3.0), rel=1e-6)


@pytest.mark.slow
def test_first_identity_holds_at_small_scale():
    p = make_params(1.0, 1.0, 5.0)
    report = verify_identity('QQ111-a', p, RegionQuery(0.3, 0.2, 0.5, 0.45), 6.0)
    assert report.applicable
    assert report.dimension == 6
    require_identity(report)


@pytest.mark.slow
def test_identity_failure_raises_tolerance_error():
    p = make_params(1.0, 1.0, 5.0)
    report = verify_identity('QQ111-a', p, RegionQuery(0.3, 0.2, 0.5, 0.45), 6.0)
    report.passed = False
    with pytest.raises(ToleranceError):
        require_identity(report)


@pytest.mark.slow
def test_z_weights_vanish_when_a_level_is_empty():
    for k in range(1, 5):
        for degree in range(2 * k + 1):
            assert z_weight(0, k, degree, 'exact') == 0.0
            assert z_weight(0, k, degree) == pytest.approx(0.0, abs=1e-8)


@pytest.mark.slow
@pytest.mark.parametrize('n', [(1, 0, 1), (0, 1, 1), (0, 0, 2), (1, 1, 0)])
def test_q_term_vanishes_with_an_empty_level(n):
    plan = ObservationPlan((1, 2, 3), (1, 2, 3), (1.0, 3.0, 6.0))
    assert eval_Q_n(plan, n) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.slow
def test_z_circle_integral_of_d_vanishes_for_empty_first_level():
    plan = ObservationPlan((1, 2), (1, 2), (1.0, 3.0))
    n = (0, 1)
    nodes = 48
    z = 2.0 * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    values = np.array([eval_D_n(plan, n, (v,)).to_complex() for v in z])
    integrand = values * (z + 1.0) ** (n[0] - n[1] - 1) / z ** (n[1] + 1) * z
    assert np.abs(integrand).mean() > 0
    assert abs(integrand.mean()) < 1e-10 * np.abs(integrand).mean()


@pytest.mark.slow
def test_tail_rate_approaches_rate_function_from_above():
    p = make_params(1.0, 1.0, 5.0)
    J = rate_function(p)
    rates = {}
    for L in (4, 8, 12):
        _, tail = density_and_tail(L, L, 5.0 * L)
        assert 0.0 < tail < 1.0
        rates[L] = -math.log(tail) / L
        assert rates[L] >= J - 1e-9
    assert rates[8] <= rates[4] + 1e-9
    assert rates[12] <= rates[4] + 1e-9


REGION_IDENTITIES = [
    ((0.7, 0.5, 0.6, 0.55), 'R1', 'QQ111-a'),
    ((0.3, 0.2, 0.5, 0.45), 'R2', 'QQ111-a'),
    ((0.3, 0.2, 0.6, 0.52), 'R3', 'QQ111-b'),
    ((0.3, 0.2, 0.6, 0.45), 'R4', 'QQ111-b'),
    ((0.3, 0.2, 0.6, 0.38), 'R5', 'QQ111-c'),
    ((0.3, 0.2, 0.7, 0.25), 'R6', 'QQ111-d'),
    ((0.3, 0.25, 0.7, 0.2), 'R7', 'QQ111-d'),
]


@pytest.mark.slow
@pytest.mark.parametrize('points,tag,identity_id', REGION_IDENTITIES)
def test_three_point_identity_per_region(points, tag, identity_id):
    p = make_params(1.0, 1.0, 5.0)
    report = verify_identity(identity_id, p, RegionQuery(*points), 6.0)
    assert report.region == tag
    assert report.applicable
    assert report.dimension == 6
    assert report.residual < 1e-4


@pytest.mark.slow
def test_repeated_level_identity_in_r6():
    p = make_params(1.0, 1.0, 5.0)
    report = verify_identity('QQ121', p, RegionQuery(0.3, 0.2, 0.7, 0.25), 6.0)
    assert report.applicable
    assert report.dimension == 8
    assert report.residual < 1e-2


@pytest.mark.slow
@pytest.mark.parametrize('points', [(0.3, 0.2, 0.5, 0.45), (0.3, 0.2, 0.6, 0.45)])
def test_leading_integral_does_not_depend_on_radius_layout(points):
    p = make_params(1.0, 1.0, 5.0)
    q = RegionQuery(*points)
    base = leading_integral(p, q, 8.0)
    for mode in ('geometric', 'steepest'):
        other = leading_integral(p, q, 8.0, nodes=48, radius_mode=mode)
        assert other.scaled == pytest.approx(base.scaled, abs=1e-5)


@pytest.mark.slow
@pytest.mark.parametrize('points', [(0.3, 0.2, 0.5, 0.45), (0.3, 0.2, 0.6, 0.45)])
def test_leading_integral_converges_to_bridge_probability(points):
    p = make_params(1.0, 1.0, 5.0)
    gaps = [leading_integral(p, RegionQuery(*points), L).gap for L in (8.0, 16.0, 32.0)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.05


@pytest.mark.slow
def test_conditional_probability_converges_to_two_point_limit():
    p = make_params(1.0, 1.0, 5.0)
    q = RegionQuery(0.3, 0.2, 0.6, 0.45)
    limit = offdiag_two_point_limit(p, q, 0.0, 0.0)
    gaps = []
    for L in (10.0, 20.0, 40.0):
        result = conditional_probability(ObservationPlan.scaled(p, q, L))
        assert 0.0 <= result.value <= 1.0 + 1e-6
        gaps.append(abs(result.value - limit))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.05
