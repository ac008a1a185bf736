import math

import numpy as np
import pandas as pd
import pytest

from src.config import Config
from src.errors import AllocationError, BudgetExceeded, DomainError, RangeError, ShapeError
from src.finite import cdf, density_and_tail
from src.lattice import (ConditionalSampler, Geodesic, LatticeField, Step, basis_to_lattice, conditional_mc,
                         conditional_sample, extract_geodesic, geodesic_projection, lpp_at, sample_field,
                         sample_lpp_values)
from src.scaling import make_params, rate_function


def _brute_lpp(weights):
    M, N = weights.shape
    lp = np.zeros((M, N))
    for i in range(M):
        for j in range(N):
            best = 0.0
            if i > 0:
                best = lp[i - 1, j]
            if j > 0:
                best = max(best, lp[i, j - 1])
            lp[i, j] = weights[i, j] + best
    return lp


def test_single_cell_field_is_its_weight():
    lattice = sample_field(1, 1, seed=4)
    assert lattice.lp[0, 0] == lattice.weights[0, 0]
    assert lattice.weights[0, 0] > 0


def test_recursion_matches_cellwise_fill():
    rng = np.random.default_rng(21)
    for shape in ((1, 6), (5, 1), (4, 7), (9, 9)):
        weights = rng.exponential(size=shape)
        lattice = LatticeField.from_weights(weights)
        np.testing.assert_allclose(lattice.lp, _brute_lpp(weights), rtol=0, atol=1e-12)


def test_first_row_and_column_are_running_sums():
    lattice = sample_field(6, 8, seed=2)
    np.testing.assert_allclose(lattice.lp[0], np.cumsum(lattice.weights[0]), atol=1e-12)
    np.testing.assert_allclose(lattice.lp[:, 0], np.cumsum(lattice.weights[:, 0]), atol=1e-12)


def test_sample_field_is_deterministic_and_prefix_stable():
    small = sample_field(3, 4, seed=77)
    again = sample_field(3, 4, seed=77)
    large = sample_field(5, 6, seed=77)
    np.testing.assert_array_equal(small.weights, again.weights)
    np.testing.assert_array_equal(small.weights, large.weights[:3, :4])
    assert not np.array_equal(small.weights, sample_field(3, 4, seed=78).weights)


def test_lpp_at_uses_ceiling_and_is_monotone():
    lattice = sample_field(5, 5, seed=9)
    assert lpp_at(lattice, 0.2, 0.9) == lattice.lp[0, 0]
    assert lpp_at(lattice, 2.0, 3.0) == lattice.lp[1, 2]
    assert lpp_at(lattice, 2.5, 3.0) >= lpp_at(lattice, 2.0, 3.0)
    assert lpp_at(lattice, 3.0, 3.5) >= lpp_at(lattice, 3.0, 3.0)


def test_lpp_at_outside_field_raises():
    lattice = sample_field(3, 3, seed=1)
    with pytest.raises(RangeError):
        lpp_at(lattice, 3.5, 1.0)


def test_cell_cap_raises_allocation_error(monkeypatch):
    monkeypatch.setattr(Config, 'MAX_CELLS', 10)
    with pytest.raises(AllocationError):
        sample_field(4, 4, seed=1)


def test_from_weights_rejects_negative_weights():
    with pytest.raises(ShapeError):
        LatticeField.from_weights(np.array([[1.0, -0.5]]))


def test_single_row_geodesic_steps_right():
    geodesic = extract_geodesic(sample_field(1, 5, seed=3))
    assert geodesic.steps == (Step.RIGHT,) * 4
    assert geodesic.points[0] == (1, 1) and geodesic.points[-1] == (1, 5)


def test_geodesic_ties_break_up():
    lattice = LatticeField.from_weights(np.ones((2, 2)))
    geodesic = extract_geodesic(lattice)
    assert geodesic.steps == (Step.RIGHT, Step.UP)
    assert geodesic.points == ((1, 1), (1, 2), (2, 2))


def test_geodesic_weight_sum_equals_corner_value():
    lattice = sample_field(50, 50, seed=12)
    geodesic = extract_geodesic(lattice)
    assert len(geodesic.points) == 99
    assert geodesic.weight_sum(lattice) == pytest.approx(lattice.lp[-1, -1], rel=1e-12)


def test_projection_endpoints_lie_on_main_direction():
    p = make_params(1.0, 1.0, 5.0)
    L = 10.0
    coords = geodesic_projection(extract_geodesic(sample_field(10, 10, seed=5)), p, L)
    assert coords[0] == pytest.approx((0.0, 0.0), abs=1e-12)
    assert coords[-1][0] == pytest.approx(L, abs=1e-9)
    assert coords[-1][1] == pytest.approx(0.0, abs=1e-9)


def test_projection_of_diagonal_path_has_no_transversal_part():
    p = make_params(1.0, 1.0, 5.0)
    points = [(1, 1)]
    steps = []
    for k in range(2, 9):
        points += [(k - 1, k), (k, k)]
        steps += [Step.RIGHT, Step.UP]
    diagonal = [c for c, (i, j) in zip(geodesic_projection(Geodesic(tuple(points), tuple(steps)), p, 7.0), points)
                if i == j]
    assert all(abs(pi) < 1e-12 for _, pi in diagonal)


def test_basis_to_lattice_inverts_projection():
    p = make_params(1.0, 2.0, 8.0)
    lattice = sample_field(6, 11, seed=8)
    geodesic = extract_geodesic(lattice)
    coords = geodesic_projection(geodesic, p, 5.5)
    back = basis_to_lattice(p, 5.5, 6, 11, coords)
    for (i, j), (x, y) in zip(geodesic.points, back):
        assert x == pytest.approx(i, abs=1e-12)
        assert y == pytest.approx(j, abs=1e-12)


def test_unconditional_tail_matches_exact_series():
    values = sample_lpp_values(3, 3, 40000, seed=31, threads=2)
    T = 8.0
    hit = values > T
    estimate = float(hit.mean())
    se = math.sqrt(estimate * (1 - estimate) / len(values))
    _, tail = density_and_tail(3, 3, T)
    assert abs(estimate - tail) < 4 * se


def test_sample_lpp_values_seeded_batches_repeat():
    first = sample_lpp_values(4, 3, 5000, seed=2, threads=1)
    second = sample_lpp_values(4, 3, 5000, seed=2, threads=3)
    np.testing.assert_array_equal(first, second)


def test_conditional_mc_small_scale():
    p = make_params(1.0, 1.0, 5.0)
    result = conditional_mc(p, 2.0, observables=[(0.5, 0.5), (1.0, 1.0)], n_target=20, seed=4, threads=2)
    assert result.accepted == 20
    assert result.draws % Config.MC_BATCH == 0
    assert 0.0 < result.acceptance_rate < 1.0
    low, high = result.window
    assert low < 10.0 < high
    assert list(result.summary.columns) == ['x', 'y', 'h', 'unconditioned', 'mean', 'se',
                                            'fluct_mean', 'fluct_se']
    corner = result.summary.iloc[1]
    assert low / 2.0 <= corner['mean'] <= high / 2.0
    assert len(result.samples) == 40


def test_conditional_mc_independent_of_thread_count():
    p = make_params(1.0, 1.0, 5.0)
    one = conditional_mc(p, 2.0, n_target=15, seed=10, threads=1)
    many = conditional_mc(p, 2.0, n_target=15, seed=10, threads=4)
    pd.testing.assert_frame_equal(one.samples, many.samples)
    assert one.draws == many.draws
    assert one.acceptance_rate == many.acceptance_rate


def test_conditional_mc_counts_draws_through_the_completing_batch():
    p = make_params(1.0, 1.0, 5.0)
    sampler = ConditionalSampler(p, 2.0)
    hits = draws = index = 0
    while hits < 15:
        batch = sampler.run_batch(10, index)
        hits += len(batch['log_weight'])
        draws += int(batch['draws'])
        index += 1
    for threads in (1, 3):
        result = sampler.run(15, seed=10, threads=threads)
        assert result.accepted == 15
        assert result.draws == draws
        assert result.acceptance_rate == pytest.approx(hits / draws, rel=1e-12)


def test_conditional_mc_budget_returns_partial():
    p = make_params(1.0, 1.0, 5.0)
    with pytest.raises(BudgetExceeded) as info:
        conditional_mc(p, 2.0, n_target=10 ** 6, seed=1, budget=1, threads=1)
    partial = info.value.partial
    assert partial is not None
    assert partial.draws == Config.MC_BATCH
    assert partial.accepted < 10 ** 6
    with pytest.raises(BudgetExceeded) as info:
        conditional_mc(p, 2.0, n_target=10 ** 6, seed=1, budget=1, threads=4)
    assert info.value.partial.draws == Config.MC_BATCH


def test_conditional_mc_tilted_reports_effective_sample_size():
    p = make_params(1.0, 1.0, 5.0)
    result = conditional_mc(p, 2.0, n_target=20, seed=6, threads=1, tilting=True)
    assert result.tilted
    assert 0.0 < result.effective_sample_size <= result.accepted + 1e-9


def test_conditional_mc_rejects_bad_window():
    with pytest.raises(DomainError):
        conditional_mc(make_params(1.0, 1.0, 5.0), 2.0, delta=0.0)


def test_conditional_sample_reports_window():
    p = make_params(1.0, 1.0, 5.0)
    sample = conditional_sample(p, 4.0, seed=3, observables=[(0.5, 0.5)])
    assert sample.field.rows == 4 and sample.field.cols == 4
    assert sample.accepted == (abs(sample.field.lp[-1, -1] - sample.target) <= sample.window_halfwidth)
    assert sample.observables[0][2] == pytest.approx(sample.field.lp[1, 1] / 4.0)


@pytest.mark.slow
@pytest.mark.parametrize('T', [6.0, 9.0, 12.0])
def test_sampled_cdf_matches_exact_series(T):
    values = sample_lpp_values(3, 3, 10 ** 6, seed=77)
    exact = cdf(3, 3, T).value
    se = math.sqrt(exact * (1.0 - exact) / len(values))
    assert abs(float((values <= T).mean()) - exact) <= 3 * se + 1e-9


@pytest.mark.slow
def test_conditional_mc_acceptance_below_superadditive_bound():
    p = make_params(1.0, 1.0, 5.0)
    result = conditional_mc(p, 24.0, n_target=100, seed=1)
    assert result.ld_prediction == pytest.approx(math.exp(-rate_function(p) * 24.0), rel=1e-12)
    # P(L(n, n) >= x n) <= exp(-n J(x)) for every n
    low = result.window[0] / 24.0
    bound = math.exp(-24.0 * rate_function(make_params(1.0, 1.0, low)))
    assert 0.0 < result.acceptance_rate < bound


@pytest.mark.slow
def test_conditional_mean_follows_conditional_surface():
    p = make_params(1.0, 1.0, 5.0)
    result = conditional_mc(p, 24.0, delta=0.2, observables=[(0.5, 0.4)], n_target=500, seed=8)
    row = result.summary.iloc[0]
    assert abs(row['mean'] - row['h']) < abs(row['mean'] - row['unconditioned'])
    assert abs(row['mean'] - row['h']) < 0.15
