import cmath
import math

import numpy as np
import pytest

from src.contours import (Contour, IndexList, ObservationPlan, Orientation, cauchy_det, cbc_lattice, eval_I, f_eval,
                          list_rewrite, nested_radii, pi_n, pi_sigma_tau, rewrite_coefficient, validate_nesting)
from src.errors import ContourNestingError, DomainError, HypothesisError, PoleError, RuleError, ShapeError
from src.scaling import RegionQuery, log_z_constant, make_params


def _unit_plan(T=3.0):
    # final point (1, 1, T) with no interior steps
    return ObservationPlan((1, 1, 1), (1, 1, 1), (1.0, 2.0, T))


def test_index_list_parse_and_print():
    lst = IndexList.parse('3(12)')
    assert lst.entries == ('3', '12')
    assert str(lst) == '3(12)'
    assert lst.multiplicity == (1, 1, 1)
    assert lst.type_vector == (0, 1, 0, 0, 0, 1)
    assert IndexList.parse('(123)2').multiplicity == (1, 2, 1)
    assert IndexList.parse('1 1 2').blocks() == [('1', 2), ('2', 1)]


def test_index_list_rejects_bad_notation():
    with pytest.raises(DomainError):
        IndexList.parse('4')
    with pytest.raises(DomainError):
        IndexList.parse('(12')
    with pytest.raises(DomainError):
        IndexList(('13',))


def test_contour_validation():
    with pytest.raises(ContourNestingError):
        Contour(0.0, 0.0)
    with pytest.raises(DomainError):
        Contour(0.0, 0.2, nodes=7)


def test_contour_trapezoid_residues():
    circle = Contour(0.0, 0.2, 16)
    assert circle.integrate(lambda z: 1.0 / z) == pytest.approx(1.0, abs=1e-14)
    assert abs(circle.integrate(lambda z: z ** 2)) < 1e-15
    reverse = Contour(0.0, 0.2, 16, orientation=Orientation.CW)
    assert reverse.integrate(lambda z: 1.0 / z) == pytest.approx(-1.0, abs=1e-14)


def test_f_eval_matches_direct_formula():
    z = 0.3 + 0.2j
    expected = z ** 3 * cmath.exp(1.5 * z) / (z + 1) ** 2
    assert f_eval(2, 3, 1.5, z).to_complex() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(PoleError):
        f_eval(2, 3, 1.5, -1.0)


def test_cauchy_det_matches_numpy_determinant():
    rng = np.random.default_rng(13)
    for size in (1, 2, 4, 6):
        r = rng.normal(size=size) + 1j * rng.normal(size=size)
        s = rng.normal(size=size) + 1j * rng.normal(size=size) + 3.0
        expected = np.linalg.det(1.0 / (r[:, None] - s[None, :]))
        assert cauchy_det(r, s).to_complex() == pytest.approx(expected, rel=1e-10)


def test_cauchy_det_shape_and_pole_errors():
    with pytest.raises(ShapeError):
        cauchy_det([1.0, 2.0], [0.0])
    with pytest.raises(PoleError):
        cauchy_det([1.0, 2.0], [2.0, 3.0])


def test_pi_n_single_level_is_cauchy_pair():
    value = pi_n((1,), [[-0.9]], [[0.2]]).to_complex()
    assert value == pytest.approx(1.0 / 1.1, rel=1e-12)
    with pytest.raises(PoleError):
        pi_n((1,), [[0.5]], [[0.5]])


def test_pi_sigma_tau_full_symbol_matches_pi_n():
    xi, eta = -0.95 + 0.05j, 0.1 - 0.02j
    direct = pi_n((1,), [[xi]], [[eta]]).to_complex()
    grouped = pi_sigma_tau('(123)', '(123)', {'123': [xi]}, {'123': [eta]}).to_complex()
    assert grouped == pytest.approx(direct, rel=1e-12)


def test_rewrite_coefficients():
    assert rewrite_coefficient(2, 2, 2) == 2
    assert rewrite_coefficient(3, 2, 1) == 6
    assert rewrite_coefficient(4, 3, 0) == 1


def test_list_rewrite_commutes_non_pole_pair():
    terms = list_rewrite('13', 0)
    assert len(terms) == 1
    assert str(terms[0].sigma) == '31'
    assert terms[0].sign == 1 and terms[0].magnitude == 1


def test_list_rewrite_expands_pole_pair():
    terms = list_rewrite('112', 0)
    assert [str(t.sigma) for t in terms] == ['211', '(12)1']
    assert [t.magnitude for t in terms] == [1, 2]
    assert terms[0].sign == 1 and terms[1].sign is None
    assert all(t.sigma.multiplicity == (2, 1, 0) for t in terms)


def test_list_rewrite_without_neighbour_raises():
    with pytest.raises(RuleError):
        list_rewrite('12', 1)


def test_nested_radii_increase():
    assert nested_radii(3, 'linear') == pytest.approx([0.10, 0.15, 0.20])
    assert nested_radii(3) == pytest.approx([0.33 / 1.9 ** 2, 0.33 / 1.9, 0.33])
    for mode, saddle in (('geometric', None), ('steepest', 0.2)):
        radii = nested_radii(4, mode, saddle)
        assert all(a < b for a, b in zip(radii, radii[1:]))
        assert radii[-1] < 0.5
    with pytest.raises(DomainError):
        nested_radii(2, 'spiral')


def test_nested_radii_keep_a_fixed_ratio():
    for mode, saddle in (('geometric', None), ('steepest', 0.276)):
        radii = nested_radii(5, mode, saddle)
        for inner, outer in zip(radii, radii[1:]):
            assert outer / inner == pytest.approx(1.9, rel=1e-12)


def test_validate_nesting_rules():
    same = [Contour(0.0, 0.1), Contour(0.0, 0.1)]
    validate_nesting(same, ['1', '1'], 0.0)
    with pytest.raises(ContourNestingError):
        validate_nesting(same, ['1', '2'], 0.0)
    with pytest.raises(ContourNestingError):
        validate_nesting([Contour(0.0, 0.6)], ['1'], 0.0)
    with pytest.raises(ContourNestingError):
        validate_nesting([Contour(-1.0, 0.1)], ['1'], 0.0)


def test_cbc_lattice_uses_prime_point_count():
    generator, n = cbc_lattice(4, 100)
    assert n == 97
    assert generator.shape == (4,)
    assert generator[0] == pytest.approx(1.0 / 97)
    assert np.all((generator > 0) & (generator < 1))


def test_observation_plan_hypotheses():
    with pytest.raises(HypothesisError):
        ObservationPlan((1, 2), (1, 2), (2.0, 1.0)).check_hypotheses()
    with pytest.raises(HypothesisError):
        ObservationPlan((1, 2), (1, 1), (1.0, 1.0)).check_hypotheses()
    with pytest.raises(DomainError):
        ObservationPlan((0,), (1,), (1.0,))
    assert _unit_plan().symbol_exponents('123') == (1, 1, 3.0)


def test_eval_I_full_symbol_single_residue():
    plan = _unit_plan(3.0)
    result = eval_I('(123)', '(123)', plan, radius_mode='linear')
    expected = -np.exp(-3.0 - plan.log_z())
    assert result.real == pytest.approx(expected, rel=1e-10)
    assert abs(result.complex.imag) < 1e-12
    assert result.dimension == 2


def test_eval_I_rejects_shrinking_radii():
    with pytest.raises(ContourNestingError):
        eval_I('3(12)', '123', _unit_plan(), radii=[0.3, 0.2, 0.1])


def test_eval_I_requires_matching_multiplicities():
    with pytest.raises(ShapeError):
        eval_I('12', '123', _unit_plan())


@pytest.mark.slow
@pytest.mark.parametrize('L', [6.0, 20.0, 47.5])
def test_segment_ratios_telescope_to_log_z(L):
    p = make_params(1.0, 1.0, 5.0)
    plan = ObservationPlan.scaled(p, RegionQuery(0.3, 0.2, 0.6, 0.45), L)

    def log_f(M, N, T, z):
        return N * math.log(abs(z)) - M * math.log(abs(z + 1)) + T * z

    total = 0.0
    for level in range(1, plan.m + 1):
        M, N, T = plan.segment(level)
        total += log_f(M, N, T, p.z_minus) - log_f(M, N, T, p.z_plus)
    assert total == pytest.approx(log_z_constant(p, L), rel=1e-12, abs=1e-12)
    assert plan.log_z() == pytest.approx(total, rel=1e-12, abs=1e-12)
