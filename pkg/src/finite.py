"""
Finite-size distributions
The polynomials D^(n)(z), the series terms Q^(n)_m, densities, tails and CDFs of
L(M, N), conditional probabilities, and the deformation-identity verifier
"""

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate as sp_integrate
from scipy.special import binom

from src.config import Config, NUMERIC_DEFAULTS
from src.contours import (Contour, IntegrationVariable, IntegralResult, ObservationPlan,
                          default_nodes, eval_I, integrate, nested_radii, pi_n_kernel)
from src.errors import (DivisionError, DomainError, NonRealResult, ShapeError,
                        ToleranceError, TruncationWarning)
from src.limits import bridge_crossing, BridgeSpec, offdiag_two_point_limit
from src.scaling import (ModelParams, RegionQuery, classify_region, level_curve_time,
                         log_z_constant)
from src.utils import LogComplex

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Normalization:
    log_Z: float

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)


def z_normalization(p: ModelParams, L: float) -> Normalization:
    """Z_L = f_123(z_c^-) / f_123(z_c^+) in closed form"""
    return Normalization(log_z_constant(p, L))


@dataclass
class TermValue:
    """One normalized series term with its quadrature error"""
    n: Tuple[int, ...]
    value: float
    error: float = 0.0
    dimension: int = 0
    warnings: List[str] = field(default_factory=list)


@dataclass
class SeriesResult:
    """Truncated series over n with its shell-decay tail estimate"""
    value: float
    n_max: int
    included_terms: List[Tuple[Tuple[int, ...], float]]
    tail_estimate: float
    log_z: float = 0.0
    quadrature_error: float = 0.0
    exact: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def error(self) -> float:
        return self.tail_estimate + self.quadrature_error

    @property
    def unnormalized(self) -> float:
        return self.value * math.exp(self.log_z)

    def shells(self) -> Dict[int, float]:
        totals: Dict[int, float] = {}
        for n, value in self.included_terms:
            totals[sum(n)] = totals.get(sum(n), 0.0) + value
        return totals


# -- single-point series by rank reduction -------------------------------------

def _gbinom(p: int, i: int) -> Fraction:
    """Generalized binomial C(p, i) for integer p and i >= 0"""
    value = Fraction(1)
    for j in range(i):
        value = value * (p - j) / (j + 1)
    return value


def _matmul(x: List[List[Fraction]], y: List[List[Fraction]]) -> List[List[Fraction]]:
    size = len(x)
    columns = list(zip(*y))
    return [[sum((x[i][k] * columns[j][k] for k in range(size)), Fraction(0)) for j in range(size)]
            for i in range(size)]


def _trace_product(x: List[List[Fraction]], y: List[List[Fraction]]) -> Fraction:
    size = len(x)
    return sum((x[i][k] * y[k][i] for i in range(size) for k in range(size)), Fraction(0))


def _elementary_with_derivative(x: List[List[Fraction]], y: List[List[Fraction]],
                                n_max: int) -> Tuple[List[Fraction], List[Fraction]]:
    """
    e_n(X) and d/de e_n(X + e Y) at e = 0 for n = 0..n_max

    Faddeev-LeVerrier recurrence carried with its first-order perturbation,
    exact over the rationals.
    """
    size = len(x)
    zero = [[Fraction(0)] * size for _ in range(size)]
    m_prev, dm_prev = zero, zero
    c_prev, dc_prev = Fraction(1), Fraction(0)
    values, derivatives = [Fraction(1)], [Fraction(0)]
    for k in range(1, min(n_max, size) + 1):
        m_k = _matmul(x, m_prev)
        dm_k = [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(_matmul(y, m_prev), _matmul(x, dm_prev))]
        for i in range(size):
            m_k[i][i] += c_prev
            dm_k[i][i] += dc_prev
        c_k = -_trace_product(x, m_k) / k
        dc_k = -(_trace_product(y, m_k) + _trace_product(x, dm_k)) / k
        values.append((-1) ** k * c_k)
        derivatives.append((-1) ** k * dc_k)
        m_prev, dm_prev, c_prev, dc_prev = m_k, dm_k, c_k, dc_k
    return values, derivatives


def _fraction_log(value: Fraction) -> Tuple[int, float]:
    """(sign, log|value|) of a possibly huge rational"""
    if value == 0:
        return 0, -math.inf
    sign = 1 if value > 0 else -1
    return sign, math.log(abs(value.numerator)) - math.log(value.denominator)


@dataclass(frozen=True)
class SinglePointTerms:
    """
    Signed log terms of the single-point series

    cdf[n] = (-1)^n D~^(n)/(n!)^2 and density[n] = (-1)^n D^(n)/(n!)^2,
    unnormalized, as (sign, log|value|) pairs; rank = min(M, N).
    """
    cdf: Tuple[Tuple[int, float], ...]
    density: Tuple[Tuple[int, float], ...]
    rank: int


def single_point_terms(M: int, N: int, T: float, n_max: Optional[int] = None) -> SinglePointTerms:
    """
    Exact terms of the m = 1 series

    The eta-integrals reduce the kernel to a rank-min(M, N) operator; the n-th
    term is then the n-th elementary symmetric function of a small matrix whose
    entries are residues at 0 and -1, computed over the rationals.
    """
    if M < 1 or N < 1:
        raise DomainError(f"M and N must be at least 1, got ({M}, {N})")
    if T < 0:
        raise DomainError(f"T must be nonnegative, got {T}")
    if N > M:
        M, N = N, M
    n_max = N if n_max is None else min(int(n_max), N)
    t = Fraction(T)

    powers = [Fraction(1)]
    for j in range(1, max(M, N) + 1):
        powers.append(powers[-1] * t / j)  # t^j / j!

    def g(s: int) -> Fraction:
        if s < 0:
            return Fraction(0)
        return sum((math.comb(M, i) * (-1) ** (s - i) * powers[s - i] for i in range(min(s, M) + 1)),
                   Fraction(0))

    def b(r: int) -> Fraction:
        p = N - r - 2
        return sum(((-1) ** ((p + i) % 2) * _gbinom(p, i) * powers[M - 1 - i] for i in range(M)),
                   Fraction(0))

    g_values = {s: g(s) for s in range(-2, N)}
    b_values = {r: b(r) for r in range(-1, 2 * N - 1)}
    h = [[-g_values.get(N - 1 - j - k, Fraction(0)) if N - 1 - j - k >= 0 else Fraction(0)
          for k in range(N)] for j in range(N)]
    h_dot = [[g_values.get(N - 2 - j - k, Fraction(0)) if N - 2 - j - k >= 0 else Fraction(0)
              for k in range(N)] for j in range(N)]
    b_mat = [[b_values[j + k] for k in range(N)] for j in range(N)]
    b_shift = [[b_values[j + k - 1] for k in range(N)] for j in range(N)]

    x = _matmul(h, b_mat)
    y = [[u + v for u, v in zip(r1, r2)] for r1, r2 in zip(_matmul(h_dot, b_mat), _matmul(h, b_shift))]
    values, derivatives = _elementary_with_derivative(x, y, n_max)

    cdf, density = [], []
    for n, (e_n, d_n) in enumerate(zip(values, derivatives)):
        sign, log_abs = _fraction_log(e_n)
        cdf.append(((-1) ** n * sign, log_abs - n * T))
        sign, log_abs = _fraction_log(d_n)
        density.append(((-1) ** n * sign, log_abs - n * T))
    return SinglePointTerms(tuple(cdf), tuple(density), N)


def _signed_exp(term: Tuple[int, float], shift: float = 0.0) -> float:
    sign, log_abs = term
    if sign == 0:
        return 0.0
    return sign * math.exp(log_abs + shift)


def _shell_tail(shells: Sequence[float]) -> float:
    """Geometric extrapolation from the decay ratio of the last two shells"""
    if not shells:
        return 0.0
    last = abs(shells[-1])
    if len(shells) < 2 or shells[-2] == 0:
        return last
    ratio = last / abs(shells[-2])
    if ratio >= 1.0:
        return last
    return last * ratio / (1.0 - ratio)


def _check_truncation(result: SeriesResult):
    if result.tail_estimate > NUMERIC_DEFAULTS['truncation_ratio'] * abs(result.value):
        message = (f"Series tail estimate {result.tail_estimate:.3g} exceeds "
                   f"{NUMERIC_DEFAULTS['truncation_ratio']:.0e} of |value|={abs(result.value):.3g} "
                   f"at n_max={result.n_max}")
        warnings.warn(message, TruncationWarning)
        logger.warning(message)
        result.warnings.append(message)


def _single_point_series(M: int, N: int, T: float, n_max: Optional[int], log_z: float,
                         kind: str) -> SeriesResult:
    terms = single_point_terms(M, N, T, n_max)
    chosen = terms.density if kind == 'density' else terms.cdf
    start = 0 if kind == 'cdf' else 1
    included = [((n,), _signed_exp(chosen[n], -log_z)) for n in range(start, len(chosen))]
    value = sum(v for _, v in included)
    bound = terms.rank if n_max is None else int(n_max)
    exact = bound >= terms.rank
    tail = 0.0 if exact else _shell_tail([v for n, v in included if n[0] >= 1])
    result = SeriesResult(value, bound, included, tail, log_z, 0.0, exact)
    _check_truncation(result)
    return result


def cdf(M: int, N: int, T: float, n_max: Optional[int] = None) -> SeriesResult:
    """P(L(M, N) <= T) = sum_n (-1)^n D~^(n) / (n!)^2"""
    return _single_point_series(M, N, T, n_max, 0.0, 'cdf')


# -- D^(n)(z) and Q^(n) ---------------------------------------------------------

def _layout_radii(m: int, mode: str, saddle: Optional[float]) -> List[float]:
    """Radii of C_m^in, ..., C_2^in, C_1, C_2^out, ..., C_m^out"""
    return nested_radii(2 * m - 1, mode, saddle)


def _check_n(plan: ObservationPlan, n: Sequence[int]) -> Tuple[int, ...]:
    n = tuple(int(v) for v in n)
    if len(n) != plan.m:
        raise ShapeError(f"n has {len(n)} entries for an m={plan.m} plan")
    if any(v < 0 for v in n):
        raise DomainError(f"n must be nonnegative, got {n}")
    return n


def _coefficient_integral(plan: ObservationPlan, n: Tuple[int, ...], outs: Sequence[Tuple[int, int]],
                          nodes: int, mode: str, method: str, threads: Optional[int],
                          seed: Optional[int], estimate_error: bool) -> IntegralResult:
    """Coefficient integral with outs[i-2] = (#xi, #eta) of level i on the outer circle"""
    m = plan.m
    saddles = plan.saddle_points()
    xi_radii = _layout_radii(m, mode, 1.0 + saddles[0] if saddles else None)
    eta_radii = _layout_radii(m, mode, -saddles[1] if saddles else None)
    kernel, _, _ = pi_n_kernel(n)
    variables = []
    for level in range(1, m + 1):
        exponents = plan.symbol_exponents(level)
        if level == 1:
            xi_slots = [m - 1] * n[0]
            eta_slots = [m - 1] * n[0]
        else:
            out_xi, out_eta = outs[level - 2]
            inner, outer = m - level, m + level - 2
            xi_slots = [inner] * (n[level - 1] - out_xi) + [outer] * out_xi
            eta_slots = [inner] * (n[level - 1] - out_eta) + [outer] * out_eta
        variables += [IntegrationVariable('xi', exponents, Contour(-1.0, xi_radii[s], nodes)) for s in xi_slots]
        variables += [IntegrationVariable('eta', exponents, Contour(0.0, eta_radii[s], nodes)) for s in eta_slots]
    return integrate(kernel, variables, plan.log_z(), method, estimate_error, threads, seed)


def _level_choices(n: Tuple[int, ...]) -> List[Tuple[Tuple[int, int], ...]]:
    return list(itertools.product(*[list(itertools.product(range(v + 1), repeat=2)) for v in n[1:]]))


def _multiplicity(n: Tuple[int, ...], outs: Sequence[Tuple[int, int]]) -> int:
    value = 1
    for count, (out_xi, out_eta) in zip(n[1:], outs):
        value *= math.comb(count, out_xi) * math.comb(count, out_eta)
    return value


def z_weight(n_i: int, n_next: int, degree: int, method: str = 'trapezoid') -> float:
    """
    (1/2 pi i) times the integral over |z| = 2 of z^degree (z+1)^(n_i - n_next - 1) / z^(n_next + 1)
    """
    power = n_i - n_next - 1
    if method == 'exact':
        j = degree - n_next + power
        return float(binom(power, j)) if j >= 0 else 0.0
    nodes = NUMERIC_DEFAULTS['z_nodes']
    z = NUMERIC_DEFAULTS['z_radius'] * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    return float(np.mean(z ** (degree - n_next) * (z + 1.0) ** power).real)


def eval_D_n(plan: ObservationPlan, n: Sequence[int], z: Sequence[complex] = (),
             nodes: Optional[int] = None, radius_mode: Optional[str] = None,
             method: str = 'auto', threads: Optional[int] = None,
             seed: Optional[int] = None) -> LogComplex:
    """
    D^(n)(z) / Z: every in/out choice of the bracketed contours, one tensor quadrature each

    Within a level the integrand is symmetric, so only the number of variables
    on the outer circle matters; choices are weighted by binomial multiplicities.
    """
    n = _check_n(plan, n)
    z = tuple(complex(v) for v in z)
    if len(z) != plan.m - 1:
        raise ShapeError(f"D^(n) needs {plan.m - 1} z-values, got {len(z)}")
    if any(v == 0 for v in z):
        raise DomainError("z_i must be nonzero")
    if plan.m == 1 and method in ('auto', 'exact'):
        M, N, T = plan.final_point
        terms = single_point_terms(M, N, T, n[0])
        if n[0] >= len(terms.density):
            return LogComplex.zero()
        sign, log_abs = terms.density[n[0]]
        if sign == 0:
            return LogComplex.zero()
        log_factorial = 2 * math.lgamma(n[0] + 1)
        value = LogComplex(log_abs + log_factorial - plan.log_z(), 0.0)
        return value if (-1) ** n[0] * sign > 0 else -value
    if method == 'exact':
        method = 'auto'
    dimension = 2 * sum(n)
    nodes = nodes or default_nodes(dimension) or NUMERIC_DEFAULTS['nodes_by_dimension'][8]
    mode = radius_mode or Config.RADIUS_MODE
    total = LogComplex.zero()
    for outs in _level_choices(n):
        coefficient = _coefficient_integral(plan, n, outs, nodes, mode, method, threads, seed, False)
        monomial = LogComplex.one()
        for value, (out_xi, out_eta) in zip(z, outs):
            monomial = monomial * LogComplex.from_complex(value ** (out_xi + out_eta))
        total = total + coefficient.value * _multiplicity(n, outs) * monomial
    return total


def _q_term(plan: ObservationPlan, n: Tuple[int, ...], nodes: Optional[int], mode: str,
            method: str, z_method: str, threads: Optional[int], seed: Optional[int]) -> TermValue:
    m = plan.m
    if n[-1] == 0:
        return TermValue(n, 0.0)
    if m == 1 and method == 'auto':
        M, N, T = plan.final_point
        terms = single_point_terms(M, N, T, n[0])
        if n[0] >= len(terms.density):
            return TermValue(n, 0.0)
        # Q^(n) = (-1)^n D^(n)
        value = _signed_exp(terms.density[n[0]], 2 * math.lgamma(n[0] + 1) - plan.log_z())
        return TermValue(n, value)

    dimension = 2 * sum(n)
    nodes = nodes or default_nodes(dimension) or NUMERIC_DEFAULTS['nodes_by_dimension'][8]
    sign = (-1) ** (sum(n) + m - 1)
    total = LogComplex.zero()
    error = 0.0
    scale = 0.0
    notes: List[str] = []
    for outs in _level_choices(n):
        weight = 1.0
        for i, (out_xi, out_eta) in enumerate(outs):
            weight *= z_weight(n[i], n[i + 1], out_xi + out_eta, z_method)
        if abs(weight) < 1e-12:
            continue
        factor = sign * weight * _multiplicity(n, outs)
        coefficient = _coefficient_integral(plan, n, outs, nodes, mode,
                                            'auto' if method == 'auto' else method,
                                            threads, seed, True)
        contribution = coefficient.value * factor
        total = total + contribution
        error += abs(factor) * coefficient.error
        scale = max(scale, abs(contribution))
        notes.extend(coefficient.warnings)
    value = total.to_complex()
    floor = max(NUMERIC_DEFAULTS['imag_tolerance'] * abs(value), error, 1e-13 * scale)
    if abs(value.imag) > floor:
        raise NonRealResult(f"Q^{n} has imaginary part {value.imag:.3g} against real part {value.real:.3g}")
    return TermValue(n, value.real, error, dimension, notes)


def eval_Q_n(plan: ObservationPlan, n: Sequence[int], nodes: Optional[int] = None,
             radius_mode: Optional[str] = None, method: str = 'auto', z_method: str = 'trapezoid',
             threads: Optional[int] = None, seed: Optional[int] = None) -> float:
    """Q^(n)_m / Z from the z-circle integrals of D^(n)"""
    n = _check_n(plan, n)
    return _q_term(plan, n, nodes, radius_mode or Config.RADIUS_MODE, method, z_method, threads, seed).value


def _compositions(total: int, parts: int) -> Iterable[Tuple[int, ...]]:
    """Vectors in N^parts (entries >= 1) with the given sum"""
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield tuple(bounds[k + 1] - bounds[k] for k in range(parts))


def eval_Q(plan: ObservationPlan, n_max: Optional[int] = None, nodes: Optional[int] = None,
           radius_mode: Optional[str] = None, method: str = 'auto',
           threads: Optional[int] = None, seed: Optional[int] = None) -> SeriesResult:
    """
    Q_m / Z truncated to |n| <= n_max

    Args:
        plan: Observation plan (m >= 1)
        n_max: Truncation bound on |n|; defaults to m + 2 (exact rank for m = 1)
        nodes: Quadrature nodes per circle (default by dimension)
        radius_mode: Radius layout of the bracketed circles

    Returns:
        SeriesResult with the shell-decay tail estimate
    """
    m = plan.m
    if m == 1 and method == 'auto':
        M, N, T = plan.final_point
        return _single_point_series(M, N, T, n_max, plan.log_z(), 'density')
    n_max = m + NUMERIC_DEFAULTS['n_max_offset'] if n_max is None else int(n_max)
    if n_max < m:
        raise DomainError(f"n_max={n_max} must be at least m={m}")
    mode = radius_mode or Config.RADIUS_MODE
    included = []
    shells = []
    quad_error = 0.0
    notes: List[str] = []
    for shell in range(m, n_max + 1):
        shell_total = 0.0
        for n in _compositions(shell, m):
            term = _q_term(plan, n, nodes, mode, method, 'trapezoid', threads, seed)
            weight = 1.0 / math.prod(math.factorial(v) ** 2 for v in n)
            included.append((n, weight * term.value))
            shell_total += weight * term.value
            quad_error += weight * term.error
            notes.extend(term.warnings)
        shells.append(shell_total)
        logger.info(f"Series shell |n|={shell}: {shell_total:.6g}")
    value = sum(v for _, v in included)
    result = SeriesResult(value, n_max, included, _shell_tail(shells), plan.log_z(), quad_error,
                          warnings=notes)
    _check_truncation(result)
    return result


@dataclass
class ConditionalProbability:
    value: float
    error: float
    numerator: SeriesResult
    denominator: SeriesResult
    warnings: List[str] = field(default_factory=list)


def conditional_probability(plan: ObservationPlan, n_max: Optional[int] = None,
                            nodes: Optional[int] = None, radius_mode: Optional[str] = None,
                            threads: Optional[int] = None, seed: Optional[int] = None) -> ConditionalProbability:
    """
    P(L(M_i, N_i) > T_i, i < m | L(M_m, N_m) = T_m) = Q_m / Q_1

    Both series carry the plan's normalization, which cancels in the ratio.
    """
    if plan.m not in (2, 3):
        raise DomainError(f"Conditional probabilities need m in {{2, 3}}, got m={plan.m}")
    plan.check_hypotheses()
    numerator = eval_Q(plan, n_max, nodes, radius_mode, threads=threads, seed=seed)
    denominator = eval_Q(plan.tail_plan(), threads=threads, seed=seed)
    if abs(denominator.value) <= denominator.error:
        raise DivisionError(f"Denominator {denominator.value:.3g} is within its error {denominator.error:.3g} of zero")
    value = numerator.value / denominator.value
    error = math.hypot(numerator.error, value * denominator.error) / abs(denominator.value)
    logger.info(f"Conditional probability {value:.6g} +/- {error:.2g} (n_max={numerator.n_max})")
    return ConditionalProbability(value, error, numerator, denominator,
                                  numerator.warnings + denominator.warnings)


def density_and_tail(M: int, N: int, T: float, n_max: Optional[int] = None,
                     tail_method: str = 'series') -> Tuple[float, float]:
    """
    Density and upper tail of L(M, N) at T

    Args:
        tail_method: 'series' (exact once n_max >= min(M, N)) or 'quad'
            (density integrated on [T, T + 40] plus an exponential tail)
    """
    if M < 1 or N < 1:
        raise DomainError(f"M and N must be at least 1, got ({M}, {N})")
    density = _single_point_series(M, N, T, n_max, 0.0, 'density').value
    if tail_method == 'series':
        terms = single_point_terms(M, N, T, n_max)
        tail = -sum(_signed_exp(term) for term in terms.cdf[1:])
        return density, tail
    if tail_method != 'quad':
        raise DomainError(f"Unknown tail method {tail_method!r}")

    def pdf(t: float) -> float:
        return _single_point_series(M, N, t, n_max, 0.0, 'density').value

    cut = T + NUMERIC_DEFAULTS['tail_cut']
    body, _ = sp_integrate.quad(pdf, T, cut, limit=200, epsabs=1e-13, epsrel=1e-10)
    step = 0.5
    upper, lower = pdf(cut + step), pdf(cut - step)
    beyond = 0.0
    if upper > 0 and lower > 0:
        slope = (math.log(lower) - math.log(upper)) / (2 * step)
        if slope > 0:
            beyond = pdf(cut) / slope
    return density, body + beyond


def density_sweep(M: int, N: int, grid: Sequence[float], n_max: Optional[int] = None,
                  tail_method: str = 'series') -> pd.DataFrame:
    """T-sweep table with columns T, density, tail, err"""
    rows = []
    for T in grid:
        series = _single_point_series(M, N, T, n_max, 0.0, 'density')
        density, tail = density_and_tail(M, N, T, n_max, tail_method)
        rows.append({'T': float(T), 'density': density, 'tail': tail, 'err': series.tail_estimate})
    return pd.DataFrame(rows, columns=['T', 'density', 'tail', 'err'])


# -- deformation identities -----------------------------------------------------

@dataclass(frozen=True)
class Identity:
    """Signed integral lists for lhs = rhs, with the regions where the rhs suits steepest descent"""
    lhs: Tuple[Tuple[int, str, str], ...]
    rhs: Tuple[Tuple[int, str, str], ...]
    regions: Tuple[str, ...]


IDENTITIES: Dict[str, Identity] = {
    'QQ111-a': Identity(
        lhs=((1, '123', '123'),),
        rhs=((1, '231', '123'), (1, '3(12)', '123'), (1, '(123)', '123')),
        regions=('R1', 'R2')),
    'QQ111-b': Identity(
        lhs=((1, '123', '123'),),
        rhs=((1, '321', '123'), (1, '(23)1', '123'), (1, '3(12)', '123'), (1, '(123)', '123')),
        regions=('R3', 'R4')),
    'QQ111-c': Identity(
        lhs=((1, '123', '123'),),
        rhs=((1, '312', '123'), (1, '(23)1', '123'), (1, '(123)', '123')),
        regions=('R5',)),
    'QQ111-d': Identity(
        lhs=((1, '123', '123'),),
        rhs=((1, '312', '213'), (1, '(23)1', '213'), (1, '(123)', '213'),
             (-1, '312', '(12)3'), (-1, '(23)1', '(12)3'), (1, '(123)', '(12)3')),
        regions=('R6', 'R7')),
    'QQ121': Identity(
        lhs=((1, '3122', '1223'), (1, '1223', '3122')),
        rhs=((2, '3122', '2231'), (2, '3122', '2(12)3'), (-2, '(23)12', '2231'), (-2, '(123)2', '2231'),
             (-2, '3122', '23(12)'), (4, '(23)12', '23(12)'), (-4, '(123)2', '23(12)'),
             (-2, '3122', '2(23)1'), (-4, '(23)12', '2(23)1'), (-4, '(123)2', '2(23)1'),
             (-2, '3122', '(23)(12)'), (-4, '(23)12', '(23)(12)'), (4, '(123)2', '(23)(12)')),
        regions=('R6', 'R7')),
}


@dataclass
class IdentityReport:
    identity_id: str
    lhs: float
    rhs: float
    residual: float
    tolerance: float
    passed: bool
    dimension: int
    node_spread: float
    region: str
    applicable: bool
    terms: List[Dict[str, object]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def identity_tolerance(dimension: int) -> float:
    for limit, tolerance in sorted(NUMERIC_DEFAULTS['identity_tolerance'].items()):
        if dimension <= limit:
            return tolerance
    return max(NUMERIC_DEFAULTS['identity_tolerance'].values())


def verify_identity(identity_id: str, p: ModelParams, q: RegionQuery, L: float,
                    r1: float = 0.0, r2: float = 0.0, nodes: Optional[int] = None,
                    radius_mode: str = 'geometric', method: str = 'auto',
                    threads: Optional[int] = None, seed: Optional[int] = None,
                    radii: Optional[Sequence[float]] = None) -> IdentityReport:
    """
    Evaluate both sides of a deformation identity on the scaled plan

    Returns:
        IdentityReport with residual |lhs - rhs| / max(|lhs|, |rhs|)
    """
    if identity_id not in IDENTITIES:
        raise DomainError(f"Unknown identity {identity_id!r}; expected one of {sorted(IDENTITIES)}")
    identity = IDENTITIES[identity_id]
    label = classify_region(p, q)
    plan = ObservationPlan.scaled(p, q, L, r1, r2)
    cache: Dict[Tuple[str, str], IntegralResult] = {}
    terms = []
    notes: List[str] = []

    def side(entries) -> float:
        total = 0.0
        for coefficient, sigma, tau in entries:
            key = (sigma, tau)
            if key not in cache:
                cache[key] = eval_I(sigma, tau, plan, nodes=nodes, radius_mode=radius_mode,
                                    method=method, threads=threads, seed=seed, radii=radii)
                notes.extend(cache[key].warnings)
            result = cache[key]
            terms.append({'coefficient': coefficient, 'sigma': sigma, 'tau': tau,
                          'value': result.real, 'error': result.error, 'dimension': result.dimension})
            total += coefficient * result.real
        return total

    lhs = side(identity.lhs)
    rhs = side(identity.rhs)
    scale = max(abs(lhs), abs(rhs))
    residual = abs(lhs - rhs) / scale if scale > 0 else 0.0
    dimension = max(r.dimension for r in cache.values())
    tolerance = identity_tolerance(dimension)
    spread = max((r.spread or 0.0) for r in cache.values()) / scale if scale > 0 else 0.0
    applicable = any(tag in identity.regions for tag in label.candidates())
    report = IdentityReport(identity_id, lhs, rhs, residual, tolerance, residual < tolerance,
                            dimension, spread, label.tag, applicable, terms, notes)
    logger.info(f"Identity {identity_id} in {label.tag}: residual {residual:.3g} "
                f"(tolerance {tolerance:.0e}) {'passed' if report.passed else 'FAILED'}")
    return report


def require_identity(report: IdentityReport):
    """Raise if a verified identity missed its tolerance tier"""
    if not report.passed:
        raise ToleranceError(f"Identity {report.identity_id} residual {report.residual:.3g} "
                             f"exceeds {report.tolerance:.0e}")


# -- leading integrals ----------------------------------------------------------

LEADING_LISTS = {
    'a': ('(123)', '123'),
    'b': ('(123)', '(12)3'),
    'c': ('(123)2', '(23)(12)'),
}


@dataclass
class LeadingResult:
    which: str
    region: str
    L: float
    integral: float
    scaled: float
    prediction: float
    gap: float
    error: float


def leading_prediction(p: ModelParams, q: RegionQuery, r1: float, r2: float, which: str) -> float:
    """Bridge probability targeted by a leading integral"""
    if which == 'a':
        return offdiag_two_point_limit(p, q, r1, r2)
    u2 = level_curve_time(p, q.x2, q.y2)
    single = bridge_crossing(BridgeSpec(1.0, (u2,), (r2 / p.c_plus,))).value
    if which == 'b':
        return single
    if which == 'c':
        return single - offdiag_two_point_limit(p, q, r1, r2)
    raise DomainError(f"Unknown leading integral {which!r}")


def leading_integral(p: ModelParams, q: RegionQuery, L: float, r1: float = 0.0, r2: float = 0.0,
                     which: Optional[str] = None, nodes: Optional[int] = None,
                     radius_mode: str = 'geometric', threads: Optional[int] = None,
                     seed: Optional[int] = None) -> LeadingResult:
    """
    Normalized leading-term integral scaled by -2 pi L D / sqrt(ab)

    'a' = I^(123)_123 for R1-R5; 'b' = I^(123)_(12)3 and 'c' = I^(123)2_(23)(12) for R6-R7.
    """
    label = classify_region(p, q)
    if which is None:
        which = 'b' if set(label.candidates()) & {'R6', 'R7'} else 'a'
    if which not in LEADING_LISTS:
        raise DomainError(f"Unknown leading integral {which!r}")
    sigma, tau = LEADING_LISTS[which]
    plan = ObservationPlan.scaled(p, q, L, r1, r2)
    result = eval_I(sigma, tau, plan, nodes=nodes, radius_mode=radius_mode, threads=threads, seed=seed)
    factor = -2.0 * math.pi * L * p.D / math.sqrt(p.a * p.b)
    scaled = factor * result.real
    prediction = leading_prediction(p, q, r1, r2, which)
    return LeadingResult(which, label.tag, L, result.real, scaled, prediction,
                         abs(scaled - prediction), abs(factor) * result.error)
