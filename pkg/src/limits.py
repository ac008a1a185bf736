"""
Limit laws
Brownian-bridge crossing probabilities (closed form, Genz, Monte Carlo and the
vertical-line contour identity), the diagonal two-bridge functional and the
off-diagonal two-point limit
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.stats import norm
from scipy.stats._multivariate import multivariate_normal_frozen

from src.config import Config, NUMERIC_DEFAULTS
from src.errors import DomainError, MethodError
from src.scaling import ModelParams, RegionQuery, level_curve_time

logger = logging.getLogger(__name__)

BRIDGE_METHODS = ('closed_form', 'genz', 'gaussian_mc', 'contour')


@dataclass(frozen=True)
class BridgeSpec:
    """P(sqrt(A) B(a_i / A) > b_i for all i) with 0 < a_1 < ... < a_{m-1} < A"""
    total: float
    times: Tuple[float, ...]
    thresholds: Tuple[float, ...]

    def __post_init__(self):
        if not self.total > 0:
            raise DomainError(f"Total time must be positive, got {self.total}")
        if len(self.times) != len(self.thresholds) or not self.times:
            raise DomainError("Times and thresholds must be nonempty and of equal length")
        previous = 0.0
        for t in self.times:
            if not previous < t < self.total:
                raise DomainError(f"Times must increase strictly inside (0, {self.total}): {self.times}")
            previous = t

    def covariance(self) -> np.ndarray:
        a = np.asarray(self.times, dtype=float)
        low = np.minimum.outer(a, a)
        high = np.maximum.outer(a, a)
        return low * (self.total - high) / self.total


@dataclass(frozen=True)
class DiagSpec:
    """Constraints (s_i, t_i, h_i) on B_1(t) - |B_2(t) - s| > h"""
    params: ModelParams
    pairs: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        if not self.pairs:
            raise DomainError("DiagSpec needs at least one (s, t, h) constraint")
        for s, t, h in self.pairs:
            if not 0.0 < t < 1.0:
                raise DomainError(f"Diagonal times must lie in (0, 1), got {t}")


@dataclass
class BridgeResult:
    value: float
    error: float
    method: str
    diagnostics: Dict[str, float] = field(default_factory=dict)


def bivariate_normal_survival(h: float, k: float, rho: float) -> float:
    """
    P(X > h, Y > k) for a standard bivariate normal with correlation rho

    Integrates phi(x) * P(Y > k | X = x) over x > h.
    """
    if not -1.0 < rho < 1.0:
        raise DomainError(f"Correlation must lie in (-1, 1), got {rho}")
    if rho == 0.0:
        return float(norm.sf(h) * norm.sf(k))
    scale = math.sqrt(1.0 - rho * rho)

    def conditional_tail(x: float) -> float:
        return norm.pdf(x) * norm.sf((k - rho * x) / scale)

    lower = max(h, -40.0)
    if lower >= 40.0:
        return 0.0
    value, _ = integrate.quad(conditional_tail, lower, 40.0, epsabs=1e-13, epsrel=1e-12,
                              limit=200, points=[max(lower, min(40.0, k * rho))] if lower < k * rho < 40.0 else None)
    return float(min(max(value, 0.0), 1.0))


def _closed_form(spec: BridgeSpec) -> BridgeResult:
    cov = spec.covariance()
    if len(spec.times) == 1:
        value = float(norm.sf(spec.thresholds[0] / math.sqrt(cov[0, 0])))
        return BridgeResult(value, 0.0, 'closed_form')
    if len(spec.times) == 2:
        sd = np.sqrt(np.diag(cov))
        rho = cov[0, 1] / (sd[0] * sd[1])
        value = bivariate_normal_survival(spec.thresholds[0] / sd[0], spec.thresholds[1] / sd[1], rho)
        return BridgeResult(value, 1e-10, 'closed_form')
    raise MethodError(f"closed_form supports at most two times, got {len(spec.times)}")


def _genz(spec: BridgeSpec, seed: Optional[int]) -> BridgeResult:
    cov = spec.covariance()
    upper = -np.asarray(spec.thresholds, dtype=float)
    distribution = multivariate_normal_frozen(mean=np.zeros(len(upper)), cov=cov, abseps=1e-8, releps=1e-8,
                                              seed=np.random.default_rng(Config.DEFAULT_SEED if seed is None else seed))
    value = float(distribution.cdf(upper))
    return BridgeResult(value, 1e-8, 'genz')


def _mc_chunk(spec: BridgeSpec, steps: int, paths: int, seed_seq: np.random.SeedSequence) -> int:
    rng = np.random.default_rng(seed_seq)
    dt = spec.total / steps
    walk = np.cumsum(rng.normal(0.0, math.sqrt(dt), size=(paths, steps)), axis=1)
    idx = np.clip(np.rint(np.asarray(spec.times) / dt).astype(int), 1, steps - 1)
    grid_times = idx * dt
    # pin the endpoint
    bridge = walk[:, idx - 1] - np.outer(walk[:, -1], grid_times / spec.total)
    return int(np.all(bridge > np.asarray(spec.thresholds), axis=1).sum())


def _gaussian_mc(spec: BridgeSpec, n_paths: Optional[int], seed: Optional[int],
                 threads: Optional[int]) -> BridgeResult:
    steps = NUMERIC_DEFAULTS['bridge_mc_steps']
    n_paths = int(n_paths or NUMERIC_DEFAULTS['bridge_mc_paths'])
    chunk = 4096
    sizes = [min(chunk, n_paths - start) for start in range(0, n_paths, chunk)]
    children = np.random.SeedSequence(Config.DEFAULT_SEED if seed is None else seed).spawn(len(sizes))
    threads = threads or Config.THREADS
    with ThreadPoolExecutor(max_workers=threads) as pool:
        hits = sum(pool.map(lambda args: _mc_chunk(spec, steps, *args), zip(sizes, children)))
    value = hits / n_paths
    error = math.sqrt(max(value * (1.0 - value), 1.0 / n_paths) / n_paths)
    return BridgeResult(value, error, 'gaussian_mc', {'paths': float(n_paths), 'steps': float(steps)})


def _contour(spec: BridgeSpec) -> BridgeResult:
    """
    Vertical-line form: sqrt(2 pi A) / (2 pi i)^m times the integral of
    prod exp((a_i - a_{i-1}) u_i^2 / 2 + (b_i - b_{i-1}) u_i) / prod (u_{i+1} - u_i),
    lines at Re u_i = i, evaluated as a chain of trapezoid matrix-vector products
    """
    a = np.concatenate([[0.0], np.asarray(spec.times, dtype=float), [spec.total]])
    b = np.concatenate([[0.0], np.asarray(spec.thresholds, dtype=float), [0.0]])
    da, db = np.diff(a), np.diff(b)
    m = len(da)
    step = NUMERIC_DEFAULTS['bridge_step']
    extent = NUMERIC_DEFAULTS['bridge_extent']

    lines = []
    edge = 0.0
    for i in range(m):
        reach = extent / math.sqrt(da[i])
        y = np.arange(-reach, reach + step / 2, step)
        u = (i + 1) + 1j * y
        weights = np.exp(0.5 * da[i] * u * u + db[i] * u) * step
        edge = max(edge, float(max(abs(weights[0]), abs(weights[-1])) / np.max(np.abs(weights))))
        lines.append((u, weights))

    u_prev, carry = lines[0]
    for u_next, weights in lines[1:]:
        carry = weights * ((1.0 / (u_next[:, None] - u_prev[None, :])) @ carry)
        u_prev = u_next
    total = complex(np.sum(carry))
    value = math.sqrt(2.0 * math.pi * spec.total) / (2.0 * math.pi) ** m * total
    if abs(value.imag) > 1e-8:
        logger.warning(f"Contour bridge value has imaginary part {value.imag:.3g}")
    return BridgeResult(value.real, abs(value.imag), 'contour',
                        {'truncation_edge': edge, 'imag_residue': abs(value.imag)})


def bridge_crossing(spec: BridgeSpec, method: str = 'closed_form', n_paths: Optional[int] = None,
                    seed: Optional[int] = None, threads: Optional[int] = None) -> BridgeResult:
    """
    Probability that a scaled Brownian bridge exceeds every threshold

    Args:
        spec: Total time, crossing times and thresholds
        method: 'closed_form' (at most two times), 'genz', 'gaussian_mc' or 'contour'

    Returns:
        BridgeResult with value and error estimate
    """
    if method == 'closed_form':
        return _closed_form(spec)
    if method == 'genz':
        return _genz(spec, seed)
    if method == 'gaussian_mc':
        return _gaussian_mc(spec, n_paths, seed, threads)
    if method == 'contour':
        return _contour(spec)
    raise MethodError(f"Unknown bridge method {method!r}; expected one of {BRIDGE_METHODS}")


def _branch_probability(times: Sequence[float], thresholds: Sequence[float]) -> float:
    merged: Dict[float, float] = {}
    for t, threshold in zip(times, thresholds):
        merged[t] = max(threshold, merged.get(t, -math.inf))
    ordered = sorted(merged)
    spec = BridgeSpec(1.0, tuple(ordered), tuple(merged[t] for t in ordered))
    return bridge_crossing(spec, 'closed_form' if len(ordered) <= 2 else 'genz').value


def diag_limit(spec: DiagSpec, method: str = 'factorized', n_paths: Optional[int] = None,
               seed: Optional[int] = None) -> BridgeResult:
    """
    P(B_1(t_i) - |B_2(t_i) - s_i| > h_i for all i)

    The event equals min(sqrt2 c+ B+(t) - s, sqrt2 c- B-(t) + s) > h, which
    factorizes over the independent bridges B+ and B-.
    """
    p = spec.params
    times = [t for _, t, _ in spec.pairs]
    if method == 'factorized':
        plus = [(h + s) / (math.sqrt(2.0) * p.c_plus) for s, _, h in spec.pairs]
        minus = [(h - s) / (math.sqrt(2.0) * p.c_minus) for s, _, h in spec.pairs]
        value = _branch_probability(times, plus) * _branch_probability(times, minus)
        return BridgeResult(value, 1e-8, 'factorized')
    if method == 'gaussian_mc':
        n_paths = int(n_paths or NUMERIC_DEFAULTS['bridge_mc_paths'])
        b1, b2 = sample_correlated_bridges(p, times, n_paths, seed)
        shifts = np.array([s for s, _, _ in spec.pairs])
        levels = np.array([h for _, _, h in spec.pairs])
        hits = np.all(b1 - np.abs(b2 - shifts) > levels, axis=1)
        value = float(hits.mean())
        return BridgeResult(value, math.sqrt(max(value * (1 - value), 1.0 / n_paths) / n_paths),
                            'gaussian_mc', {'paths': float(n_paths)})
    raise MethodError(f"Unknown diagonal method {method!r}")


def sample_correlated_bridges(p: ModelParams, times: Sequence[float], n_paths: int,
                              seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Samples of (B_1, B_2) = ((c+ B+ + c- B-)/sqrt2, (c+ B+ - c- B-)/sqrt2) at the given times"""
    t = np.asarray(times, dtype=float)
    if np.any((t <= 0) | (t >= 1)):
        raise DomainError(f"Bridge times must lie in (0, 1), got {times}")
    cov = np.minimum.outer(t, t) - np.outer(t, t)
    rng = np.random.default_rng(Config.DEFAULT_SEED if seed is None else seed)
    plus = rng.multivariate_normal(np.zeros(len(t)), cov, size=n_paths, method='eigh')
    minus = rng.multivariate_normal(np.zeros(len(t)), cov, size=n_paths, method='eigh')
    b1 = (p.c_plus * plus + p.c_minus * minus) / math.sqrt(2.0)
    b2 = (p.c_plus * plus - p.c_minus * minus) / math.sqrt(2.0)
    return b1, b2


def _branch(q: RegionQuery) -> str:
    below = [y < x for x, y in q.points()]
    above = [y > x for x, y in q.points()]
    if all(below):
        return 'below'
    if all(above):
        return 'above'
    raise DomainError("Both points must lie strictly on the same side of the diagonal")


def offdiag_two_point_limit(p: ModelParams, q: RegionQuery, r1: float, r2: float) -> float:
    """
    P(c B(u_1) > r_1, c B(u_2) > r_2) with u_i the level-curve times

    Below the diagonal c = c+; above it c = c- (mirrored level curves).
    """
    scale = p.c_plus if _branch(q) == 'below' else p.c_minus
    u = [level_curve_time(p, x, y) for x, y in q.points()]
    for value in u:
        if not 0.0 < value < 1.0:
            raise DomainError(f"Level-curve time {value:.6g} outside (0, 1)")
    thresholds = [r1 / scale, r2 / scale]
    if u[0] == u[1]:
        spec = BridgeSpec(1.0, (u[0],), (max(thresholds),))
        return bridge_crossing(spec).value
    order = np.argsort(u)
    spec = BridgeSpec(1.0, tuple(u[k] for k in order), tuple(thresholds[k] for k in order))
    return bridge_crossing(spec).value


def bridge_covariance(p: ModelParams, t: float) -> float:
    """E[B_1(t) B_2(t)] = (a-b) sqrt(D) / ((a+b) ell - (a-b)^2) * t (1-t)"""
    if not 0.0 < t < 1.0:
        raise DomainError(f"t must lie in (0, 1), got {t}")
    return (p.a - p.b) * p.sqrt_D / ((p.a + p.b) * p.ell - (p.a - p.b) ** 2) * t * (1.0 - t)
