"""
Scaling Core
Closed-form scaling constants, rate function, conditional law-of-large-numbers
surface, two-point region classification and critical points of the exponent
functions G(z) = -alpha1 log(z+1) + alpha2 log z + alpha3 z
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize

from src.errors import DomainError

logger = logging.getLogger(__name__)

# Segment symbols of a three-point observation, in the order the
# kernels consume them
SEGMENT_SYMBOLS = ('1', '2', '3', '12', '23', '123')

OMEGA_TAGS = ('Omega1', 'Omega2minusOmega1', 'Outside')
REGION_TAGS = ('R1', 'R2', 'R3', 'R4', 'R5', 'R6', 'R7')


def lattice_ceil(value: float) -> int:
    """Ceiling that ignores floating-point noise just above an integer"""
    return int(math.ceil(value - 1e-9 * max(1.0, abs(value))))


@dataclass(frozen=True)
class ModelParams:
    """Speeds (a, b), conditioned level ell and the derived scaling constants"""
    a: float
    b: float
    ell: float
    D: float           # discriminant
    m_slope: float     # critical slope
    mu: float
    sigma: float       # fluctuation scale
    c_plus: float
    c_minus: float
    j_rate: float      # upper-tail rate J(ell)

    @property
    def sqrt_D(self) -> float:
        return math.sqrt(self.D)

    @property
    def z_minus(self) -> float:
        """Smaller critical point of the full-segment exponent"""
        return -(self.ell - self.a + self.b + self.sqrt_D) / (2.0 * self.ell)

    @property
    def z_plus(self) -> float:
        """Larger critical point of the full-segment exponent"""
        return -(self.ell - self.a + self.b - self.sqrt_D) / (2.0 * self.ell)

    @property
    def unconditioned_level(self) -> float:
        return (math.sqrt(self.a) + math.sqrt(self.b)) ** 2

    def as_dict(self) -> Dict[str, float]:
        return {
            'a': self.a, 'b': self.b, 'ell': self.ell, 'D': self.D,
            'm_slope': self.m_slope, 'mu': self.mu, 'sigma': self.sigma,
            'c_plus': self.c_plus, 'c_minus': self.c_minus, 'J': self.j_rate,
            'z_c_minus': self.z_minus, 'z_c_plus': self.z_plus,
        }


@dataclass(frozen=True)
class CriticalPointResult:
    """Critical points of G and the second derivative there"""
    z_minus: float
    z_plus: float
    g2_minus: float
    g2_plus: float
    discriminant_q: float


@dataclass(frozen=True)
class RegionQuery:
    """Two observation points (x1, y1), (x2, y2) in the unit square"""
    x1: float
    y1: float
    x2: float
    y2: float

    def points(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        return (self.x1, self.y1), (self.x2, self.y2)

    def swapped(self) -> 'RegionQuery':
        return RegionQuery(self.x2, self.y2, self.x1, self.y1)

    def segment_xy(self, symbol: str) -> Tuple[float, float]:
        """(X, Y) extent of a segment symbol"""
        table = {
            '1': (self.x1, self.y1),
            '2': (self.x2 - self.x1, self.y2 - self.y1),
            '3': (1.0 - self.x2, 1.0 - self.y2),
            '12': (self.x2, self.y2),
            '23': (1.0 - self.x1, 1.0 - self.y1),
            '123': (1.0, 1.0),
        }
        if symbol not in table:
            raise DomainError(f"Unknown segment symbol {symbol!r}")
        return table[symbol]


@dataclass(frozen=True)
class RegionLabel:
    """Region tag of a point pair; boundary hits carry both neighbours"""
    tag: str
    neighbors: Tuple[str, ...] = ()
    boundary_index: Optional[int] = None
    swapped: bool = False
    omega_tags: Tuple[str, ...] = ()

    @property
    def is_boundary(self) -> bool:
        return self.tag == 'Boundary'

    def candidates(self) -> Tuple[str, ...]:
        return self.neighbors if self.is_boundary else (self.tag,)


@dataclass(frozen=True)
class LLNValue:
    value: float
    omega_tag: str
    conjectural: bool


def _rate(a: float, b: float, ell: float, sqrt_d: float) -> float:
    return (sqrt_d
            + a * math.log((ell + a - b - sqrt_d) / (ell + a - b + sqrt_d))
            + b * math.log((ell - a + b - sqrt_d) / (ell - a + b + sqrt_d)))


def make_params(a: float, b: float, ell: float) -> ModelParams:
    """
    Build model parameters for the upper large deviation regime

    Args:
        a: Horizontal speed
        b: Vertical speed
        ell: Conditioned value per unit scale, must exceed (sqrt(a) + sqrt(b))^2

    Returns:
        ModelParams with every derived constant populated
    """
    for name, value in (('a', a), ('b', b), ('ell', ell)):
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    a, b, ell = float(a), float(b), float(ell)
    threshold = (math.sqrt(a) + math.sqrt(b)) ** 2
    if ell <= threshold:
        raise DomainError(f"ell={ell} must exceed (sqrt(a)+sqrt(b))^2={threshold}")

    D = ell ** 2 - 2.0 * (a + b) * ell + (a - b) ** 2
    sqrt_d = math.sqrt(D)
    m_slope = (ell - a - b + sqrt_d) / (ell - a - b - sqrt_d)
    mu = (ell - a + b + sqrt_d) / (ell + a - b - sqrt_d)
    spread = (a + b) * ell - (a - b) ** 2
    sigma = math.sqrt(spread) * D ** 0.25 / (2.0 * math.sqrt(a * b))
    tilt = (a - b) * sqrt_d / spread
    return ModelParams(
        a=a, b=b, ell=ell, D=D, m_slope=m_slope, mu=mu, sigma=sigma,
        c_plus=math.sqrt(1.0 + tilt), c_minus=math.sqrt(1.0 - tilt),
        j_rate=_rate(a, b, ell, sqrt_d),
    )


def rate_function(p: ModelParams) -> float:
    """Upper-tail rate J(ell)"""
    return _rate(p.a, p.b, p.ell, p.sqrt_D)


def unconditional_lln(a: float, b: float, x: float, y: float) -> float:
    """Law of large numbers (sqrt(xa) + sqrt(yb))^2"""
    if min(a, b) <= 0 or min(x, y) < 0:
        raise DomainError("unconditional_lln needs positive speeds and nonnegative coordinates")
    return (math.sqrt(x * a) + math.sqrt(y * b)) ** 2


def omega_region(p: ModelParams, x: float, y: float) -> str:
    """Tag of the conditional-surface branch containing (x, y)"""
    if x <= 0 or y <= 0:
        raise DomainError(f"Coordinates must be positive, got ({x}, {y})")
    m = p.m_slope
    if x > 1 and y > 1 and 1.0 / m < (y - 1.0) / (x - 1.0) < m:
        return 'Omega1'
    if 1.0 / m < y / x < m:
        return 'Omega2minusOmega1'
    return 'Outside'


def lln_surface_info(p: ModelParams, x: float, y: float) -> LLNValue:
    """Conditional LLN value with branch tag and conjectural flag"""
    tag = omega_region(p, x, y)
    if tag == 'Omega1':
        value = p.ell + unconditional_lln(p.a, p.b, x - 1.0, y - 1.0)
    elif tag == 'Omega2minusOmega1':
        value = 0.5 * ((p.ell + p.a - p.b) * x + (p.ell - p.a + p.b) * y - abs(x - y) * p.sqrt_D)
    else:
        value = unconditional_lln(p.a, p.b, x, y)
    proven = tag == 'Omega2minusOmega1' and x <= 1.0 and y <= 1.0
    return LLNValue(value=value, omega_tag=tag, conjectural=not proven)


def lln_surface(p: ModelParams, x: float, y: float) -> float:
    """Conditional law-of-large-numbers surface h(x, y)"""
    return lln_surface_info(p, x, y).value


def linear_surface(p: ModelParams, X: float, Y: float) -> float:
    """Below-diagonal linear form of h, extended to segment extents (X, Y)"""
    return 0.5 * ((p.ell + p.a - p.b - p.sqrt_D) * X + (p.ell - p.a + p.b + p.sqrt_D) * Y)


def level_curve_time(p: ModelParams, x: float, y: float) -> float:
    """Bridge time of a point: (m y - x)/(m - 1) below the diagonal, mirrored above"""
    m = p.m_slope
    if y <= x:
        return (m * y - x) / (m - 1.0)
    return (m * x - y) / (m - 1.0)


def critical_points(alpha1: float, alpha2: float, alpha3: float) -> CriticalPointResult:
    """
    Critical points of G(z) = -alpha1 log(z+1) + alpha2 log z + alpha3 z

    Returns:
        CriticalPointResult with z_minus <= z_plus and G'' at both
    """
    if alpha1 == 0 or alpha2 == 0:
        raise DomainError("alpha1 and alpha2 must be nonzero")
    if alpha3 == 0:
        raise DomainError("alpha3 must be nonzero")
    q = alpha3 ** 2 - 2.0 * (alpha1 + alpha2) * alpha3 + (alpha1 - alpha2) ** 2
    if q < 0:
        raise DomainError(f"Complex critical points (Q={q:.6g} < 0)")
    root = math.sqrt(q)
    bracket = (alpha1 + alpha2) * alpha3 - (alpha1 - alpha2) ** 2
    scale = root / (2.0 * alpha1 * alpha2)

    z_upper = (-alpha3 + alpha1 - alpha2 + root) / (2.0 * alpha3)
    z_lower = (-alpha3 + alpha1 - alpha2 - root) / (2.0 * alpha3)
    g_upper = -scale * (bracket + (alpha1 - alpha2) * root)
    g_lower = scale * (bracket - (alpha1 - alpha2) * root)

    # alpha3 < 0 flips the root order
    if z_upper < z_lower:
        z_upper, z_lower = z_lower, z_upper
        g_upper, g_lower = g_lower, g_upper
    return CriticalPointResult(z_minus=z_lower, z_plus=z_upper,
                               g2_minus=g_lower, g2_plus=g_upper, discriminant_q=q)


def exponent(alpha1: float, alpha2: float, alpha3: float, z: float) -> float:
    """Real part of G on the negative axis (log |z| branch)"""
    return -alpha1 * math.log(abs(z + 1.0)) + alpha2 * math.log(abs(z)) + alpha3 * z


def validate_region_query(p: ModelParams, q: RegionQuery):
    for name, value in (('x1', q.x1), ('y1', q.y1), ('x2', q.x2), ('y2', q.y2)):
        if not 0.0 < value < 1.0:
            raise DomainError(f"{name}={value} must lie in (0, 1)")
    for x, y in q.points():
        if not 1.0 / p.m_slope < y / x < 1.0:
            raise DomainError(f"Point ({x}, {y}) must satisfy 1/m < y/x < 1")


def segment_alphas(p: ModelParams, q: RegionQuery, symbol: str) -> Tuple[float, float, float]:
    X, Y = q.segment_xy(symbol)
    return p.a * X, p.b * Y, linear_surface(p, X, Y)


def g_star_family(p: ModelParams, q: RegionQuery) -> Dict[str, CriticalPointResult]:
    """Critical points of the six segment exponents, keyed by segment symbol"""
    validate_region_query(p, q)
    family = {}
    for symbol in SEGMENT_SYMBOLS:
        family[symbol] = critical_points(*segment_alphas(p, q, symbol))
    return family


def mean_levelcurve_critical(p: ModelParams, X: float, Y: float) -> Tuple[float, float]:
    """(z_c, w_c): the shared critical point and the extent-dependent one"""
    ratio = Y / X
    return p.z_plus, -ratio / (1.0 / p.mu + ratio)


def classify_region(p: ModelParams, q: RegionQuery) -> RegionLabel:
    """
    Classify a point pair by the slope of the segment joining it

    Pairs with (x2-x1) + mu (y2-y1) < 0 are relabelled first (swapped=True).
    Exact hits on a cut return a Boundary label carrying both neighbours.
    """
    validate_region_query(p, q)
    omega = tuple(omega_region(p, x, y) for x, y in q.points())
    swapped = False
    base = (q.x2 - q.x1) + p.mu * (q.y2 - q.y1)
    if base < 0:
        q = q.swapped()
        swapped = True
        omega = omega[::-1]
    elif base == 0:
        return RegionLabel('Boundary', ('R1', 'R7'), 0, swapped, omega)

    dx = q.x2 - q.x1
    dy = q.y2 - q.y1
    if dx == 0:
        return RegionLabel('Boundary', ('R1', 'R2'), 6, swapped, omega)
    if dx < 0:
        return RegionLabel('R1', (), None, swapped, omega)

    slope = dy / dx
    cuts = [
        (0.0, 'R7', 'R6'),
        (1.0 / p.m_slope, 'R6', 'R5'),
        (q.y1 / q.x1, 'R5', 'R4'),
        (1.0, 'R4', 'R3'),
        ((1.0 - q.y1) / (1.0 - q.x1), 'R3', 'R2'),
    ]
    for index, (cut, below, above) in enumerate(cuts, start=1):
        if slope < cut:
            return RegionLabel(below, (), None, swapped, omega)
        if slope == cut:
            return RegionLabel('Boundary', (below, above), index, swapped, omega)
    return RegionLabel('R2', (), None, swapped, omega)


def critical_ordering(p: ModelParams, q: RegionQuery) -> List[Tuple[str, float]]:
    """All segment critical points plus -1, 0 and z_c, sorted ascending"""
    entries = [('-1', -1.0), ('0', 0.0), ('zc', p.z_plus)]
    for symbol, result in g_star_family(p, q).items():
        entries.append((f"z{symbol}-", result.z_minus))
        entries.append((f"z{symbol}+", result.z_plus))
    return sorted(entries, key=lambda item: item[1])


def variational_value(p: ModelParams, x: float, y: float, t: float) -> float:
    """H(t) = t ell + (sqrt((x-t)a) + sqrt((y-t)b))^2"""
    return t * p.ell + (math.sqrt(max(x - t, 0.0) * p.a) + math.sqrt(max(y - t, 0.0) * p.b)) ** 2


def _variational_slope(p: ModelParams, x: float, y: float, t: float) -> float:
    u, v = x - t, y - t
    if u <= 0 or v <= 0:
        return -math.inf
    return p.ell - (math.sqrt(p.a * u) + math.sqrt(p.b * v)) * (math.sqrt(p.a / u) + math.sqrt(p.b / v))


def variational_tc(p: ModelParams, x: float, y: float, grid_points: int = 257) -> Tuple[float, float]:
    """
    Maximize H over t in [0, min(x, y, 1)]

    A coarse grid brackets the maximum, bounded golden-section search
    refines it to 1e-10 and root-finding on H' polishes interior maxima.

    Returns:
        (t_c, H(t_c))
    """
    if x <= 0 or y <= 0:
        raise DomainError(f"Coordinates must be positive, got ({x}, {y})")
    upper = min(x, y, 1.0)
    grid = np.linspace(0.0, upper, grid_points)
    values = [variational_value(p, x, y, t) for t in grid]
    k = int(np.argmax(values))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]

    result = optimize.minimize_scalar(lambda t: -variational_value(p, x, y, t),
                                      bounds=(lo, hi), method='bounded',
                                      options={'xatol': 1e-10})
    t_best = float(result.x)

    slope_lo = _variational_slope(p, x, y, lo)
    slope_hi = _variational_slope(p, x, y, hi)
    if math.isfinite(slope_lo) and math.isfinite(slope_hi) and slope_lo > 0 > slope_hi:
        t_best = optimize.brentq(lambda t: _variational_slope(p, x, y, t), lo, hi, xtol=1e-14)

    best_value = variational_value(p, x, y, t_best)
    for endpoint in (0.0, upper):
        value = variational_value(p, x, y, endpoint)
        if value >= best_value:
            t_best, best_value = endpoint, value
    return t_best, best_value


def slope_functional(p: ModelParams, u: float) -> float:
    """Slope functional Q(u); equals 1 at u = 1/m and -1 at u = m"""
    if u <= 0:
        raise DomainError(f"u must be positive, got {u}")
    root_ab = math.sqrt(p.a * p.b)
    return (root_ab / (p.ell * p.sqrt_D)) * (
        (p.ell + p.a - p.b) / math.sqrt(u)
        - (p.ell - p.a + p.b) * math.sqrt(u)
        - (p.a - p.b) * (p.ell - p.a - p.b) / root_ab
    )


def log_z_constant(p: ModelParams, L: float) -> float:
    """log Z_L, the ratio of the full-segment integrand at its two critical points"""
    M = lattice_ceil(p.a * L)
    N = lattice_ceil(p.b * L)
    if M < 1 or N < 1:
        raise DomainError(f"Scale L={L} gives an empty lattice")
    s = p.sqrt_D
    return (M * math.log((p.ell + p.a - p.b + s) / (p.ell + p.a - p.b - s))
            + N * math.log((p.ell - p.a + p.b + s) / (p.ell - p.a + p.b - s))
            - s * L)
