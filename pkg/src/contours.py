"""
Contour Calculus
Circle contours with trapezoidal quadrature, the functions f_{M,N,T}, Cauchy
determinants, the kernels Pi_n and Pi^sigma_tau, list algebra over the
segment alphabet and the nested-circle integrals I^sigma_tau
"""

import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.fft import fft, ifft

from src.config import Config, NUMERIC_DEFAULTS, RADIUS_MODES
from src.errors import (CancellationWarning, ContourNestingError, DomainError, HypothesisError, PoleError,
                        PoleProximityWarning, RuleError, ShapeError)
from src.scaling import (ModelParams, RegionQuery, critical_points, lattice_ceil,
                         lln_surface, log_z_constant)
from src.utils import LogComplex, PartialSum, tree_reduce

logger = logging.getLogger(__name__)

ALPHABET = ('1', '2', '3', '12', '23', '123')

# Symbol pairs whose f-ratios create poles between their contours
POLE_PAIRS = frozenset({
    frozenset({'1', '2'}), frozenset({'2', '3'}),
    frozenset({'12', '3'}), frozenset({'1', '23'}),
})


class Orientation(str, Enum):
    CCW = 'ccw'
    CW = 'cw'


@dataclass(frozen=True)
class Contour:
    """Circle with trapezoidal nodes; rotation shifts nodes by a fraction of the spacing"""
    center: complex
    radius: float
    nodes: int = 32
    orientation: Orientation = Orientation.CCW
    rotation: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ContourNestingError(f"Contour radius must be positive, got {self.radius}")
        if self.nodes < 8 or self.nodes % 2:
            raise DomainError(f"Contour nodes must be even and at least 8, got {self.nodes}")

    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * (np.arange(self.nodes) + self.rotation) / self.nodes

    def points(self) -> np.ndarray:
        return self.center + self.radius * np.exp(1j * self.angles())

    def weights(self) -> np.ndarray:
        """Weights w_k with sum_k g(z_k) w_k ~ (1/2 pi i) * contour integral of g"""
        w = (self.points() - self.center) / self.nodes
        return w if self.orientation == Orientation.CCW else -w

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> complex:
        return complex(np.sum(func(self.points()) * self.weights()))

    def with_nodes(self, nodes: int) -> 'Contour':
        return Contour(self.center, self.radius, nodes, self.orientation, self.rotation)

    def with_rotation(self, rotation: float) -> 'Contour':
        return Contour(self.center, self.radius, self.nodes, self.orientation, rotation)

    def same_circle(self, other: 'Contour') -> bool:
        return abs(self.center - other.center) < 1e-14 and abs(self.radius - other.radius) < 1e-14


@dataclass(frozen=True)
class IndexList:
    """Ordered list over the alphabet {1, 2, 3, 12, 23, 123}"""
    entries: Tuple[str, ...]

    def __post_init__(self):
        for entry in self.entries:
            if entry not in ALPHABET:
                raise DomainError(f"Unknown list symbol {entry!r}")

    @classmethod
    def parse(cls, text: Union[str, 'IndexList']) -> 'IndexList':
        """Parse notation like '3(12)' or '(123)2'"""
        if isinstance(text, IndexList):
            return text
        entries = []
        k = 0
        while k < len(text):
            char = text[k]
            if char.isspace():
                k += 1
            elif char == '(':
                close = text.find(')', k)
                if close < 0:
                    raise DomainError(f"Unbalanced parenthesis in {text!r}")
                entries.append(text[k + 1:close])
                k = close + 1
            elif char in '123':
                entries.append(char)
                k += 1
            else:
                raise DomainError(f"Unexpected character {char!r} in {text!r}")
        return cls(tuple(entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __str__(self) -> str:
        return ''.join(e if len(e) == 1 else f"({e})" for e in self.entries)

    @property
    def type_vector(self) -> Tuple[int, ...]:
        """(a123, a12, a23, a1, a2, a3)"""
        return tuple(self.entries.count(s) for s in ('123', '12', '23', '1', '2', '3'))

    @property
    def multiplicity(self) -> Tuple[int, int, int]:
        return tuple(sum(1 for e in self.entries if digit in e) for digit in '123')

    def blocks(self) -> List[Tuple[str, int]]:
        return [(symbol, len(list(group))) for symbol, group in itertools.groupby(self.entries)]


@dataclass(frozen=True)
class ObservationPlan:
    """Lattice points (M_i, N_i) and thresholds T_i of a multi-point event"""
    M: Tuple[int, ...]
    N: Tuple[int, ...]
    T: Tuple[float, ...]
    L: Optional[float] = None
    params: Optional[ModelParams] = None
    kind: str = 'explicit'
    r: Tuple[float, ...] = ()

    def __post_init__(self):
        if not (len(self.M) == len(self.N) == len(self.T)) or not self.M:
            raise ShapeError("M, N and T must be nonempty and of equal length")
        for value in tuple(self.M) + tuple(self.N):
            if int(value) != value or value < 1:
                raise DomainError(f"Lattice coordinates must be integers >= 1, got {value}")

    @property
    def m(self) -> int:
        return len(self.M)

    @classmethod
    def single(cls, M: int, N: int, T: float, L: Optional[float] = None,
               params: Optional[ModelParams] = None) -> 'ObservationPlan':
        return cls((int(M),), (int(N),), (float(T),), L, params, 'single')

    @classmethod
    def scaled(cls, p: ModelParams, q: RegionQuery, L: float, r1: float = 0.0,
               r2: float = 0.0) -> 'ObservationPlan':
        """Two observation points at scale L plus the conditioning point"""
        if L <= 0:
            raise DomainError(f"L must be positive, got {L}")
        M, N, T = [], [], []
        for (x, y), r in zip(q.points(), (r1, r2)):
            M.append(lattice_ceil(x * p.a * L))
            N.append(lattice_ceil(y * p.b * L))
            T.append(lln_surface(p, x, y) * L + math.sqrt(2.0) * p.sigma * r * math.sqrt(L))
        M.append(lattice_ceil(p.a * L))
        N.append(lattice_ceil(p.b * L))
        T.append(p.ell * L)
        return cls(tuple(M), tuple(N), tuple(T), float(L), p, 'offdiag', (r1, r2))

    @classmethod
    def diagonal(cls, p: ModelParams, L: float,
                 points: Sequence[Tuple[float, float, float]]) -> 'ObservationPlan':
        """Points (s, t, h) shifted off the diagonal along v2, plus the conditioning point"""
        if L <= 0:
            raise DomainError(f"L must be positive, got {L}")
        shift_a = p.a * (p.ell - p.a + p.b) * p.sigma / (p.ell * p.sqrt_D)
        shift_b = p.b * (p.ell + p.a - p.b) * p.sigma / (p.ell * p.sqrt_D)
        root = math.sqrt(L)
        M, N, T = [], [], []
        for s, t, h in sorted(points, key=lambda item: item[1]):
            if not 0.0 < t < 1.0:
                raise DomainError(f"Diagonal times must lie in (0, 1), got {t}")
            M.append(max(1, lattice_ceil(t * p.a * L + s * shift_a * root)))
            N.append(max(1, lattice_ceil(t * p.b * L - s * shift_b * root)))
            T.append(t * p.ell * L + h * p.sigma * root)
        M.append(lattice_ceil(p.a * L))
        N.append(lattice_ceil(p.b * L))
        T.append(p.ell * L)
        return cls(tuple(M), tuple(N), tuple(T), float(L), p, 'diagonal')

    def check_hypotheses(self):
        """0 < T_1 <= ... <= T_m and distinct (N_i, T_i)"""
        if self.T[0] <= 0:
            raise HypothesisError(f"T_1 must be positive, got {self.T[0]}")
        for k in range(1, self.m):
            if self.T[k] < self.T[k - 1]:
                raise HypothesisError(f"Thresholds must be nondecreasing: T={self.T}")
        pairs = list(zip(self.N, self.T))
        if len(set(pairs)) != len(pairs):
            raise HypothesisError(f"Pairs (N_i, T_i) must be distinct: {pairs}")

    def segment(self, level: int) -> Tuple[int, int, float]:
        if not 1 <= level <= self.m:
            raise DomainError(f"Segment {level} outside 1..{self.m}")
        if level == 1:
            return self.M[0], self.N[0], self.T[0]
        k = level - 1
        return self.M[k] - self.M[k - 1], self.N[k] - self.N[k - 1], self.T[k] - self.T[k - 1]

    def symbol_exponents(self, symbol: Union[int, str]) -> Tuple[int, int, float]:
        """Exponents of the merged ratio for a run of consecutive segments ('12', '23', ...)"""
        levels = [int(symbol)] if isinstance(symbol, int) else [int(c) for c in str(symbol)]
        if levels != list(range(levels[0], levels[0] + len(levels))):
            raise DomainError(f"Symbol {symbol!r} must name consecutive segments")
        M = N = 0
        T = 0.0
        for level in levels:
            dM, dN, dT = self.segment(level)
            M, N, T = M + dM, N + dN, T + dT
        return M, N, T

    @property
    def final_point(self) -> Tuple[int, int, float]:
        return self.M[-1], self.N[-1], self.T[-1]

    def tail_plan(self) -> 'ObservationPlan':
        """Single-point plan at the conditioning point, sharing this plan's normalization"""
        M, N, T = self.final_point
        return ObservationPlan((M,), (N,), (T,), self.L, self.params, 'tail')

    def saddle_points(self) -> Optional[Tuple[float, float]]:
        if self.params is not None and self.L is not None:
            return self.params.z_minus, self.params.z_plus
        M, N, T = self.final_point
        try:
            result = critical_points(M, N, T)
        except DomainError:
            return None
        if -1.0 < result.z_minus < result.z_plus < 0.0:
            return result.z_minus, result.z_plus
        return None

    def log_z(self) -> float:
        """Normalization log Z shared by every integral of this plan"""
        if self.params is not None and self.L is not None:
            return log_z_constant(self.params, self.L)
        saddles = self.saddle_points()
        if saddles is None:
            return 0.0
        M, N, T = self.final_point
        z_minus, z_plus = saddles
        return (_real_log_f(M, N, T, z_minus) - _real_log_f(M, N, T, z_plus))

    def describe(self) -> Dict[str, object]:
        return {'M': list(self.M), 'N': list(self.N), 'T': list(self.T), 'L': self.L,
                'kind': self.kind, 'r': list(self.r)}


def _real_log_f(M: int, N: int, T: float, z: float) -> float:
    return N * math.log(abs(z)) - M * math.log(abs(z + 1.0)) + T * z


def log_f(M: int, N: int, T: float, z: np.ndarray) -> np.ndarray:
    """Complex log of z^N e^{Tz} / (z+1)^M on the principal branch"""
    z = np.asarray(z, dtype=complex)
    out = T * z
    if N:
        out = out + N * np.log(z)
    if M:
        out = out - M * np.log(z + 1.0)
    return out


def f_eval(M: int, N: int, T: float, z: complex) -> LogComplex:
    """f_{M,N,T}(z) = z^N e^{Tz} / (z+1)^M in log form"""
    z = complex(z)
    if z == 0 or z == -1:
        raise PoleError(f"f_(M,N,T) evaluated at a pole z={z}")
    return LogComplex.from_log(complex(log_f(M, N, T, np.array([z]))[0]))


def f_ratio_eval(plan: ObservationPlan, i: Union[int, str], z: complex) -> LogComplex:
    """Segment ratio f_i = f_{M_i,N_i,T_i}/f_{M_{i-1},N_{i-1},T_{i-1}}, or a merged product"""
    return f_eval(*plan.symbol_exponents(i), z)


def cauchy_det(r: Sequence[complex], s: Sequence[complex]) -> LogComplex:
    """
    Cauchy determinant det[1/(r_i - s_j)] from its product formula

    prod_{i<j} (r_i - r_j)(s_j - s_i) / prod_{i,j} (r_i - s_j)
    """
    r = np.asarray(r, dtype=complex).ravel()
    s = np.asarray(s, dtype=complex).ravel()
    if r.shape != s.shape:
        raise ShapeError(f"Cauchy determinant needs equal sizes, got {r.size} and {s.size}")
    if r.size == 0:
        return LogComplex.one()
    cross = r[:, None] - s[None, :]
    if np.any(cross == 0):
        raise PoleError("Cauchy determinant evaluated at a pole r_i = s_j")
    upper = np.triu_indices(r.size, 1)
    with np.errstate(divide='ignore'):
        log_value = (np.sum(np.log(r[upper[0]] - r[upper[1]]))
                     + np.sum(np.log(s[upper[1]] - s[upper[0]]))
                     - np.sum(np.log(cross)))
    return LogComplex.from_log(complex(log_value))


@dataclass
class PairKernel:
    """sign * prod_{u<v} (x_u - x_v)^{k_uv}, optionally times S = sum x_plus - sum x_minus"""
    size: int
    sign: int = 1
    powers: Dict[Tuple[int, int], int] = field(default_factory=dict)
    s_plus: Tuple[int, ...] = ()
    s_minus: Tuple[int, ...] = ()
    has_s: bool = False

    def _add(self, u: int, v: int, power: int):
        if u == v:
            raise ShapeError(f"Variable {u} paired with itself")
        if u > v:
            u, v = v, u
            if power % 2:
                self.sign = -self.sign
        total = self.powers.get((u, v), 0) + power
        if total:
            self.powers[(u, v)] = total
        else:
            self.powers.pop((u, v), None)

    def add_cauchy(self, r: Sequence[int], s: Sequence[int]):
        if len(r) != len(s):
            raise ShapeError(f"Cauchy factor with sizes {len(r)} and {len(s)}")
        for i in range(len(r)):
            for j in range(i + 1, len(r)):
                self._add(r[i], r[j], 1)
                self._add(s[j], s[i], 1)
        for u in r:
            for v in s:
                self._add(u, v, -1)

    def set_s(self, plus: Sequence[int], minus: Sequence[int]):
        self.s_plus, self.s_minus, self.has_s = tuple(plus), tuple(minus), True

    def s_coefficients(self) -> np.ndarray:
        coefficients = np.zeros(self.size)
        coefficients[list(self.s_plus)] += 1.0
        coefficients[list(self.s_minus)] -= 1.0
        return coefficients

    def log_value(self, z: np.ndarray) -> np.ndarray:
        """Complex log of the kernel at points z of shape (..., size)"""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape[:-1], dtype=complex)
        if self.sign < 0:
            out += 1j * np.pi
        with np.errstate(divide='ignore', invalid='ignore'):
            for (u, v), power in self.powers.items():
                out += power * np.log(z[..., u] - z[..., v])
            if self.has_s:
                out += np.log(z @ self.s_coefficients())
        return out


def pi_n_kernel(n: Sequence[int]) -> Tuple[PairKernel, List[List[int]], List[List[int]]]:
    """Kernel Pi_n with variables ordered level by level (xi^i block, then eta^i block)"""
    xi_idx, eta_idx = [], []
    k = 0
    for count in n:
        xi_idx.append(list(range(k, k + count)))
        k += count
        eta_idx.append(list(range(k, k + count)))
        k += count
    kernel = PairKernel(k)
    kernel.add_cauchy(eta_idx[0], xi_idx[0])
    for i in range(len(n) - 1):
        kernel.add_cauchy(xi_idx[i] + eta_idx[i + 1], eta_idx[i] + xi_idx[i + 1])
    kernel.add_cauchy(xi_idx[-1], eta_idx[-1])
    kernel.set_s(xi_idx[-1], eta_idx[-1])
    return kernel, xi_idx, eta_idx


def sigma_tau_kernel(sigma: IndexList, tau: IndexList) -> PairKernel:
    """Kernel Pi^sigma_tau; xi variables follow sigma's order, eta variables follow tau's"""
    if sigma.multiplicity != tau.multiplicity:
        raise ShapeError(f"Lists {sigma} and {tau} have different multiplicities")
    offset = len(sigma)
    xi = {s: [k for k, e in enumerate(sigma.entries) if e == s] for s in ALPHABET}
    eta = {s: [offset + k for k, e in enumerate(tau.entries) if e == s] for s in ALPHABET}
    kernel = PairKernel(offset + len(tau))
    kernel.add_cauchy(eta['123'] + eta['12'] + eta['1'], xi['123'] + xi['12'] + xi['1'])
    kernel.add_cauchy(xi['1'] + eta['23'] + eta['2'], eta['1'] + xi['23'] + xi['2'])
    kernel.add_cauchy(xi['12'] + xi['2'] + eta['3'], eta['12'] + eta['2'] + xi['3'])
    last_r = xi['123'] + xi['23'] + xi['3']
    last_s = eta['123'] + eta['23'] + eta['3']
    kernel.add_cauchy(last_r, last_s)
    kernel.set_s(last_r, last_s)
    return kernel


def _check_poles(kernel: PairKernel, point: np.ndarray):
    for (u, v), power in kernel.powers.items():
        if power < 0 and point[u] == point[v]:
            raise PoleError(f"Kernel evaluated at a pole between variables {u} and {v}")


def pi_n(n: Sequence[int], xi: Sequence[Sequence[complex]],
         eta: Sequence[Sequence[complex]]) -> LogComplex:
    """Pi_n at grouped arguments xi[i], eta[i] (one group per level)"""
    if len(xi) != len(n) or len(eta) != len(n):
        raise ShapeError("pi_n needs one xi and one eta group per level")
    for count, xs, es in zip(n, xi, eta):
        if len(xs) != count or len(es) != count:
            raise ShapeError(f"Group sizes must equal n={tuple(n)}")
    kernel, _, _ = pi_n_kernel(n)
    point = np.concatenate([np.concatenate([np.asarray(xs, complex), np.asarray(es, complex)])
                            for xs, es in zip(xi, eta)]) if kernel.size else np.zeros(0, complex)
    _check_poles(kernel, point)
    return LogComplex.from_log(complex(kernel.log_value(point[None, :])[0]))


def _grouped_point(lst: IndexList, groups: Mapping[str, Sequence[complex]]) -> np.ndarray:
    values = np.zeros(len(lst), dtype=complex)
    for symbol in ALPHABET:
        positions = [k for k, e in enumerate(lst.entries) if e == symbol]
        supplied = list(groups.get(symbol, ()))
        if len(supplied) != len(positions):
            raise ShapeError(f"Block {symbol!r} of {lst} needs {len(positions)} values, got {len(supplied)}")
        values[positions] = supplied
    return values


def pi_sigma_tau(sigma: IndexList, tau: IndexList, xi: Mapping[str, Sequence[complex]],
                 eta: Mapping[str, Sequence[complex]]) -> LogComplex:
    """Pi^sigma_tau at arguments grouped by symbol"""
    sigma, tau = IndexList.parse(sigma), IndexList.parse(tau)
    kernel = sigma_tau_kernel(sigma, tau)
    point = np.concatenate([_grouped_point(sigma, xi), _grouped_point(tau, eta)])
    _check_poles(kernel, point)
    return LogComplex.from_log(complex(kernel.log_value(point[None, :])[0]))


@dataclass(frozen=True)
class IntegrationVariable:
    """One contour variable: xi carries f, eta carries 1/f"""
    kind: str
    exponents: Tuple[int, int, float]
    contour: Contour

    def log_term(self, z: np.ndarray) -> np.ndarray:
        M, N, T = self.exponents
        values = log_f(M, N, T, z)
        return values if self.kind == 'xi' else -values


@dataclass
class IntegralResult:
    """Normalized integral value (divided by Z) with convergence diagnostics"""
    value: LogComplex
    error: float
    dimension: int
    nodes: Tuple[int, ...]
    method: str
    log_z: float
    spread: Optional[float] = None
    pivot_log: float = -math.inf
    warnings: List[str] = field(default_factory=list)

    @property
    def complex(self) -> complex:
        return self.value.to_complex()

    @property
    def real(self) -> float:
        return self.value.to_complex().real


def default_nodes(dimension: int) -> Optional[int]:
    """Trapezoid nodes per circle for a total dimension (None above the tensor range)"""
    for limit, nodes in sorted(NUMERIC_DEFAULTS['nodes_by_dimension'].items()):
        if dimension <= limit:
            return nodes
    return None


def nested_radii(count: int, mode: str = 'geometric', saddle: Optional[float] = None) -> List[float]:
    """
    Radii for `count` nested circles, innermost first

    Args:
        count: Number of distinct circles
        mode: 'linear' (0.10 + 0.05k), 'geometric' (ratio 1.9 below 0.33) or 'steepest'
        saddle: Saddle-point radius used by the steepest mode

    Returns:
        Increasing list of radii
    """
    if mode not in RADIUS_MODES:
        raise DomainError(f"Unknown radius mode {mode!r}")
    if count <= 0:
        return []
    if mode == 'linear':
        return [NUMERIC_DEFAULTS['radius_base'] + NUMERIC_DEFAULTS['radius_step'] * k for k in range(count)]
    if mode == 'steepest' and saddle is not None and saddle > 0:
        ratio = NUMERIC_DEFAULTS['steepest_ratio']
        radii = [saddle * ratio ** (k - (count - 1) / 2.0) for k in range(count)]
        cap = NUMERIC_DEFAULTS['radius_cap']
        if radii[-1] > cap:
            radii = [r * cap / radii[-1] for r in radii]
        return radii
    top = NUMERIC_DEFAULTS['geometric_top']
    ratio = NUMERIC_DEFAULTS['geometric_ratio']
    return [top * ratio ** (k - (count - 1)) for k in range(count)]


def validate_nesting(contours: Sequence[Contour], symbols: Sequence[str], center: complex):
    """Circles share `center`, stay below radius 1/2 and grow in list order"""
    for contour in contours:
        if abs(contour.center - center) > 1e-12:
            raise ContourNestingError(f"Contour centered at {contour.center}, expected {center}")
        if contour.radius >= 0.5:
            raise ContourNestingError(f"Contour radius {contour.radius} must be below 1/2")
    for k in range(1, len(contours)):
        previous, current = contours[k - 1].radius, contours[k].radius
        if symbols[k] == symbols[k - 1]:
            if current < previous:
                raise ContourNestingError(f"Radii must not shrink along the list: {previous} > {current}")
        elif current <= previous:
            raise ContourNestingError(f"Radii must increase between distinct symbols: {previous} >= {current}")


def _block_axes(inner: int, axis: int, size: int) -> List[int]:
    shape = [1] * inner
    shape[axis] = size
    return shape


def _tensor_partial(kernel: PairKernel, variables: Sequence[IntegrationVariable],
                    log_z: float, threads: int, block_points: int) -> PartialSum:
    d = len(variables)
    nodes = [v.contour.points() for v in variables]
    sizes = [len(z) for z in nodes]
    vectors = [v.log_term(z) + np.log(v.contour.weights()) for v, z in zip(variables, nodes)]
    with np.errstate(divide='ignore', invalid='ignore'):
        pairs = {(u, v): power * np.log(nodes[u][:, None] - nodes[v][None, :])
                 for (u, v), power in kernel.powers.items()}
    s_coeff = kernel.s_coefficients() if kernel.has_s else None
    constant = (1j * np.pi if kernel.sign < 0 else 0.0) - log_z

    start = d
    points = 1
    while start > 0 and points * sizes[start - 1] <= block_points:
        start -= 1
        points *= sizes[start]
    inner = d - start
    inner_shape = sizes[start:]
    tasks = list(itertools.product(*[range(s) for s in sizes[:start]]))

    def run(index: Tuple[int, ...]) -> PartialSum:
        acc = np.full(inner_shape, constant, dtype=complex) if inner else np.array(constant, dtype=complex)
        for v in range(d):
            if v < start:
                acc = acc + vectors[v][index[v]]
            else:
                acc = acc + vectors[v].reshape(_block_axes(inner, v - start, sizes[v]))
        for (u, v), matrix in pairs.items():
            if v < start:
                acc = acc + matrix[index[u], index[v]]
            elif u < start:
                acc = acc + matrix[index[u], :].reshape(_block_axes(inner, v - start, sizes[v]))
            else:
                shape = [1] * inner
                shape[u - start] = sizes[u]
                shape[v - start] = sizes[v]
                acc = acc + matrix.reshape(shape)
        if s_coeff is not None:
            s_value = np.zeros(inner_shape, dtype=complex) if inner else np.array(0j)
            for v in range(d):
                if s_coeff[v] == 0:
                    continue
                if v < start:
                    s_value = s_value + s_coeff[v] * nodes[v][index[v]]
                else:
                    s_value = s_value + s_coeff[v] * nodes[v].reshape(_block_axes(inner, v - start, sizes[v]))
            with np.errstate(divide='ignore'):
                acc = acc + np.log(s_value)
        return PartialSum.from_logs(acc)

    if len(tasks) == 1 or threads <= 1:
        partials = [run(index) for index in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run, tasks))
    return tree_reduce(partials)


def _primes_up_to(limit: int) -> np.ndarray:
    sieve = np.ones(limit + 1, dtype=bool)
    sieve[:2] = False
    for k in range(2, int(limit ** 0.5) + 1):
        if sieve[k]:
            sieve[k * k::k] = False
    return np.flatnonzero(sieve)


def _primitive_root(prime: int) -> int:
    order = prime - 1
    factors = [f for f in _primes_up_to(int(math.isqrt(order)) + 1) if order % f == 0]
    rest = order
    for f in factors:
        while rest % f == 0:
            rest //= f
    if rest > 1:
        factors.append(rest)
    candidate = 2
    while any(pow(candidate, order // int(f), prime) == 1 for f in factors):
        candidate += 1
    return candidate


def cbc_lattice(dimension: int, n_points: int) -> Tuple[np.ndarray, int]:
    """
    Rank-1 lattice generator by fast component-by-component construction

    Returns:
        (generating vector / n, prime number of points actually used)
    """
    primes = _primes_up_to(max(n_points, 5))
    n = int(primes[-1])
    weights = np.hstack([1.0, 0.8 ** np.arange(dimension - 1)])
    half = (n - 1) // 2
    root = _primitive_root(n)
    perm = np.ones(half, dtype=np.int64)
    for j in range(half - 1):
        perm[j + 1] = (root * perm[j]) % n
    perm = np.minimum(n - perm, perm)
    fractions = perm / n
    kernel = fractions * fractions - fractions + 1.0 / 6
    kernel_hat = fft(kernel)
    generator = np.arange(1, dimension + 1)
    product = 1.0
    best = 0
    for s in range(1, dimension):
        reordered = np.hstack([kernel[:best + 1][::-1], kernel[best + 1:half][::-1]])
        product = product * (1.0 + weights[s - 1] * reordered)
        best = int(ifft(kernel_hat * fft(product)).real.argmin())
        generator[s] = perm[best]
    return generator / n, n


def _qmc_estimate(kernel: PairKernel, variables: Sequence[IntegrationVariable], log_z: float,
                  n_points: int, shifts: int, seed: int, threads: int,
                  chunk: int = 2 ** 16) -> Tuple[LogComplex, float, float]:
    d = len(variables)
    generator, n = cbc_lattice(d, n_points)
    rng = np.random.default_rng(seed)
    centers = np.array([v.contour.center for v in variables], dtype=complex)
    radii = np.array([v.contour.radius for v in variables])
    flips = sum(1 for v in variables if v.contour.orientation == Orientation.CW)
    constant = (1j * np.pi if (flips % 2) else 0.0) - log_z - math.log(n)

    def run(args) -> PartialSum:
        shift, first = args
        k = np.arange(first, min(n, first + chunk))
        theta = np.mod(np.outer(k, generator) + shift, 1.0)
        offsets = radii * np.exp(2j * np.pi * theta)
        z = centers + offsets
        logs = kernel.log_value(z) + constant
        for v, variable in enumerate(variables):
            logs = logs + variable.log_term(z[:, v]) + np.log(offsets[:, v])
        return PartialSum.from_logs(logs)

    estimates = []
    pivot = -math.inf
    for _ in range(shifts):
        shift = rng.random(d)
        jobs = [(shift, first) for first in range(0, n, chunk)]
        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                partials = list(pool.map(run, jobs))
        else:
            partials = [run(job) for job in jobs]
        total = tree_reduce(partials)
        estimates.append(total)
        pivot = max(pivot, total.pivot)
    if not math.isfinite(pivot):
        return LogComplex.zero(), 0.0, pivot
    values = np.array([e.scaled * math.exp(e.pivot - pivot) if math.isfinite(e.pivot) else 0j
                       for e in estimates])
    mean = values.mean()
    spread = float(np.std(values, ddof=1) / math.sqrt(shifts)) if shifts > 1 else 0.0
    value = LogComplex.zero() if mean == 0 else LogComplex.from_complex(mean).scale(pivot)
    return value, spread * math.exp(pivot), pivot + math.log(n)


def _difference(a: LogComplex, b: LogComplex) -> float:
    return abs(a - b)


def integrate(kernel: PairKernel, variables: Sequence[IntegrationVariable], log_z: float = 0.0,
              method: str = 'auto', estimate_error: bool = True, threads: Optional[int] = None,
              seed: Optional[int] = None, qmc_points: Optional[int] = None) -> IntegralResult:
    """
    Integrate kernel * prod f(xi) / prod f(eta) / Z over the product of circles

    Args:
        kernel: Pairwise-factor kernel over the variables
        variables: One entry per contour variable, in kernel order
        log_z: Normalization subtracted in log space
        method: 'auto', 'tensor' or 'qmc'
        estimate_error: Node halving (dimension <= 6) or rotations (7-8)
        threads: Worker threads for block evaluation
        seed: Seed for QMC shifts and node rotations

    Returns:
        IntegralResult with the normalized value
    """
    d = len(variables)
    threads = threads or Config.THREADS
    seed = Config.DEFAULT_SEED if seed is None else seed
    notes: List[str] = []
    if d == 0:
        value = LogComplex.one().scale(-log_z)
        if kernel.sign < 0:
            value = -value
        return IntegralResult(value, 0.0, 0, (), 'exact', log_z)

    # poles between variables on the same circle
    for (u, v), power in kernel.powers.items():
        if power < 0 and variables[u].contour.same_circle(variables[v].contour):
            raise ContourNestingError(f"Variables {u} and {v} share a circle but interact through a pole")

    if method == 'auto':
        method = 'tensor' if d < NUMERIC_DEFAULTS['qmc_dimension'] else 'qmc'
    if method not in ('tensor', 'qmc'):
        raise DomainError(f"Unknown integration method {method!r}")

    if method == 'qmc':
        n_points = qmc_points or Config.QMC_POINTS
        value, error, pivot = _qmc_estimate(kernel, variables, log_z, n_points,
                                            NUMERIC_DEFAULTS['qmc_shifts'], seed, threads)
        result = IntegralResult(value, error, d, (n_points,), 'qmc', log_z, spread=error, pivot_log=pivot)
        return _finish(result, notes)

    _check_proximity(kernel, variables, notes)
    block = Config.BLOCK_POINTS
    total = _tensor_partial(kernel, variables, log_z, threads, block)
    value = total.to_log_complex()
    nodes = tuple(v.contour.nodes for v in variables)
    result = IntegralResult(value, 0.0, d, nodes, 'tensor', log_z, pivot_log=total.pivot)

    if estimate_error:
        halved = [v.contour.nodes // 2 for v in variables]
        if d <= 6 and all(h >= 8 and h % 2 == 0 for h in halved):
            coarse = [IntegrationVariable(v.kind, v.exponents, v.contour.with_nodes(h))
                      for v, h in zip(variables, halved)]
            coarse_value = _tensor_partial(kernel, coarse, log_z, threads, block).to_log_complex()
            result.error = _difference(value, coarse_value)
            result.spread = result.error
        else:
            rng = np.random.default_rng(seed)
            replicas = [value]
            for _ in range(NUMERIC_DEFAULTS['rotations'] - 1):
                rotated = [IntegrationVariable(v.kind, v.exponents, v.contour.with_rotation(float(rng.random())))
                           for v in variables]
                replicas.append(_tensor_partial(kernel, rotated, log_z, threads, block).to_log_complex())
            spread = max(_difference(a, b) for a, b in itertools.combinations(replicas, 2))
            result.error = spread
            result.spread = spread
    return _finish(result, notes)


def _check_proximity(kernel: PairKernel, variables: Sequence[IntegrationVariable], notes: List[str]):
    threshold = NUMERIC_DEFAULTS['pole_distance']
    for (u, v), power in kernel.powers.items():
        if power >= 0:
            continue
        distance = np.min(np.abs(variables[u].contour.points()[:, None] - variables[v].contour.points()[None, :]))
        if distance == 0:
            raise PoleError(f"Nodes of variables {u} and {v} coincide at a pole")
        if distance < threshold:
            message = f"Nodes of variables {u} and {v} are {distance:.3g} apart"
            warnings.warn(message, PoleProximityWarning)
            logger.warning(message)
            notes.append(message)


def _finish(result: IntegralResult, notes: List[str]) -> IntegralResult:
    if math.isfinite(result.pivot_log) and not result.value.is_zero:
        if result.value.log_mag < result.pivot_log + math.log(NUMERIC_DEFAULTS['cancellation_ratio']):
            message = (f"Quadrature sum cancelled below {NUMERIC_DEFAULTS['cancellation_ratio']:.0e} "
                       f"of its largest term")
            warnings.warn(message, CancellationWarning)
            logger.warning(message)
            notes.append(message)
    result.warnings.extend(notes)
    logger.debug(f"Integral dim={result.dimension} method={result.method} "
                 f"value={result.value.to_complex():.6g} err={result.error:.3g}")
    return result


def list_contours(lst: IndexList, center: complex, radii_mode: str, saddle: Optional[float],
                  nodes: int, radii: Optional[Sequence[float]] = None) -> List[Contour]:
    """One circle per run of equal symbols, nested inside-out in list order"""
    runs = lst.blocks()
    if radii is None:
        radii = nested_radii(len(runs), radii_mode, saddle)
    elif len(radii) < len(runs):
        raise ShapeError(f"{len(runs)} radii needed for {lst}, got {len(radii)}")
    contours = []
    for (symbol, count), radius in zip(runs, radii):
        contours.extend([Contour(center, radius, nodes)] * count)
    return contours


def eval_I(sigma: Union[str, IndexList], tau: Union[str, IndexList], plan: ObservationPlan,
           xi_contours: Optional[Sequence[Contour]] = None,
           eta_contours: Optional[Sequence[Contour]] = None,
           nodes: Optional[int] = None, radius_mode: Optional[str] = None,
           method: str = 'auto', estimate_error: bool = True,
           threads: Optional[int] = None, seed: Optional[int] = None,
           radii: Optional[Sequence[float]] = None) -> IntegralResult:
    """
    Normalized integral I^sigma_tau / Z for a three-point plan

    xi circles sit around -1 and eta circles around 0, nested inside-out in list order.
    """
    sigma, tau = IndexList.parse(sigma), IndexList.parse(tau)
    if sigma.multiplicity != tau.multiplicity:
        raise ShapeError(f"Lists {sigma} and {tau} have different multiplicities")
    if plan.m != 3:
        raise ShapeError(f"I^sigma_tau needs a three-point plan, got m={plan.m}")
    dimension = len(sigma) + len(tau)
    nodes = nodes or default_nodes(dimension) or NUMERIC_DEFAULTS['nodes_by_dimension'][8]
    mode = radius_mode or Config.RADIUS_MODE
    saddles = plan.saddle_points()
    if xi_contours is None:
        xi_contours = list_contours(sigma, -1.0, mode, 1.0 + saddles[0] if saddles else None, nodes, radii)
    if eta_contours is None:
        eta_contours = list_contours(tau, 0.0, mode, -saddles[1] if saddles else None, nodes, radii)
    if len(xi_contours) != len(sigma) or len(eta_contours) != len(tau):
        raise ShapeError("One contour per list entry is required")
    validate_nesting(xi_contours, sigma.entries, -1.0)
    validate_nesting(eta_contours, tau.entries, 0.0)

    variables = [IntegrationVariable('xi', plan.symbol_exponents(s), c) for s, c in zip(sigma.entries, xi_contours)]
    variables += [IntegrationVariable('eta', plan.symbol_exponents(s), c) for s, c in zip(tau.entries, eta_contours)]
    return integrate(sigma_tau_kernel(sigma, tau), variables, plan.log_z(), method,
                     estimate_error, threads, seed)


@dataclass(frozen=True)
class RewriteTerm:
    """One term of a list rewrite; sign None marks an undetermined sign"""
    magnitude: int
    sign: Optional[int]
    sigma: IndexList
    merged: int


def rewrite_coefficient(m: int, n: int, i: int) -> int:
    """A^{m,n}_i = i! C(m,i) C(n,i)"""
    return math.factorial(i) * math.comb(m, i) * math.comb(n, i)


def list_rewrite(sigma: Union[str, IndexList], position: int) -> List[RewriteTerm]:
    """
    Move block `position + 1` of sigma in front of block `position`

    Pole pairs expand into merged symbols with binomial multiplicities;
    other pairs simply commute.
    """
    sigma = IndexList.parse(sigma)
    blocks = sigma.blocks()
    if not 0 <= position < len(blocks) - 1:
        raise RuleError(f"No adjacent blocks at position {position} of {sigma}")
    start = sum(count for _, count in blocks[:position])
    alpha, m = blocks[position]
    beta, n = blocks[position + 1]
    prefix = sigma.entries[:start]
    suffix = sigma.entries[start + m + n:]
    if frozenset({alpha, beta}) not in POLE_PAIRS:
        return [RewriteTerm(1, 1, IndexList(prefix + (beta,) * n + (alpha,) * m + suffix), 0)]
    merged = ''.join(sorted(alpha + beta))
    terms = []
    for i in range(min(m, n) + 1):
        entries = prefix + (beta,) * (n - i) + (merged,) * i + (alpha,) * (m - i) + suffix
        terms.append(RewriteTerm(rewrite_coefficient(m, n, i), 1 if i == 0 else None, IndexList(entries), i))
    return terms


@dataclass
class SignResolution:
    terms: List[RewriteTerm]
    residual: float
    runner_up: float


def resolve_rewrite_signs(sigma: Union[str, IndexList], position: int, tau: Union[str, IndexList],
                          plan: ObservationPlan, nodes: Optional[int] = None,
                          radius_mode: Optional[str] = None, threads: Optional[int] = None,
                          seed: Optional[int] = None) -> SignResolution:
    """
    Fix the undetermined signs of a list rewrite numerically

    Every term is integrated once against tau; the sign vector minimizing
    |I^sigma_tau - sum of signed terms| wins. runner_up is the residual of the
    second-best vector, so a small gap flags an unreliable choice.
    """
    terms = list_rewrite(sigma, position)
    target = eval_I(sigma, tau, plan, nodes=nodes, radius_mode=radius_mode,
                    threads=threads, seed=seed).real
    values = [term.magnitude * eval_I(term.sigma, tau, plan, nodes=nodes, radius_mode=radius_mode,
                                      threads=threads, seed=seed).real for term in terms]
    open_slots = [k for k, term in enumerate(terms) if term.sign is None]
    scored = []
    for signs in itertools.product((1, -1), repeat=len(open_slots)):
        chosen = [term.sign for term in terms]
        for slot, sign in zip(open_slots, signs):
            chosen[slot] = sign
        total = sum(sign * value for sign, value in zip(chosen, values))
        scored.append((abs(target - total), chosen))
    scored.sort(key=lambda item: item[0])
    scale = max(abs(target), 1e-300)
    best, chosen = scored[0]
    runner_up = scored[1][0] / scale if len(scored) > 1 else math.inf
    resolved = [RewriteTerm(t.magnitude, s, t.sigma, t.merged) for t, s in zip(terms, chosen)]
    logger.info(f"Rewrite of {IndexList.parse(sigma)} at block {position}: signs {chosen}, "
                f"residual {best / scale:.3g}")
    return SignResolution(resolved, best / scale, runner_up)
