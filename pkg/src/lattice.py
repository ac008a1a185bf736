"""
Lattice Simulation
Exponential last-passage fields, geodesics and their projection, and the
windowed conditional Monte Carlo estimator
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import Config, NUMERIC_DEFAULTS
from src.errors import (AllocationError, BudgetExceeded, DomainError, RangeError,
                        ShapeError, SingularBasisError)
from src.scaling import ModelParams, lattice_ceil, lln_surface, rate_function, unconditional_lln

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


class Step(str, Enum):
    UP = 'Up'          # (+1, 0)
    RIGHT = 'Right'    # (0, +1)


def _generator(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream)"""
    key = np.array([int(seed) & _MASK64, int(stream) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _check_cells(M: int, N: int):
    if M < 1 or N < 1:
        raise DomainError(f"Lattice shape must be positive, got {M}x{N}")
    if M * N > Config.MAX_CELLS:
        raise AllocationError(f"{M}x{N} lattice exceeds the cap of {Config.MAX_CELLS} cells")


def _fill_row(previous: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    One row of the last-passage recursion, vectorized along the row

    lp[j] = c[j] + max_{k <= j} (previous[k] - c[k-1]) with c the running row sum.
    Works on a trailing row axis, so batches of rows fill together.
    """
    running = np.cumsum(weights, axis=-1)
    return running + np.maximum.accumulate(previous - (running - weights), axis=-1)


@dataclass(frozen=True)
class LatticeField:
    """Weights and last-passage values; index (i, j) is stored at [i-1, j-1]"""
    weights: np.ndarray
    lp: np.ndarray
    seed: int

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_weights(cls, weights: np.ndarray, seed: int = 0) -> 'LatticeField':
        """Fill lp for given weights (used for injected degenerate fields)"""
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2 or np.any(weights < 0):
            raise ShapeError("Weights must be a nonnegative 2-d array")
        lp = np.empty_like(weights)
        previous = np.zeros(weights.shape[1])
        for i in range(weights.shape[0]):
            previous = _fill_row(previous, weights[i])
            lp[i] = previous
        weights.setflags(write=False)
        lp.setflags(write=False)
        return cls(weights, lp, seed)


@dataclass(frozen=True)
class Geodesic:
    points: Tuple[Tuple[int, int], ...]
    steps: Tuple[Step, ...]

    def weight_sum(self, lattice: LatticeField) -> float:
        return float(sum(lattice.weights[i - 1, j - 1] for i, j in self.points))


@dataclass
class ConditionalSample:
    accepted: bool
    field: LatticeField
    target: float
    window_halfwidth: float
    observables: List[Tuple[float, float, float]]


def sample_field(M: int, N: int, seed: Optional[int] = None) -> LatticeField:
    """
    Sample i.i.d. mean-1 exponential weights and fill the last-passage values

    Row i draws from the Philox stream keyed by (seed, i), so cell (i, j) is
    the j-th draw of its row and smaller fields are prefixes of larger ones.
    """
    _check_cells(M, N)
    seed = Config.DEFAULT_SEED if seed is None else int(seed)
    weights = np.empty((M, N))
    for i in range(M):
        weights[i] = -np.log1p(-_generator(seed, i).random(N))
    return LatticeField.from_weights(weights, seed)


def lpp_at(lattice: LatticeField, alpha: float, beta: float) -> float:
    """Last-passage value at (ceil(alpha), ceil(beta))"""
    i, j = lattice_ceil(alpha), lattice_ceil(beta)
    if not (1 <= i <= lattice.rows and 1 <= j <= lattice.cols):
        raise RangeError(f"({alpha}, {beta}) maps to ({i}, {j}) outside the {lattice.rows}x{lattice.cols} field")
    return float(lattice.lp[i - 1, j - 1])


def extract_geodesic(lattice: LatticeField) -> Geodesic:
    """Backtrack from (M, N) along the argmax predecessor; ties go to Up"""
    lp = lattice.lp
    i, j = lattice.rows, lattice.cols
    points = [(i, j)]
    steps = []
    while i > 1 or j > 1:
        if j == 1 or (i > 1 and lp[i - 2, j - 1] >= lp[i - 1, j - 2]):
            i -= 1
            steps.append(Step.UP)
        else:
            j -= 1
            steps.append(Step.RIGHT)
        points.append((i, j))
    return Geodesic(tuple(reversed(points)), tuple(reversed(steps)))


def _basis(p: ModelParams) -> np.ndarray:
    """Columns v1 = (a, b) and the diagonal shift direction v2"""
    scale = p.ell * p.sqrt_D
    v2 = (p.a * (p.ell - p.a + p.b) / scale, -p.b * (p.ell + p.a - p.b) / scale)
    basis = np.array([[p.a, v2[0]], [p.b, v2[1]]])
    if abs(np.linalg.det(basis)) < 1e-14:
        raise SingularBasisError("Projection basis (v1, v2) is degenerate")
    return basis


def _corner_scale(p: ModelParams, L: float, M: int, N: int) -> Tuple[float, float]:
    """Affine map of lattice corners (1,1) and (M,N) onto (0,0) and (aL, bL)"""
    if M < 2 or N < 2:
        raise ShapeError(f"Projection needs at least a 2x2 lattice, got {M}x{N}")
    return p.a * L / (M - 1), p.b * L / (N - 1)


def geodesic_projection(g: Geodesic, p: ModelParams, L: float) -> List[Tuple[float, float]]:
    """(tau, pi_star) coordinates of every geodesic vertex in the (v1, v2) basis"""
    M, N = g.points[-1]
    sx, sy = _corner_scale(p, L, M, N)
    coords = np.array([((i - 1) * sx, (j - 1) * sy) for i, j in g.points])
    solved = np.linalg.solve(_basis(p), coords.T).T
    return [(float(tau), float(pi)) for tau, pi in solved]


def basis_to_lattice(p: ModelParams, L: float, M: int, N: int,
                     coords: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Inverse of geodesic_projection: (tau, pi_star) back to real lattice coordinates"""
    sx, sy = _corner_scale(p, L, M, N)
    points = _basis(p) @ np.asarray(coords, dtype=float).T
    return [(1.0 + x / sx, 1.0 + y / sy) for x, y in points.T]


# -- batched sampling ------------------------------------------------------------

def _batch_lpp(rng: np.random.Generator, M: int, N: int, size: int, rate: float,
               record: Dict[Tuple[int, int], None]) -> Tuple[np.ndarray, Dict[Tuple[int, int], np.ndarray], np.ndarray]:
    """Fill `size` independent fields row by row, keeping only the recorded cells"""
    previous = np.zeros((size, N))
    totals = np.zeros(size)
    kept: Dict[Tuple[int, int], np.ndarray] = {}
    rows = {}
    for i, j in record:
        rows.setdefault(i, []).append(j)
    for i in range(1, M + 1):
        weights = rng.standard_exponential((size, N)) / rate
        totals += weights.sum(axis=1)
        previous = _fill_row(previous, weights)
        for j in rows.get(i, ()):
            kept[(i, j)] = previous[:, j - 1].copy()
    return previous[:, -1].copy(), kept, totals


def sample_lpp_values(M: int, N: int, n_samples: int, seed: Optional[int] = None,
                      rate: float = 1.0, threads: Optional[int] = None) -> np.ndarray:
    """n_samples independent draws of L(M, N) with Exp(rate) weights"""
    _check_cells(M, N)
    seed = Config.DEFAULT_SEED if seed is None else int(seed)
    batch = Config.MC_BATCH
    sizes = [min(batch, n_samples - start) for start in range(0, n_samples, batch)]

    def run(index: int) -> np.ndarray:
        return _batch_lpp(_generator(seed, index), M, N, sizes[index], rate, {})[0]

    with ThreadPoolExecutor(max_workers=threads or Config.THREADS) as pool:
        parts = list(pool.map(run, range(len(sizes))))
    return np.concatenate(parts) if parts else np.empty(0)


# -- conditional Monte Carlo -------------------------------------------------------

@dataclass
class ConditionalMCResult:
    """Summary of a windowed conditional run"""
    L: float
    delta: float
    window: Tuple[float, float]
    accepted: int
    draws: int
    acceptance_rate: float
    ld_prediction: float
    tilted: bool
    effective_sample_size: float
    summary: pd.DataFrame
    samples: pd.DataFrame
    cross_covariance: pd.DataFrame
    seed: int
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            'L': self.L, 'delta': self.delta, 'window': list(self.window),
            'accepted': self.accepted, 'draws': self.draws,
            'acceptance_rate': self.acceptance_rate, 'ld_prediction': self.ld_prediction,
            'acceptance_log_ratio': (math.log(self.acceptance_rate / self.ld_prediction)
                                     if self.acceptance_rate > 0 else None),
            'tilted': self.tilted, 'effective_sample_size': self.effective_sample_size,
            'summary': self.summary, 'cross_covariance': self.cross_covariance.reset_index(),
            'seed': self.seed, 'warnings': self.warnings,
        }


class ConditionalSampler:
    """
    Rejection sampler for fields whose corner value lands in
    [ell L - delta sigma sqrt(L), ell L + delta sigma sqrt(L)]
    """

    def __init__(self, p: ModelParams, L: float, delta: Optional[float] = None,
                 observables: Sequence[Tuple[float, float]] = ((0.5, 0.5),),
                 tilting: Optional[bool] = None):
        if L <= 0:
            raise DomainError(f"Scale L must be positive, got {L}")
        self.p = p
        self.L = float(L)
        self.delta = NUMERIC_DEFAULTS['window_delta'] if delta is None else float(delta)
        if self.delta <= 0:
            raise DomainError(f"Window delta must be positive, got {self.delta}")
        self.M = lattice_ceil(p.a * L)
        self.N = lattice_ceil(p.b * L)
        _check_cells(self.M, self.N)
        for x, y in observables:
            if not (0.0 < x <= 1.0 and 0.0 < y <= 1.0):
                raise DomainError(f"Observable ({x}, {y}) must lie in (0, 1]^2")
        self.observables = [tuple(map(float, point)) for point in observables]
        self.cells = [(max(1, lattice_ceil(x * p.a * L)), max(1, lattice_ceil(y * p.b * L)))
                      for x, y in self.observables]
        self.target = p.ell * L
        self.halfwidth = self.delta * p.sigma * math.sqrt(L)
        self.tilting = Config.TILTING if tilting is None else bool(tilting)
        self.rate = unconditional_lln(p.a, p.b, 1.0, 1.0) / p.ell if self.tilting else 1.0
        self.centers = [lln_surface(p, x, y) * L for x, y in self.observables]
        self.fluctuation_scale = math.sqrt(2.0) * p.sigma * math.sqrt(L)

    def run_batch(self, seed: int, index: int) -> Dict[str, np.ndarray]:
        rng = _generator(seed, index)
        final, kept, totals = _batch_lpp(rng, self.M, self.N, Config.MC_BATCH, self.rate,
                                         dict.fromkeys(self.cells))
        hit = np.abs(final - self.target) <= self.halfwidth
        log_weight = np.zeros(int(hit.sum()))
        if self.tilting:
            cells = self.M * self.N
            log_weight = -cells * math.log(self.rate) - (1.0 - self.rate) * totals[hit]
        values = np.column_stack([kept[cell][hit] for cell in self.cells]) if self.cells else np.empty((hit.sum(), 0))
        return {'values': values, 'log_weight': log_weight, 'draws': np.array(len(final))}

    def run(self, n_target: int, seed: Optional[int] = None, budget: Optional[int] = None,
            threads: Optional[int] = None) -> ConditionalMCResult:
        if n_target < 1:
            raise DomainError(f"n_target must be positive, got {n_target}")
        seed = Config.DEFAULT_SEED if seed is None else int(seed)
        budget = Config.MC_BUDGET if budget is None else int(budget)
        threads = threads or Config.THREADS
        batches: List[Dict[str, np.ndarray]] = []
        hits = draws = 0
        next_index = 0
        with ThreadPoolExecutor(max_workers=threads) as pool:
            while hits < n_target:
                wave = list(range(next_index, next_index + threads))
                next_index += threads
                # batches are consumed in index order and nothing past the one completing n_target counts
                for result in pool.map(lambda k: self.run_batch(seed, k), wave):
                    if hits >= n_target:
                        break
                    if draws >= budget:
                        partial = self._summarize(batches, n_target, seed)
                        raise BudgetExceeded(f"Draw budget {budget} exhausted with {min(hits, n_target)}/"
                                             f"{n_target} accepted samples", partial)
                    batches.append(result)
                    hits += len(result['log_weight'])
                    draws += int(result['draws'])
                logger.info(f"Conditional MC L={self.L}: {hits} accepted of {draws} draws")
        return self._summarize(batches, n_target, seed)

    def _summarize(self, batches: List[Dict[str, np.ndarray]], n_target: int,
                   seed: int) -> ConditionalMCResult:
        draws = sum(int(b['draws']) for b in batches)
        hits = sum(len(b['log_weight']) for b in batches)
        if batches:
            values = np.concatenate([b['values'] for b in batches])[:n_target]
            log_weight = np.concatenate([b['log_weight'] for b in batches])[:n_target]
        else:
            values = np.empty((0, len(self.cells)))
            log_weight = np.empty(0)
        accepted = len(log_weight)
        weight = np.exp(log_weight - log_weight.max()) if accepted else log_weight
        weight = weight / weight.sum() if accepted else weight
        ess = float(1.0 / np.sum(weight ** 2)) if accepted else 0.0

        labels = [f"({x:g},{y:g})" for x, y in self.observables]
        fluct = (values - np.array(self.centers)) / self.fluctuation_scale
        rows = []
        for k, (x, y) in enumerate(self.observables):
            rows.append(self._stats(x, y, values[:, k] / self.L, fluct[:, k], weight))
        summary = pd.DataFrame(rows, columns=['x', 'y', 'h', 'unconditioned', 'mean', 'se',
                                              'fluct_mean', 'fluct_se'])
        samples = pd.DataFrame({
            'sample': np.repeat(np.arange(accepted), len(self.observables)),
            'x': np.tile([x for x, _ in self.observables], accepted),
            'y': np.tile([y for _, y in self.observables], accepted),
            'value': (values / self.L).ravel(),
            'fluctuation': fluct.ravel(),
            'weight': np.repeat(weight, len(self.observables)),
        })
        cross = pd.DataFrame(fluct, columns=labels).cov() if accepted > 1 else pd.DataFrame(columns=labels)
        rate = hits / draws if draws else 0.0
        prediction = math.exp(-rate_function(self.p) * self.L)
        notes = []
        if self.tilting and accepted and ess < 0.1 * accepted:
            notes.append(f"Tilted weights degenerate: effective sample size {ess:.1f} of {accepted}")
            logger.warning(notes[-1])
        return ConditionalMCResult(self.L, self.delta, (self.target - self.halfwidth, self.target + self.halfwidth),
                                   accepted, draws, rate, prediction, self.tilting, ess,
                                   summary, samples, cross, seed, notes)

    def _stats(self, x: float, y: float, scaled: np.ndarray, fluct: np.ndarray,
               weight: np.ndarray) -> Dict[str, float]:
        row = {'x': x, 'y': y, 'h': lln_surface(self.p, x, y),
               'unconditioned': unconditional_lln(self.p.a, self.p.b, x, y)}
        if len(scaled) == 0:
            row.update(mean=math.nan, se=math.nan, fluct_mean=math.nan, fluct_se=math.nan)
            return row
        for name, data in (('', scaled), ('fluct_', fluct)):
            mean = float(np.sum(weight * data))
            if self.tilting:
                se = float(math.sqrt(np.sum(weight ** 2 * (data - mean) ** 2)))
            else:
                series = pd.Series(data)
                se = float(series.sem()) if len(series) > 1 else math.nan
            row[f'{name}mean'] = mean
            row[f'{name}se'] = se
        return row


def conditional_mc(p: ModelParams, L: float, delta: Optional[float] = None,
                   observables: Sequence[Tuple[float, float]] = ((0.5, 0.5),),
                   n_target: int = 500, seed: Optional[int] = None, budget: Optional[int] = None,
                   threads: Optional[int] = None, tilting: Optional[bool] = None) -> ConditionalMCResult:
    """
    Windowed conditional Monte Carlo

    Args:
        p: Model parameters
        L: Scale; the field is ceil(aL) x ceil(bL)
        delta: Window halfwidth in units of sigma sqrt(L)
        observables: Points (x, y) read at (ceil(x a L), ceil(y b L))
        n_target: Accepted samples to collect
        budget: Maximum number of drawn fields

    Returns:
        ConditionalMCResult; BudgetExceeded carries the partial result
    """
    sampler = ConditionalSampler(p, L, delta, observables, tilting)
    return sampler.run(n_target, seed, budget, threads)


def conditional_sample(p: ModelParams, L: float, seed: Optional[int] = None,
                       delta: Optional[float] = None,
                       observables: Sequence[Tuple[float, float]] = ()) -> ConditionalSample:
    """One full field with its acceptance verdict, for geodesic inspection"""
    delta = NUMERIC_DEFAULTS['window_delta'] if delta is None else delta
    M, N = lattice_ceil(p.a * L), lattice_ceil(p.b * L)
    lattice = sample_field(M, N, seed)
    target = p.ell * L
    halfwidth = delta * p.sigma * math.sqrt(L)
    corner = float(lattice.lp[-1, -1])
    values = [(x, y, lpp_at(lattice, x * p.a * L, y * p.b * L) / L) for x, y in observables]
    return ConditionalSample(abs(corner - target) <= halfwidth, lattice, target, halfwidth, values)


def window_sensitivity(p: ModelParams, L: float, observables: Sequence[Tuple[float, float]],
                       deltas: Optional[Sequence[float]] = None, n_target: int = 500,
                       seed: Optional[int] = None, budget: Optional[int] = None,
                       threads: Optional[int] = None) -> pd.DataFrame:
    """Per-observable conditional means across window widths"""
    deltas = NUMERIC_DEFAULTS['window_sweep'] if deltas is None else deltas
    frames = []
    for delta in deltas:
        result = conditional_mc(p, L, delta, observables, n_target, seed, budget, threads)
        frame = result.summary[['x', 'y', 'h', 'mean', 'se']].copy()
        frame.insert(0, 'delta', delta)
        frame['acceptance_rate'] = result.acceptance_rate
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
