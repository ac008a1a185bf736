"""
Experiment command line
Subcommands constants | density | conditional | simulate | identity-check | limit | convergence,
each driven by a flat dotted key/value configuration
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src import __version__
from src.config import (Config, ExperimentConfig, KNOWN_COMMANDS, NUMERIC_DEFAULTS, RADIUS_MODES,
                        load_experiment_config)
from src.contours import ObservationPlan
from src.errors import BudgetExceeded, LPPError, ValidationError
from src.finite import (IDENTITIES, LEADING_LISTS, conditional_probability, density_and_tail,
                        density_sweep, leading_integral, verify_identity)
from src.lattice import conditional_mc, sample_lpp_values, window_sensitivity
from src.limits import (BRIDGE_METHODS, BridgeSpec, DiagSpec, bridge_covariance, bridge_crossing,
                        diag_limit, offdiag_two_point_limit)
from src.scaling import (ModelParams, RegionQuery, classify_region, critical_ordering, g_star_family,
                         make_params, validate_region_query)
from src.utils import rows_to_frame, to_jsonable, write_json, write_table

logger = logging.getLogger(__name__)

DEFAULT_IDENTITIES = ('QQ111-a', 'QQ111-b', 'QQ111-c', 'QQ111-d')


@dataclass
class RunContext:
    seed: int
    threads: int
    out_dir: str
    fmt: str


@dataclass
class RunOutput:
    """Table and summary of one command; exit_code 3 flags a failed tolerance check"""
    command: str
    table: pd.DataFrame
    summary: Dict[str, object] = field(default_factory=dict)
    exit_code: int = 0


# -- configuration helpers ---------------------------------------------------------

def _context(cfg: ExperimentConfig) -> RunContext:
    seed = cfg.get_int('run.seed', Config.DEFAULT_SEED)
    threads = cfg.get_int('run.threads', Config.THREADS)
    fmt = cfg.get_str('output.format', Config.DEFAULT_FORMAT)
    if seed < 0 or seed >= 2 ** 64:
        raise ValidationError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    if threads < 1:
        raise ValidationError(f"Thread count must be positive, got {threads}")
    if fmt not in ('csv', 'json'):
        raise ValidationError(f"output.format must be csv or json, got {fmt!r}")
    return RunContext(seed, threads, cfg.get_str('output.dir', Config.OUTPUT_DIR), fmt)


def _model(cfg: ExperimentConfig) -> ModelParams:
    cfg.require('model.a', 'model.b', 'model.ell')
    return make_params(cfg.get_float('model.a'), cfg.get_float('model.b'), cfg.get_float('model.ell'))


def _query(cfg: ExperimentConfig, p: ModelParams) -> RegionQuery:
    points = cfg.get_points('geometry.points')
    if len(points) != 2 or any(len(point) != 2 for point in points):
        raise ValidationError("geometry.points must hold exactly two points 'x1,y1; x2,y2'")
    q = RegionQuery(points[0][0], points[0][1], points[1][0], points[1][1])
    return q


def _thresholds(cfg: ExperimentConfig) -> Tuple[float, float]:
    r = cfg.get_float_list('geometry.r', [0.0, 0.0])
    if len(r) != 2:
        raise ValidationError(f"geometry.r needs two values, got {r}")
    return r[0], r[1]


def _radius_mode(cfg: ExperimentConfig, default: str) -> str:
    mode = cfg.get_str('numeric.radius_mode', default)
    if mode not in RADIUS_MODES:
        raise ValidationError(f"numeric.radius_mode must be one of {RADIUS_MODES}, got {mode!r}")
    return mode


def _positive(name: str, value: Optional[float]):
    if value is None or not value > 0:
        raise ValidationError(f"{name} must be positive, got {value}")


def _ladder(cfg: ExperimentConfig, key: str, default: Sequence[float]) -> List[float]:
    ladder = cfg.get_float_list(key, list(default))
    if not ladder:
        raise ValidationError(f"{key} must not be empty")
    for L in ladder:
        _positive(key, L)
    return ladder


# -- commands ----------------------------------------------------------------------

def cli_constants(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    """Scaling constants, and with geometry.points the region and critical points"""
    p = _model(cfg)
    q = None
    if cfg.has('geometry.points'):
        q = _query(cfg, p)
        validate_region_query(p, q)

    rows = [{'quantity': name, 'value': value} for name, value in p.as_dict().items()]
    summary: Dict[str, object] = {'constants': p.as_dict()}
    if q is not None:
        label = classify_region(p, q)
        for symbol, result in g_star_family(p, q).items():
            rows.append({'quantity': f'z_minus[{symbol}]', 'value': result.z_minus})
            rows.append({'quantity': f'z_plus[{symbol}]', 'value': result.z_plus})
        summary['region'] = label
        summary['ordering'] = critical_ordering(p, q)
    return RunOutput('constants', rows_to_frame(rows, ['quantity', 'value']), summary)


def cli_density(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    """Density and upper tail of L(M, N) over a T grid"""
    cfg.require('geometry.M', 'geometry.N')
    M, N = cfg.get_int('geometry.M'), cfg.get_int('geometry.N')
    if M < 1 or N < 1:
        raise ValidationError(f"geometry.M and geometry.N must be at least 1, got ({M}, {N})")
    grid = cfg.get_float_list('numeric.T_grid', [0.5, 1.0, 2.0])
    if not grid or min(grid) < 0:
        raise ValidationError("numeric.T_grid must be a nonempty list of nonnegative values")
    tail_method = cfg.get_str('numeric.tail_method', 'series')
    if tail_method not in ('series', 'quad'):
        raise ValidationError(f"numeric.tail_method must be series or quad, got {tail_method!r}")
    n_max = cfg.get_int('numeric.n_max')

    table = density_sweep(M, N, grid, n_max, tail_method)
    return RunOutput('density', table, {'M': M, 'N': N, 'tail_method': tail_method})


def _plan(cfg: ExperimentConfig) -> Tuple[ObservationPlan, Optional[Tuple[ModelParams, RegionQuery, float, float]]]:
    """Scaled plan from model + points + L, or an explicit plan from geometry.M/N/T"""
    if cfg.has('geometry.points'):
        p = _model(cfg)
        q = _query(cfg, p)
        validate_region_query(p, q)
        r1, r2 = _thresholds(cfg)
        cfg.require('geometry.L')
        L = cfg.get_float('geometry.L')
        _positive('geometry.L', L)
        return ObservationPlan.scaled(p, q, L, r1, r2), (p, q, r1, r2)
    cfg.require('geometry.M', 'geometry.N', 'geometry.T')
    plan = ObservationPlan(tuple(cfg.get_int_list('geometry.M')), tuple(cfg.get_int_list('geometry.N')),
                           tuple(cfg.get_float_list('geometry.T')))
    return plan, None


def cli_conditional(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    """One conditional ratio Q_m / Q_1 with its error bar"""
    plan, scaled = _plan(cfg)
    plan.check_hypotheses()
    mode = _radius_mode(cfg, Config.RADIUS_MODE)
    n_max = cfg.get_int('numeric.n_max')
    if n_max is not None and n_max < plan.m:
        raise ValidationError(f"numeric.n_max must be at least m={plan.m}, got {n_max}")

    result = conditional_probability(plan, n_max, cfg.get_int('numeric.nodes'), mode,
                                     threads=ctx.threads, seed=ctx.seed)
    row = {'value': result.value, 'error': result.error, 'n_max': result.numerator.n_max,
           'numerator': result.numerator.value, 'denominator': result.denominator.value}
    summary = {'plan': plan.describe(), 'warnings': result.warnings}
    if scaled is not None:
        p, q, r1, r2 = scaled
        row['limit'] = offdiag_two_point_limit(p, q, r1, r2)
    return RunOutput('conditional', pd.DataFrame([row]), summary)


def _simulate_unconditional(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    cfg.require('simulate.M', 'simulate.N')
    M, N = cfg.get_int('simulate.M'), cfg.get_int('simulate.N')
    samples = cfg.get_int('numeric.samples', 10 ** 4)
    if samples < 2:
        raise ValidationError(f"numeric.samples must be at least 2, got {samples}")
    levels = cfg.get_float_list('geometry.T', [])

    values = sample_lpp_values(M, N, samples, ctx.seed, threads=ctx.threads)
    series = pd.Series(values)
    summary: Dict[str, object] = {'M': M, 'N': N, 'samples': samples,
                                  'mean': float(series.mean()), 'se': float(series.sem())}
    if M == N:
        summary['scaled_mean'] = float(series.mean()) / N
    tails = []
    for T in levels:
        hit = (series > T)
        estimate = float(hit.mean())
        tails.append({'T': T, 'mc_tail': estimate, 'mc_se': math.sqrt(estimate * (1 - estimate) / samples),
                      'series_tail': density_and_tail(M, N, T)[1]})
    summary['tails'] = tails
    table = pd.DataFrame({'sample': range(samples), 'value': values})
    return RunOutput('simulate', table, summary)


def _observables(cfg: ExperimentConfig) -> List[Tuple[float, float]]:
    points = cfg.get_points('geometry.points') or [(0.5, 0.4), (1.0, 1.0)]
    for point in points:
        if len(point) != 2:
            raise ValidationError(f"Observables must be (x, y) pairs, got {point}")
    return [tuple(point) for point in points]


def cli_simulate(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    """Monte Carlo: unconditional tails, windowed conditional means, or a window sweep"""
    mode = cfg.get_str('simulate.mode', 'conditional')
    if mode == 'unconditional':
        return _simulate_unconditional(cfg, ctx)
    if mode not in ('conditional', 'window-sweep'):
        raise ValidationError(f"simulate.mode must be conditional, unconditional or window-sweep, got {mode!r}")
    p = _model(cfg)
    cfg.require('geometry.L')
    L = cfg.get_float('geometry.L')
    _positive('geometry.L', L)
    observables = _observables(cfg)
    n_target = cfg.get_int('numeric.n_target', 500)
    budget = cfg.get_int('numeric.budget', Config.MC_BUDGET)
    _positive('numeric.n_target', n_target)

    if mode == 'window-sweep':
        deltas = cfg.get_float_list('numeric.deltas', list(NUMERIC_DEFAULTS['window_sweep']))
        for delta in deltas:
            _positive('numeric.deltas', delta)
        table = window_sensitivity(p, L, observables, deltas, n_target, ctx.seed, budget, ctx.threads)
        return RunOutput('simulate', table, {'mode': mode, 'L': L})

    delta = cfg.get_float('numeric.delta', NUMERIC_DEFAULTS['window_delta'])
    _positive('numeric.delta', delta)
    tilting = cfg.get_str('simulate.tilting', str(Config.TILTING)).lower() == 'true'
    result = conditional_mc(p, L, delta, observables, n_target, ctx.seed, budget, ctx.threads, tilting)
    summary = result.to_dict()
    summary['mode'] = mode
    return RunOutput('simulate', result.samples, summary)


def cli_identity(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    """Residuals of the selected deformation identities; exit code 3 when an applicable one misses its tier"""
    p = _model(cfg)
    q = _query(cfg, p)
    validate_region_query(p, q)
    ids = [item.strip() for item in cfg.get_str('identity.ids', ','.join(DEFAULT_IDENTITIES)).split(',')
           if item.strip()]
    unknown = [item for item in ids if item not in IDENTITIES]
    if unknown or not ids:
        raise ValidationError(f"identity.ids must name identities from {sorted(IDENTITIES)}, got {unknown or ids}")
    L = cfg.get_float('geometry.L', 6.0)
    _positive('geometry.L', L)
    r1, r2 = _thresholds(cfg)
    mode = _radius_mode(cfg, Config.RADIUS_MODE)
    radii = cfg.get_float_list('numeric.radii')
    method = cfg.get_str('numeric.method', 'auto')

    rows = []
    failed = []
    skipped = []
    for identity_id in ids:
        report = verify_identity(identity_id, p, q, L, r1, r2, cfg.get_int('numeric.nodes'), mode,
                                 method, ctx.threads, ctx.seed, radii)
        rows.append({'identity': identity_id, 'region': report.region, 'applicable': report.applicable,
                     'lhs': report.lhs, 'rhs': report.rhs, 'residual': report.residual,
                     'tolerance': report.tolerance, 'passed': report.passed,
                     'dimension': report.dimension, 'node_spread': report.node_spread})
        if not report.applicable:
            skipped.append(identity_id)
        elif not report.passed:
            failed.append(identity_id)
    columns = ['identity', 'region', 'applicable', 'lhs', 'rhs', 'residual', 'tolerance', 'passed',
               'dimension', 'node_spread']
    if skipped:
        logger.info(f"Identities not applicable here: {', '.join(skipped)}")
    if failed:
        logger.error(f"Identities above tolerance: {', '.join(failed)}")
    return RunOutput('identity-check', rows_to_frame(rows, columns),
                     {'failed': failed, 'skipped': skipped, 'L': L},
                     3 if failed else 0)


def cli_limit(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    """Limit-law values: bridge crossing, diagonal functional or off-diagonal two-point law"""
    kind = cfg.get_str('limit.kind', 'offdiag')
    if kind == 'bridge':
        method = cfg.get_str('limit.method', 'closed_form')
        if method not in BRIDGE_METHODS:
            raise ValidationError(f"limit.method must be one of {BRIDGE_METHODS}, got {method!r}")
        spec = BridgeSpec(cfg.get_float('limit.total', 1.0), tuple(cfg.get_float_list('geometry.times', [])),
                          tuple(cfg.get_float_list('geometry.thresholds', [])))
        result = bridge_crossing(spec, method, cfg.get_int('numeric.paths'), ctx.seed, ctx.threads)
        row = {'kind': kind, 'method': method, 'value': result.value, 'error': result.error}
        return RunOutput('limit', pd.DataFrame([row]), {'diagnostics': result.diagnostics})

    p = _model(cfg)
    if kind == 'diag':
        shifts = cfg.get_float_list('geometry.shifts', [])
        times = cfg.get_float_list('geometry.times', [])
        levels = cfg.get_float_list('geometry.thresholds', [])
        if not (len(shifts) == len(times) == len(levels)):
            raise ValidationError("geometry.shifts, geometry.times and geometry.thresholds must have equal length")
        method = cfg.get_str('limit.method', 'factorized')
        spec = DiagSpec(p, tuple(zip(shifts, times, levels)))
        result = diag_limit(spec, method, cfg.get_int('numeric.paths'), ctx.seed)
        row = {'kind': kind, 'method': method, 'value': result.value, 'error': result.error}
        covariance = {t: bridge_covariance(p, t) for t in times}
        return RunOutput('limit', pd.DataFrame([row]), {'bridge_covariance': covariance})
    if kind == 'offdiag':
        q = _query(cfg, p)
        r1, r2 = _thresholds(cfg)
        value = offdiag_two_point_limit(p, q, r1, r2)
        row = {'kind': kind, 'method': 'closed_form', 'value': value, 'error': 0.0}
        return RunOutput('limit', pd.DataFrame([row]), {'region': classify_region(p, q)})
    raise ValidationError(f"limit.kind must be bridge, diag or offdiag, got {kind!r}")


def cli_convergence(cfg: ExperimentConfig, ctx: RunContext) -> RunOutput:
    """Finite-L values on an L ladder next to their limit, with the gap column"""
    p = _model(cfg)
    q = _query(cfg, p)
    validate_region_query(p, q)
    r1, r2 = _thresholds(cfg)
    target = cfg.get_str('convergence.target', 'ratio')
    mode = _radius_mode(cfg, Config.RADIUS_MODE)
    nodes = cfg.get_int('numeric.nodes')

    rows = []
    if target == 'ratio':
        ladder = _ladder(cfg, 'convergence.L', (10.0, 20.0, 40.0))
        plans = [ObservationPlan.scaled(p, q, L, r1, r2) for L in ladder]
        for plan in plans:
            plan.check_hypotheses()
        limit = offdiag_two_point_limit(p, q, r1, r2)
        for L, plan in zip(ladder, plans):
            result = conditional_probability(plan, cfg.get_int('numeric.n_max'), nodes, mode,
                                             threads=ctx.threads, seed=ctx.seed)
            rows.append({'L': L, 'finite': result.value, 'error': result.error,
                         'limit': limit, 'gap': abs(result.value - limit)})
    elif target == 'leading':
        ladder = _ladder(cfg, 'convergence.L', (8.0, 16.0, 32.0))
        which = cfg.get_str('leading.which')
        if which is not None and which not in LEADING_LISTS:
            raise ValidationError(f"leading.which must be one of {sorted(LEADING_LISTS)}, got {which!r}")
        for L in ladder:
            result = leading_integral(p, q, L, r1, r2, which, nodes, mode, ctx.threads, ctx.seed)
            rows.append({'L': L, 'finite': result.scaled, 'error': result.error,
                         'limit': result.prediction, 'gap': result.gap})
    else:
        raise ValidationError(f"convergence.target must be ratio or leading, got {target!r}")
    table = rows_to_frame(rows, ['L', 'finite', 'error', 'limit', 'gap'])
    gaps = table['gap'].tolist()
    decreasing = all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
    return RunOutput('convergence', table, {'target': target, 'gap_decreasing': decreasing,
                                            'region': classify_region(p, q)})


RUNNERS: Dict[str, Callable[[ExperimentConfig, RunContext], RunOutput]] = {
    'constants': cli_constants,
    'density': cli_density,
    'conditional': cli_conditional,
    'simulate': cli_simulate,
    'identity-check': cli_identity,
    'limit': cli_limit,
    'convergence': cli_convergence,
}


# -- artifacts ----------------------------------------------------------------------

def build_meta(cfg: ExperimentConfig, ctx: RunContext) -> Dict[str, object]:
    return {
        'config': cfg.echo(),
        'config_hash': cfg.config_hash(),
        'seed': ctx.seed,
        'version': __version__,
        'numeric_defaults': NUMERIC_DEFAULTS['version'],
    }


def write_outputs(output: RunOutput, cfg: ExperimentConfig, ctx: RunContext) -> List[str]:
    """CSV table plus JSON summary, or a single JSON document"""
    stem = os.path.join(ctx.out_dir, output.command)
    payload = {'meta': build_meta(cfg, ctx), 'summary': output.summary}
    if ctx.fmt == 'json':
        payload['table'] = output.table
        return [write_json(payload, f'{stem}.json')]
    return [write_table(output.table, f'{stem}.csv', cfg.config_hash(), ctx.seed),
            write_json(payload, f'{stem}.summary.json')]


def run_command(cfg: ExperimentConfig) -> int:
    """Validate, compute and write one command; returns the exit code"""
    ctx = _context(cfg)
    command = cfg.command
    if command not in RUNNERS:
        raise ValidationError(f"Unknown command {command!r}")
    try:
        output = RUNNERS[command](cfg, ctx)
    except BudgetExceeded as exc:
        if exc.partial is not None:
            payload = {'meta': build_meta(cfg, ctx), 'partial': to_jsonable(exc.partial.to_dict())}
            write_json(payload, os.path.join(ctx.out_dir, f'{command}.partial.json'))
        raise
    write_outputs(output, cfg, ctx)
    return output.exit_code


def _parse_sets(pairs: Sequence[str]) -> Dict[str, str]:
    values = {}
    for pair in pairs:
        if '=' not in pair:
            raise ValidationError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split('=', 1)
        values[key.strip()] = value.strip()
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='lpp-conditional',
        description='Conditional distributions of exponential last-passage percolation under an upper large deviation',
    )
    parser.add_argument('command', choices=KNOWN_COMMANDS, help='Experiment to run')
    parser.add_argument('--config', type=str, default=None, help='Flat key = value configuration file')
    parser.add_argument('--seed', type=int, default=None, help='Unsigned 64-bit seed')
    parser.add_argument('--threads', type=int, default=None,
                        help=f'Worker threads (default: LPP_THREADS or {Config.THREADS})')
    parser.add_argument('--out', type=str, default=None, help=f'Output directory (default: {Config.OUTPUT_DIR})')
    parser.add_argument('--format', choices=('csv', 'json'), default=None, help='Artifact format')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a configuration key; repeatable')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=Config.LOG_LEVEL, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    status = Config.validate_config()
    for message in status['warnings']:
        logger.warning(message)
    try:
        if not status['is_valid']:
            raise ValidationError('; '.join(status['errors']))
        overrides = {'command': args.command, 'run.seed': args.seed, 'run.threads': args.threads,
                     'output.dir': args.out, 'output.format': args.format}
        overrides.update(_parse_sets(args.set))
        cfg = load_experiment_config(args.config, overrides)
        return run_command(cfg)
    except LPPError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"Unexpected failure: {exc}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
