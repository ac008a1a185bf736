"""
Utility helpers: log-domain complex arithmetic, formatting and artifact writers
"""

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import DivisionError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def wrap_phase(phase: float) -> float:
    """Wrap an angle into (-pi, pi]"""
    return math.pi - math.fmod(math.fmod(math.pi - phase, TWO_PI) + TWO_PI, TWO_PI)


@dataclass(frozen=True)
class LogComplex:
    """Complex number stored as (log|z|, arg z); log_mag = -inf encodes zero"""
    log_mag: float
    phase: float = 0.0

    @classmethod
    def zero(cls) -> 'LogComplex':
        return cls(-math.inf, 0.0)

    @classmethod
    def one(cls) -> 'LogComplex':
        return cls(0.0, 0.0)

    @classmethod
    def from_complex(cls, value: complex) -> 'LogComplex':
        value = complex(value)
        if value == 0:
            return cls.zero()
        return cls(math.log(abs(value)), wrap_phase(math.atan2(value.imag, value.real)))

    @classmethod
    def from_log(cls, log_value: complex) -> 'LogComplex':
        """From a complex logarithm log|z| + i arg z"""
        log_value = complex(log_value)
        if math.isinf(log_value.real) and log_value.real < 0:
            return cls.zero()
        return cls(log_value.real, wrap_phase(log_value.imag))

    @property
    def is_zero(self) -> bool:
        return math.isinf(self.log_mag) and self.log_mag < 0

    def to_complex(self) -> complex:
        if self.is_zero:
            return 0j
        magnitude = math.exp(self.log_mag)
        return complex(magnitude * math.cos(self.phase), magnitude * math.sin(self.phase))

    @property
    def real(self) -> float:
        return self.to_complex().real

    @property
    def imag(self) -> float:
        return self.to_complex().imag

    def __abs__(self) -> float:
        return 0.0 if self.is_zero else math.exp(self.log_mag)

    def scale(self, log_factor: float) -> 'LogComplex':
        """Multiply by exp(log_factor)"""
        if self.is_zero:
            return self
        return LogComplex(self.log_mag + log_factor, self.phase)

    def conjugate(self) -> 'LogComplex':
        return LogComplex(self.log_mag, wrap_phase(-self.phase)) if not self.is_zero else self

    def __neg__(self) -> 'LogComplex':
        return LogComplex(self.log_mag, wrap_phase(self.phase + math.pi)) if not self.is_zero else self

    def __mul__(self, other) -> 'LogComplex':
        other = _as_log_complex(other)
        if self.is_zero or other.is_zero:
            return LogComplex.zero()
        return LogComplex(self.log_mag + other.log_mag, wrap_phase(self.phase + other.phase))

    __rmul__ = __mul__

    def __truediv__(self, other) -> 'LogComplex':
        other = _as_log_complex(other)
        if other.is_zero:
            raise DivisionError("Division of a LogComplex by zero")
        if self.is_zero:
            return self
        return LogComplex(self.log_mag - other.log_mag, wrap_phase(self.phase - other.phase))

    def __add__(self, other) -> 'LogComplex':
        other = _as_log_complex(other)
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        total, _ = log_sum([self, other])
        return total

    __radd__ = __add__

    def __sub__(self, other) -> 'LogComplex':
        return self + (-_as_log_complex(other))

    def __repr__(self) -> str:
        return f"LogComplex(log_mag={self.log_mag:.17g}, phase={self.phase:.17g})"


def _as_log_complex(value) -> LogComplex:
    if isinstance(value, LogComplex):
        return value
    return LogComplex.from_complex(value)


def log_sum(terms: Iterable[LogComplex]) -> Tuple[LogComplex, float]:
    """
    Sum LogComplex values by factoring out the largest magnitude

    Returns:
        (sum, ratio) where ratio = |sum| / max |term| (1.0 for an empty or zero sum)
    """
    terms = [term for term in terms if not term.is_zero]
    if not terms:
        return LogComplex.zero(), 1.0
    pivot = max(term.log_mag for term in terms)
    scaled = sum(math.exp(term.log_mag - pivot) * complex(math.cos(term.phase), math.sin(term.phase))
                 for term in terms)
    if scaled == 0:
        return LogComplex.zero(), 0.0
    total = LogComplex(pivot + math.log(abs(scaled)), wrap_phase(math.atan2(scaled.imag, scaled.real)))
    return total, abs(scaled)


@dataclass(frozen=True)
class PartialSum:
    """Block partial sum: value = scaled * exp(pivot)"""
    pivot: float
    scaled: complex
    count: int = 0

    @classmethod
    def empty(cls) -> 'PartialSum':
        return cls(-math.inf, 0j, 0)

    @classmethod
    def from_logs(cls, log_values: np.ndarray) -> 'PartialSum':
        """Sum exp(log_values) for a complex array of logarithms"""
        log_values = np.asarray(log_values).ravel()
        if log_values.size == 0:
            return cls.empty()
        pivot = float(np.max(log_values.real))
        if not math.isfinite(pivot):
            return cls(-math.inf, 0j, log_values.size)
        scaled = complex(np.sum(np.exp(log_values - pivot)))
        return cls(pivot, scaled, log_values.size)

    def merge(self, other: 'PartialSum') -> 'PartialSum':
        if not math.isfinite(self.pivot):
            return PartialSum(other.pivot, other.scaled, self.count + other.count)
        if not math.isfinite(other.pivot):
            return PartialSum(self.pivot, self.scaled, self.count + other.count)
        pivot = max(self.pivot, other.pivot)
        scaled = (self.scaled * math.exp(self.pivot - pivot)
                  + other.scaled * math.exp(other.pivot - pivot))
        return PartialSum(pivot, scaled, self.count + other.count)

    def to_log_complex(self) -> LogComplex:
        if not math.isfinite(self.pivot) or self.scaled == 0:
            return LogComplex.zero()
        return LogComplex(self.pivot + math.log(abs(self.scaled)),
                          wrap_phase(math.atan2(self.scaled.imag, self.scaled.real)))


def tree_reduce(partials: Sequence[PartialSum]) -> PartialSum:
    """Pairwise reduction in a fixed order"""
    level = list(partials)
    if not level:
        return PartialSum.empty()
    while len(level) > 1:
        merged = [level[k].merge(level[k + 1]) for k in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            merged.append(level[-1])
        level = merged
    return level[0]


def format_float(value: float) -> str:
    """Format a float with 17 significant digits"""
    return format(float(value), '.17g')


def to_jsonable(value: Any) -> Any:
    """Convert results (dataclasses, numpy, complex) into JSON-friendly values"""
    if isinstance(value, LogComplex):
        return {'log_mag': _json_float(value.log_mag), 'phase': value.phase,
                'value': to_jsonable(value.to_complex())}
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)
                if not f.name.startswith('_')}
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return _json_float(float(value))
    if isinstance(value, (complex, np.complexfloating)):
        value = complex(value)
        return {'re': _json_float(value.real), 'im': _json_float(value.imag)}
    if isinstance(value, pd.DataFrame):
        return value.to_dict(orient='records')
    if isinstance(value, Warning):
        return f"{type(value).__name__}: {value}"
    return value


def _json_float(value: float):
    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return value


def write_json(payload: Dict[str, Any], path: str) -> str:
    """Write a JSON artifact with sorted keys"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(to_jsonable(payload), handle, sort_keys=True, indent=2)
        handle.write('\n')
    logger.info(f"Wrote {path}")
    return path


def write_table(table: pd.DataFrame, path: str, config_hash: str, seed: Optional[int]) -> str:
    """
    Write a CSV artifact

    Args:
        table: Data with the documented column order
        path: Destination file
        config_hash: Hash of the experiment configuration, added as a column
        seed: Seed of the run, added as a column

    Returns:
        The written path
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame = table.copy()
    frame['config_hash'] = config_hash
    frame['seed'] = '' if seed is None else int(seed)
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def rows_to_frame(rows: List[Dict[str, Any]], columns: Sequence[str]) -> pd.DataFrame:
    """Build a DataFrame with a fixed column order"""
    return pd.DataFrame(rows, columns=list(columns))
