# -*- coding: utf-8 -*-
"""
Configuration settings for the LPP conditional-distribution toolkit
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from dotenv import load_dotenv

from src.errors import ValidationError

# Load environment variables
load_dotenv()


class Config:
    """Runtime configuration read from the environment"""

    # Logging / output
    LOG_LEVEL = os.getenv('LPP_LOG_LEVEL', 'INFO').upper()
    OUTPUT_DIR = os.getenv('LPP_OUTPUT_DIR', 'results')
    DEFAULT_FORMAT = os.getenv('LPP_FORMAT', 'csv')

    # Parallelism
    THREADS = int(os.getenv('LPP_THREADS', os.cpu_count() or 1))
    BLOCK_POINTS = int(os.getenv('LPP_BLOCK_POINTS', 2 ** 20))

    # Simulation
    MAX_CELLS = int(os.getenv('LPP_MAX_CELLS', 10 ** 8))
    MC_BUDGET = int(os.getenv('LPP_MC_BUDGET', 5 * 10 ** 7))
    MC_BATCH = int(os.getenv('LPP_MC_BATCH', 4096))
    DEFAULT_SEED = int(os.getenv('LPP_SEED', 20240601))
    TILTING = os.getenv('LPP_TILTING', 'False').lower() == 'true'

    # Quadrature
    RADIUS_MODE = os.getenv('LPP_RADIUS_MODE', 'geometric')
    QMC_POINTS = int(os.getenv('LPP_QMC_POINTS', 2 ** 18))

    @classmethod
    def validate_config(cls):
        """Validate configuration settings"""
        warnings = []
        errors = []

        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            errors.append(f"LPP_LOG_LEVEL must be a logging level name, got {cls.LOG_LEVEL}")

        if cls.THREADS < 1:
            errors.append("LPP_THREADS must be at least 1")

        if cls.MAX_CELLS < 1:
            errors.append("LPP_MAX_CELLS must be positive")

        if cls.RADIUS_MODE not in RADIUS_MODES:
            errors.append(f"LPP_RADIUS_MODE must be one of {sorted(RADIUS_MODES)}")

        if cls.DEFAULT_FORMAT not in ('csv', 'json'):
            errors.append("LPP_FORMAT must be csv or json")

        if cls.BLOCK_POINTS < 2 ** 12:
            warnings.append("LPP_BLOCK_POINTS is very small - quadrature will be slow")

        if cls.TILTING:
            warnings.append("Exponential tilting is experimental - variance may be unbounded")

        return {
            'errors': errors,
            'warnings': warnings,
            'is_valid': len(errors) == 0
        }


RADIUS_MODES = ('linear', 'geometric', 'steepest')

# Numerical defaults; the version string is embedded in every artifact
NUMERIC_DEFAULTS = {
    'version': 'numeric-defaults/1',
    # trapezoid nodes per circle by total dimension
    'nodes_by_dimension': {4: 32, 6: 24, 8: 10},
    'qmc_dimension': 9,
    'qmc_shifts': 3,
    'rotations': 3,
    # radii
    'radius_base': 0.10,
    'radius_step': 0.05,
    'geometric_top': 0.33,
    'geometric_ratio': 1.9,
    'steepest_ratio': 1.9,
    'radius_cap': 0.4,
    'single_radius': 0.25,
    # z-circles of the Q^(n) integrals
    'z_radius': 2.0,
    'z_nodes': 48,
    # tails
    'tail_cut': 40.0,
    # conditioning window
    'window_delta': 0.2,
    'window_sweep': (0.1, 0.2, 0.4),
    # diagnostics
    'cancellation_ratio': 1e-12,
    'pole_distance': 1e-6,
    'imag_tolerance': 1e-9,
    'truncation_ratio': 1e-3,
    # series truncation default is m + n_max_offset
    'n_max_offset': 2,
    # identity tolerance tiers
    'identity_tolerance': {6: 1e-4, 8: 1e-2},
    # limit-law quadrature
    'bridge_step': 0.1,
    'bridge_extent': 12.0,
    'bridge_mc_steps': 2 ** 10,
    'bridge_mc_paths': 10 ** 6,
}

KNOWN_COMMANDS = ('constants', 'density', 'conditional', 'simulate',
                  'identity-check', 'limit', 'convergence')


def _strip(text: str) -> str:
    return text.split('#', 1)[0].strip()


@dataclass
class ExperimentConfig:
    """Flat dotted key/value experiment configuration"""
    values: Dict[str, str] = field(default_factory=dict)
    source: Optional[str] = None

    @property
    def command(self) -> Optional[str]:
        return self.values.get('command')

    def has(self, key: str) -> bool:
        return key in self.values

    def get_str(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.values.get(key, default)

    def get_float(self, key: str, default: Optional[float] = None) -> Optional[float]:
        if key not in self.values:
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise ValidationError(f"{key} must be a number, got {self.values[key]!r}")

    def get_int(self, key: str, default: Optional[int] = None) -> Optional[int]:
        if key not in self.values:
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ValidationError(f"{key} must be an integer, got {self.values[key]!r}")

    def get_float_list(self, key: str, default: Optional[List[float]] = None) -> Optional[List[float]]:
        """Comma separated floats, or 'start:stop:count' for an inclusive grid"""
        if key not in self.values:
            return default
        text = self.values[key]
        try:
            if ':' in text:
                start, stop, count = text.split(':')
                count = int(count)
                if count < 2:
                    return [float(start)]
                step = (float(stop) - float(start)) / (count - 1)
                return [float(start) + k * step for k in range(count)]
            return [float(item) for item in text.split(',') if item.strip()]
        except ValueError:
            raise ValidationError(f"{key} must be a list of numbers, got {text!r}")

    def get_int_list(self, key: str, default: Optional[List[int]] = None) -> Optional[List[int]]:
        if key not in self.values:
            return default
        try:
            return [int(item) for item in self.values[key].split(',') if item.strip()]
        except ValueError:
            raise ValidationError(f"{key} must be a list of integers, got {self.values[key]!r}")

    def get_points(self, key: str) -> List[Tuple[float, ...]]:
        """Semicolon separated tuples: '0.5,0.4; 0.6,0.45'"""
        if key not in self.values:
            return []
        points = []
        for chunk in self.values[key].split(';'):
            if not chunk.strip():
                continue
            try:
                points.append(tuple(float(item) for item in chunk.split(',')))
            except ValueError:
                raise ValidationError(f"{key} has a malformed point {chunk!r}")
        return points

    def require(self, *keys: str):
        missing = [key for key in keys if key not in self.values]
        if missing:
            raise ValidationError(f"Missing configuration keys: {', '.join(missing)}")

    def echo(self) -> Dict[str, str]:
        return dict(sorted(self.values.items()))

    def config_hash(self) -> str:
        canonical = json.dumps(self.echo(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse the flat 'dotted.key = value' format"""
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if '=' not in line:
            raise ValidationError(f"Line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split('=', 1)
        key = key.strip()
        if not key:
            raise ValidationError(f"Line {number}: empty key")
        values[key] = value.strip()
    return values


def load_experiment_config(path: Optional[str] = None,
                           overrides: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Load an experiment configuration file and apply overrides

    Args:
        path: Config file path (optional)
        overrides: Values from command-line flags, applied last

    Returns:
        ExperimentConfig with string values
    """
    values: Dict[str, str] = {}
    if path:
        if not os.path.exists(path):
            raise ValidationError(f"Config file not found: {path}")
        with open(path, 'r', encoding='utf-8') as handle:
            values.update(parse_config_text(handle.read()))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = str(value)
    command = values.get('command')
    if command is not None and command not in KNOWN_COMMANDS:
        raise ValidationError(f"Unknown command {command!r}")
    return ExperimentConfig(values=values, source=path)
