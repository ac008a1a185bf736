"""
LPP Conditional Package
"""

__version__ = "1.0.0"
__author__ = "LPP Conditional Team"
__description__ = "Finite-size formulas, limit laws and Monte Carlo for exponential LPP conditioned on an upper large deviation"

from .config import Config, ExperimentConfig, load_experiment_config
from .scaling import ModelParams, RegionQuery, make_params, rate_function, lln_surface, classify_region
from .lattice import sample_field, lpp_at, extract_geodesic, geodesic_projection, conditional_mc
from .contours import ObservationPlan, IndexList, eval_I, list_rewrite
from .finite import eval_Q, conditional_probability, density_and_tail, verify_identity
from .limits import BridgeSpec, DiagSpec, bridge_crossing, diag_limit, offdiag_two_point_limit

__all__ = [
    'Config',
    'ExperimentConfig',
    'load_experiment_config',
    'ModelParams',
    'RegionQuery',
    'make_params',
    'rate_function',
    'lln_surface',
    'classify_region',
    'sample_field',
    'lpp_at',
    'extract_geodesic',
    'geodesic_projection',
    'conditional_mc',
    'ObservationPlan',
    'IndexList',
    'eval_I',
    'list_rewrite',
    'eval_Q',
    'conditional_probability',
    'density_and_tail',
    'verify_identity',
    'BridgeSpec',
    'DiagSpec',
    'bridge_crossing',
    'diag_limit',
    'offdiag_two_point_limit',
]
