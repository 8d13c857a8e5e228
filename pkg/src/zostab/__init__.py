"""Zeroth-order optimizer stability toolkit."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .covariance import assemble_operator, spectral_radius
from .estimator_api import ZOMLPRegressor
from .estimators import EstimatorConfig, estimate_gradient
from .harness import ResultTable, run_experiment
from .objectives import MlpModel, QuadraticModel
from .optimizers import make_config, run_trajectory, step
from .rng import RngStream
from .stability import StabilityQuery, classify_stepsize, solve_ms_critical_stepsize

__version__ = "0.1.0"
