"""Simulation and verification toolkit for volatility-stabilized market models
with common noise: particle system, McKean-Vlasov limit, stochastic
Fokker-Planck equation and market-data statistics.
"""

from .errors import ConfigError, DataError, NumericalError, VsmError
from .grid import Grid1D, GridDensity
from .measure import EmpiricalMeasure, wasserstein1
from .noise import NoisePlan, common_path, make_noise_plan
from .params import ModelParams
from .particle import PathEnsemble, simulate_particles, simulate_replications

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EmpiricalMeasure",
    "Grid1D",
    "GridDensity",
    "ModelParams",
    "NoisePlan",
    "NumericalError",
    "PathEnsemble",
    "VsmError",
    "common_path",
    "make_noise_plan",
    "simulate_particles",
    "simulate_replications",
    "wasserstein1",
]
