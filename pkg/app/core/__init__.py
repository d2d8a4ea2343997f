"""
Core analytical model, simulator and platoon analysis
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    EDCAModelError,
    NumericError,
    SimulationError,
    SingularityError,
)
from .fixed_point import EDCAFixedPointSolver, solve_fixed_point
from .delay_pgf import DiscreteTimeDistribution, delay_moments, reliability
from .edca_simulator import EDCASimulator, run_simulation
from .platoon import critical_delay, integrate_platoon, stability_analysis

__all__ = [
    'EDCAModelError',
    'DomainError',
    'SingularityError',
    'ConvergenceError',
    'DivergenceError',
    'NumericError',
    'ConfigError',
    'SimulationError',
    'EDCAFixedPointSolver',
    'solve_fixed_point',
    'DiscreteTimeDistribution',
    'delay_moments',
    'reliability',
    'EDCASimulator',
    'run_simulation',
    'critical_delay',
    'integrate_platoon',
    'stability_analysis',
]
