"""
Configuration and result models
"""

from .scenario import (
    AccessCategoryConfig,
    ArrivalModel,
    DetectionModel,
    FvdParams,
    GapAcceptanceModel,
    NetworkScenario,
    PhyProfile,
    PlatoonConfig,
    SimConfig,
    SolverOptions,
)
from .results import (
    ACStats,
    DelayMoments,
    FixedPointSolution,
    PlatoonTrajectory,
    SimStats,
    StabilityResult,
    TransmissionProfile,
    ZDistribution,
)
