"""
Result value types produced by the analytical model, the simulator and the platoon analysis
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Tuple

import numpy as np


@dataclass(frozen=True)
class ZDistribution:
    """Distribution of the number of copies sent, p(Z=1..4)"""

    probs: Tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.probs) != 4:
            raise ValueError("ZDistribution needs exactly four masses")
        if any(p < 0.0 or p > 1.0 for p in self.probs):
            raise ValueError(f"ZDistribution masses must lie in [0, 1]: {self.probs}")
        if abs(math.fsum(self.probs) - 1.0) > 1e-12:
            raise ValueError(f"ZDistribution masses must sum to 1: {math.fsum(self.probs)}")

    def __getitem__(self, copies: int) -> float:
        """p(Z = copies) for copies in 1..4"""
        return self.probs[copies - 1]

    @property
    def mean(self) -> float:
        return sum(k * p for k, p in enumerate(self.probs, start=1))


@dataclass(frozen=True)
class FixedPointSolution:
    """Converged transmission, busy and collision probabilities of a scenario"""

    omega: Tuple[float, float]
    beta: Tuple[float, float]
    p_busy: Tuple[float, float]
    p_ext_single: float
    p_ext: float
    p_internal: Tuple[float, float]
    p_coll_ac1: float
    rho: Tuple[float, float]
    p_arrival: Tuple[float, float]
    z: ZDistribution
    iterations: int = 0
    residual: float = float("nan")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["z"] = list(self.z.probs)
        return data


@dataclass(frozen=True)
class TransmissionProfile:
    """Per-copy airtime, mean packet size and repetition gap"""

    t_tr: float
    mean_packet_bits: float
    sifs: float

    def __post_init__(self):
        if not self.t_tr > 0:
            raise ValueError(f"transmission time must be positive, got {self.t_tr}")


@dataclass(frozen=True)
class DelayMoments:
    """Mean and standard deviation of the MAC access delay in seconds"""

    mean: float
    stddev: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError(f"mean delay must be positive, got {self.mean}")
        if self.stddev < 0:
            raise ValueError(f"standard deviation must be non-negative, got {self.stddev}")


@dataclass(frozen=True)
class StabilityResult:
    """Critical feedback delay and the derived communication budget for a headway"""

    y_star: float
    v_prime: float
    d_tilde: float
    sigma_root: float
    sigma_other: float
    log_argument: float
    tau_c: float
    tau_cr: float = float("nan")
    kappa: float = float("nan")
    p_accept: float = float("nan")
    lambda0: float = float("nan")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class ACStats:
    """Delay and collision counters of one access category"""

    n_samples: int = 0
    mean: float = float("nan")
    stddev: float = float("nan")
    internal_collisions: int = 0
    external_collisions: int = 0
    drops: int = 0


@dataclass(frozen=True)
class SimStats:
    """Statistics of one simulation run, or of several runs pooled"""

    per_ac: Tuple[ACStats, ACStats]
    z_counts: Tuple[int, int, int, int] = (0, 0, 0, 0)
    successes: int = 0
    bursts: int = 0
    seed: int = -1
    per_run: Tuple["SimStats", ...] = field(default=())


@dataclass(frozen=True)
class PlatoonTrajectory:
    """Headways and relative velocities of every follower over time"""

    times: np.ndarray
    headways: np.ndarray
    rel_velocities: np.ndarray
    y_star: float

    def headway_error(self, vehicle: int = 0) -> np.ndarray:
        return self.headways[:, vehicle] - self.y_star
