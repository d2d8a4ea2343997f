"""
Service-Time Distribution Engine
Builds the MAC service-time distributions of AC0 and AC1 as explicit discrete-time
distributions (the concrete form of their generating functions), extracts delay moments
and the PMF, and evaluates the shifted-exponential reliability curve.
"""

import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import signal

from app.core.edca_model import cw_schedule, z_distribution
from app.core.errors import DomainError, NumericError
from app.models.results import DelayMoments, FixedPointSolution, TransmissionProfile, ZDistribution
from app.models.scenario import NetworkScenario, PhyProfile

logger = logging.getLogger(__name__)

# Trailing atoms whose cumulative mass is below this are dropped after a convolution
TAIL_MASS = 1e-12
# Operands with at most this many atoms are convolved by shifted adds
SPARSE_ATOMS = 64
# Grid coarsens once a service-time support would need more bins than this
MAX_GRID_BINS = 2 ** 22
# Tolerance for a time to count as lying on the grid
GRID_TOLERANCE = 1e-6


class DiscreteTimeDistribution:
    """Probability masses on the grid 0, r, 2r, ... with resolution r seconds"""

    def __init__(self, masses: np.ndarray, resolution: float, dropped_mass: float = 0.0):
        masses = np.asarray(masses, dtype=float)
        if masses.ndim != 1 or masses.size == 0:
            raise DomainError("a distribution needs a non-empty one-dimensional mass vector")
        if resolution <= 0:
            raise DomainError(f"grid resolution must be positive, got {resolution}")
        if np.any(masses < 0):
            raise DomainError("probability masses must be non-negative")
        self.masses = masses
        self.resolution = resolution
        self.dropped_mass = dropped_mass

    @classmethod
    def point_mass(cls, time: float, resolution: float) -> "DiscreteTimeDistribution":
        return cls.from_atoms([time], [1.0], resolution)

    @classmethod
    def from_atoms(cls, times: Sequence[float], probs: Sequence[float],
                   resolution: float) -> "DiscreteTimeDistribution":
        """
        Build a distribution from (time, probability) atoms

        Times are rounded to the nearest grid point; atoms sharing a grid point add up.
        """
        if len(times) != len(probs):
            raise DomainError("times and probabilities differ in length")
        if any(t < 0 for t in times):
            raise DomainError("atom times must be non-negative")
        indices = np.rint(np.asarray(times, dtype=float) / resolution).astype(np.int64)
        masses = np.zeros(int(indices.max()) + 1)
        np.add.at(masses, indices, np.asarray(probs, dtype=float))
        return cls(masses, resolution)

    @classmethod
    def mixture(cls, components: Iterable[Tuple[float, "DiscreteTimeDistribution"]]
                ) -> "DiscreteTimeDistribution":
        """Weighted sum of distributions sharing one grid"""
        components = [(w, d) for w, d in components]
        if not components:
            raise DomainError("mixture needs at least one component")
        resolution = components[0][1].resolution
        for _, dist in components:
            _check_same_grid(resolution, dist.resolution)
        masses = np.zeros(max(d.masses.size for _, d in components))
        dropped = 0.0
        for weight, dist in components:
            if weight < 0:
                raise DomainError(f"mixture weight {weight} is negative")
            masses[:dist.masses.size] += weight * dist.masses
            dropped += weight * dist.dropped_mass
        return cls(masses, resolution, dropped)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.masses.size) * self.resolution

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.masses))

    def mean(self) -> float:
        return float(np.dot(np.arange(self.masses.size), self.masses)) * self.resolution

    def convolve(self, other: "DiscreteTimeDistribution") -> "DiscreteTimeDistribution":
        """Distribution of the sum of two independent service-time components"""
        _check_same_grid(self.resolution, other.resolution)
        a, b = self.masses, other.masses
        if np.count_nonzero(a) < np.count_nonzero(b):
            a, b = b, a
        if np.count_nonzero(b) <= SPARSE_ATOMS:
            out = np.zeros(a.size + b.size - 1)
            for shift in np.flatnonzero(b):
                out[shift:shift + a.size] += b[shift] * a
        else:
            out = signal.convolve(a, b, method="auto")
            np.clip(out, 0.0, None, out=out)
        dropped = self.dropped_mass + other.dropped_mass
        return DiscreteTimeDistribution(out, self.resolution, dropped).trimmed()

    def trimmed(self, tail_mass: float = TAIL_MASS) -> "DiscreteTimeDistribution":
        """Drop the trailing atoms whose cumulative mass stays below `tail_mass`"""
        tail = np.cumsum(self.masses[::-1])
        cut = int(np.searchsorted(tail, tail_mass))
        if cut == 0 or cut >= self.masses.size:
            return self
        dropped = float(tail[cut - 1])
        return DiscreteTimeDistribution(self.masses[:-cut], self.resolution,
                                        self.dropped_mass + dropped)

    def mass_at(self, time: float) -> float:
        index = time / self.resolution
        nearest = round(index)
        if abs(index - nearest) > GRID_TOLERANCE or nearest < 0:
            raise DomainError(f"time {time} is not on the {self.resolution} s grid")
        if nearest >= self.masses.size:
            return 0.0
        return float(self.masses[nearest])

    def to_frame(self) -> pd.DataFrame:
        """Non-zero atoms as a (time_us, probability) table"""
        nonzero = np.flatnonzero(self.masses)
        return pd.DataFrame({
            "time_us": nonzero * self.resolution * 1e6,
            "probability": self.masses[nonzero],
        })

    def __repr__(self) -> str:
        return (f"DiscreteTimeDistribution(atoms={self.support_size}, resolution={self.resolution}, "
                f"mass={self.total_mass:.12f})")


def _check_same_grid(first: float, second: float):
    if not math.isclose(first, second, rel_tol=1e-12):
        raise DomainError(f"distributions live on different grids ({first} vs {second})")


def mean_packet_size(z: ZDistribution, payload_bits: float) -> float:
    """E[P] = sum_k k p(Z=k) P"""
    return payload_bits * z.mean


def transmission_time(phy: PhyProfile, mean_packet: float) -> float:
    """
    Average airtime of one copy

    Args:
        phy: Physical-layer constants
        mean_packet: Mean packet size in bits

    Returns:
        float: PHY_H / R_b + (MAC_H + E[P]) / R_d + delta, in seconds
    """
    return (phy.phy_header / phy.basic_rate
            + (phy.mac_header + mean_packet) / phy.data_rate
            + phy.propagation_delay)


def transmission_profile(scenario: NetworkScenario) -> TransmissionProfile:
    z = z_distribution(scenario.detection)
    mean_packet = mean_packet_size(z, scenario.phy.packet_payload)
    return TransmissionProfile(
        t_tr=transmission_time(scenario.phy, mean_packet),
        mean_packet_bits=mean_packet,
        sifs=scenario.phy.sifs,
    )


def burst_durations(t_tr: float, sifs: float) -> List[float]:
    """Channel time of a burst of 1..4 copies"""
    return [k * t_tr + (k - 1) * sifs for k in range(1, 5)]


def pgf_transmission(z: ZDistribution, t_tr: float, sifs: float,
                     resolution: float = 1e-6) -> DiscreteTimeDistribution:
    """Transmission-time distribution: a burst of k copies with probability p(Z=k)"""
    return DiscreteTimeDistribution.from_atoms(burst_durations(t_tr, sifs), z.probs, resolution)


def pgf_backoff_step(p_b: float, z: ZDistribution, slot: float, t_tr: float, sifs: float,
                     aifs: float, resolution: float = 1e-6) -> DiscreteTimeDistribution:
    """
    Time taken by one backoff decrement

    An idle slot costs sigma; a busy slot costs the overheard burst plus the AIFS
    that has to elapse before the countdown resumes.
    """
    if not 0.0 <= p_b <= 1.0:
        raise DomainError(f"busy probability {p_b} is not a probability")
    times = [slot] + [burst + aifs for burst in burst_durations(t_tr, sifs)]
    probs = [1.0 - p_b] + [p_b * p for p in z.probs]
    return DiscreteTimeDistribution.from_atoms(times, probs, resolution)


def uniform_backoffs(step: DiscreteTimeDistribution,
                     windows: Iterable[int]) -> Dict[int, DiscreteTimeDistribution]:
    """
    Backoff-duration distributions (1/W) sum_{k<W} step^k for several windows at once

    Powers of the step distribution are shared between windows.
    """
    wanted = sorted(set(windows))
    if not wanted or wanted[0] < 1:
        raise DomainError(f"contention windows must be positive, got {wanted}")
    result: Dict[int, DiscreteTimeDistribution] = {}
    power = DiscreteTimeDistribution.point_mass(0.0, step.resolution)
    partial = np.zeros(1)
    dropped = 0.0
    for k in range(wanted[-1]):
        if partial.size < power.masses.size:
            partial = np.pad(partial, (0, power.masses.size - partial.size))
        partial[:power.masses.size] += power.masses
        dropped += power.dropped_mass
        if k + 1 in wanted:
            window = k + 1
            result[window] = DiscreteTimeDistribution(partial / window, step.resolution,
                                                      dropped / window)
        if k + 1 < wanted[-1]:
            power = power.convolve(step)
    return result


def uniform_backoff(step: DiscreteTimeDistribution, window: int) -> DiscreteTimeDistribution:
    return uniform_backoffs(step, [window])[window]


def service_resolution(scenario: NetworkScenario) -> float:
    """
    Grid resolution for the service-time distributions of a scenario

    The configured resolution is used unless the longest possible AC1 service time would
    need more than MAX_GRID_BINS bins; then the smallest integer multiple that fits is used.
    """
    profile = transmission_profile(scenario)
    longest_burst = burst_durations(profile.t_tr, profile.sifs)[-1]
    longest_step = max(scenario.phy.slot_time,
                       longest_burst + max(ac.aifs_time(scenario.phy) for ac in scenario.ac))
    longest = 0.0
    for ac in scenario.ac:
        backoff = sum(cw_schedule(ac, j) - 1 for j in range(ac.retry_limit + 1)) * longest_step
        longest = max(longest, backoff + longest_burst)
    bins = longest / scenario.grid_resolution
    if bins <= MAX_GRID_BINS:
        return scenario.grid_resolution
    factor = math.ceil(bins / MAX_GRID_BINS)
    logger.info(f"Coarsening service-time grid by {factor}x ({bins:.3g} bins at base resolution)")
    return factor * scenario.grid_resolution


def _stage_failure_probability(sol: FixedPointSolution, ac_index: int) -> float:
    return sol.p_coll_ac1 if ac_index == 1 else 0.0


def service_mean(scenario: NetworkScenario, sol: FixedPointSolution, ac_index: int) -> float:
    """
    Exact mean service time of an access category from component means

    Uses the linearity of P'(1) over convolutions and mixtures, so no distribution is built.
    """
    profile = transmission_profile(scenario)
    z = sol.z
    bursts = burst_durations(profile.t_tr, profile.sifs)
    mean_tr = sum(p * b for p, b in zip(z.probs, bursts))
    ac = scenario.ac[ac_index]
    p_b = sol.p_busy[ac_index]
    mean_step = (1.0 - p_b) * scenario.phy.slot_time + p_b * (mean_tr + ac.aifs_time(scenario.phy))
    stage_means = [(cw_schedule(ac, j) - 1) / 2.0 * mean_step for j in range(ac.retry_limit + 1)]
    if ac_index == 0:
        return mean_tr + stage_means[0]
    p = _stage_failure_probability(sol, ac_index)
    total = 0.0
    elapsed = 0.0
    for n, stage_mean in enumerate(stage_means):
        elapsed += stage_mean
        total += (1.0 - p) * p ** n * (mean_tr + elapsed)
    return total + p ** (ac.retry_limit + 1) * elapsed


def _components(scenario: NetworkScenario, sol: FixedPointSolution, ac_index: int,
                resolution: float) -> Tuple[DiscreteTimeDistribution, DiscreteTimeDistribution]:
    profile = transmission_profile(scenario)
    tr = pgf_transmission(sol.z, profile.t_tr, profile.sifs, resolution)
    step = pgf_backoff_step(sol.p_busy[ac_index], sol.z, scenario.phy.slot_time, profile.t_tr,
                            profile.sifs, scenario.ac[ac_index].aifs_time(scenario.phy), resolution)
    return tr, step


def pgf_service_ac0(scenario: NetworkScenario, sol: FixedPointSolution,
                    resolution: Optional[float] = None) -> DiscreteTimeDistribution:
    """AC0 service time: one uniform backoff over W_00 followed by the transmission burst"""
    resolution = resolution or service_resolution(scenario)
    tr, step = _components(scenario, sol, 0, resolution)
    backoff = uniform_backoff(step, cw_schedule(scenario.ac[0], 0))
    return tr.convolve(backoff)


def pgf_service_ac1(scenario: NetworkScenario, sol: FixedPointSolution,
                    resolution: Optional[float] = None) -> DiscreteTimeDistribution:
    """
    AC1 service time with retries

    A packet passes backoff stages 0..n and succeeds after stage n with probability
    (1 - p_c1) p_c1^n; with probability p_c1^(L+1) every stage fails and the packet
    is dropped after the last backoff.
    """
    resolution = resolution or service_resolution(scenario)
    ac = scenario.ac[1]
    tr, step = _components(scenario, sol, 1, resolution)
    windows = [cw_schedule(ac, j) for j in range(ac.retry_limit + 1)]
    backoffs = uniform_backoffs(step, windows)
    p = _stage_failure_probability(sol, 1)

    elapsed = DiscreteTimeDistribution.point_mass(0.0, resolution)
    successes = []
    for n, window in enumerate(windows):
        elapsed = elapsed.convolve(backoffs[window])
        successes.append(((1.0 - p) * p ** n, elapsed))
    success = tr.convolve(DiscreteTimeDistribution.mixture(successes))
    return DiscreteTimeDistribution.mixture([(1.0, success), (p ** (ac.retry_limit + 1), elapsed)])


def service_distributions(scenario: NetworkScenario, sol: FixedPointSolution
                          ) -> Tuple[DiscreteTimeDistribution, DiscreteTimeDistribution]:
    resolution = service_resolution(scenario)
    return pgf_service_ac0(scenario, sol, resolution), pgf_service_ac1(scenario, sol, resolution)


def moments_from_pgf(dist: DiscreteTimeDistribution) -> DelayMoments:
    """
    Mean and standard deviation from the derivatives of the generating function at 1

    Args:
        dist: Normalized service-time distribution

    Returns:
        DelayMoments: mean P'(1) and stddev sqrt(P''(1) + P'(1) - P'(1)^2), in seconds
    """
    k = np.arange(dist.masses.size, dtype=float)
    first = float(np.dot(k, dist.masses))
    second = float(np.dot(k * (k - 1.0), dist.masses))
    variance = second + first - first ** 2
    scale = max(1.0, first ** 2)
    if variance < -1e-12 * scale:
        raise NumericError(f"negative variance {variance:.3e} (grid units) from service-time distribution")
    if first <= 0:
        raise NumericError("service-time distribution has no mass after time zero")
    variance = max(variance, 0.0)
    return DelayMoments(mean=first * dist.resolution, stddev=math.sqrt(variance) * dist.resolution)


def pmf_from_pgf(dist: DiscreteTimeDistribution, time: float) -> float:
    """Probability that the service time equals `time` (must lie on the grid)"""
    return dist.mass_at(time)


def delay_moments(scenario: NetworkScenario, sol: FixedPointSolution
                  ) -> Tuple[DelayMoments, DelayMoments]:
    dist0, dist1 = service_distributions(scenario, sol)
    return moments_from_pgf(dist0), moments_from_pgf(dist1)


def reliability(moments: DelayMoments, t_tr: float, tau: float) -> float:
    """
    Probability that the service time stays within the deadline `tau`

    Service time is modeled as a shifted exponential starting at t_tr with rate
    1 / stddev; a zero stddev degenerates to a step at t_tr.
    """
    if tau < t_tr:
        return 0.0
    if moments.stddev == 0:
        return 1.0
    return float(-math.expm1(-(tau - t_tr) / moments.stddev))


def reliability_curve(moments: DelayMoments, t_tr: float, taus: Sequence[float]) -> np.ndarray:
    taus = np.asarray(taus, dtype=float)
    if moments.stddev == 0:
        return (taus >= t_tr).astype(float)
    excess = np.maximum(taus - t_tr, 0.0)
    curve = -np.expm1(-excess / moments.stddev)
    return np.where(taus < t_tr, 0.0, curve)
