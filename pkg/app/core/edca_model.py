"""
EDCA Markov Chain Model
Backoff-chain equations of two-category EDCA with blind repetitions: contention windows,
repetition counts, collision, busy and arrival probabilities, and the transmission
probabilities obtained from the chain's normalization.
"""

import logging
import math
from typing import Sequence, Tuple

from app.core.errors import DomainError, SingularityError
from app.models.results import ZDistribution
from app.models.scenario import (
    DEFAULT_SLOT_TIME,
    AccessCategoryConfig,
    ArrivalModel,
    DetectionModel,
)

logger = logging.getLogger(__name__)

# |1 - 2 p_c1| below this switches omega_1 to the term-by-term geometric sum
GEOMETRIC_SINGULARITY_BAND = 1e-6


def doubling_limit(ac: AccessCategoryConfig) -> int:
    """
    Number of times the contention window may double

    Args:
        ac: Access category constants

    Returns:
        int: M = log2((CW_max + 1) / (CW_min + 1))
    """
    return ((ac.cw_max + 1) // (ac.cw_min + 1)).bit_length() - 1


def cw_schedule(ac: AccessCategoryConfig, stage: int) -> int:
    """
    Contention window of a backoff stage

    Args:
        ac: Access category constants
        stage: Backoff stage j, 0 <= j <= retry limit

    Returns:
        int: W_{i,j}, with W_{i,0} = CW_min + 1
    """
    if not 0 <= stage <= ac.retry_limit:
        raise DomainError(f"backoff stage {stage} outside [0, {ac.retry_limit}] for AC{ac.index}")
    base = ac.cw_min + 1
    return base << min(stage, doubling_limit(ac))


def z_distribution(detection: DetectionModel) -> ZDistribution:
    """
    Distribution of the number of copies sent per channel access

    Every copy is decoded with probability p_d * p_s; copies stop after the first
    decoded one and the fourth copy closes the burst regardless.
    """
    p_d = detection.p_preamble
    p_s = detection.p_decode
    z1 = p_d * p_s
    z2 = p_d * (1 - p_s) * p_s * p_d + (1 - p_d) * p_s * p_d
    z3 = (p_d * (1 - p_s) * p_d * (1 - p_s) * p_s * p_d
          + p_d * (1 - p_s) * (1 - p_d) * p_d * p_s
          + (1 - p_d) * p_d * (1 - p_s) * p_s * p_d
          + (1 - p_d) * (1 - p_d) * p_d * p_s)
    z4 = 1.0 - (z1 + z2 + z3)
    # z4 can come out as -1e-17 when the first three masses already sum to one
    return ZDistribution(probs=(z1, z2, z3, min(1.0, max(0.0, z4))))


def collision_given_copies(p_ex: float, copies: int) -> float:
    """Probability that at least one of `copies` copies meets an external collision"""
    expansions = {
        1: p_ex,
        2: 2 * p_ex - p_ex ** 2,
        3: 3 * p_ex - 3 * p_ex ** 2 + p_ex ** 3,
        4: 4 * p_ex - 6 * p_ex ** 2 + 4 * p_ex ** 3 - p_ex ** 4,
    }
    return expansions[copies]


def external_collision(beta_sum: float, n_stations: int, z: ZDistribution) -> Tuple[float, float]:
    """
    External collision probabilities

    Args:
        beta_sum: beta_0 + beta_1, probability that another station transmits in a slot
        n_stations: Number of contending stations N_cs
        z: Repetition-count distribution

    Returns:
        Tuple[float, float]: (p_ex, p_o) for a single copy and for the whole burst
    """
    if not 0.0 <= beta_sum <= 1.0:
        raise DomainError(f"beta_sum={beta_sum} is not a probability")
    if n_stations < 1:
        raise DomainError(f"n_stations={n_stations} must be at least 1")
    p_ex = 1.0 - (1.0 - beta_sum) ** (n_stations - 1)
    p_o = sum(z[k] * collision_given_copies(p_ex, k) for k in range(1, 5))
    return p_ex, p_o


def legacy_external_collision(betas: Sequence[float], n_stations: int) -> float:
    """Single-copy (802.11p) external collision probability 1 - (1 - sum beta)^(N_cs - 1)"""
    return 1.0 - (1.0 - math.fsum(betas)) ** (n_stations - 1)


def internal_collision(omega0: float) -> Tuple[float, float]:
    """
    Virtual collision probabilities inside one station

    AC0 always wins a same-slot contention, so only AC1 sees internal collisions,
    and it does so whenever AC0 of the same station transmits.
    """
    if not 0.0 <= omega0 <= 1.0:
        raise DomainError(f"omega0={omega0} is not a probability")
    return 0.0, omega0


def busy_probability(beta: Sequence[float], n_stations: int, ac_index: int,
                     omega0: float = 0.0) -> float:
    """
    Probability that an access category sees a busy slot

    Args:
        beta: External transmission probabilities (beta_0, beta_1)
        n_stations: Number of contending stations
        ac_index: 0 or 1
        omega0: Internal AC0 transmission probability, used for AC1 only

    Returns:
        float: p_b0 = 1 - (1 - beta_0 - beta_1)^(N-1); p_b1 additionally busy when
        the station's own AC0 transmits
    """
    idle_external = (1.0 - beta[0] - beta[1]) ** (n_stations - 1)
    if ac_index == 0:
        return 1.0 - idle_external
    if ac_index == 1:
        return 1.0 - idle_external * (1.0 - omega0)
    raise DomainError(f"unknown access category index {ac_index}")


def arrival_probability(model: ArrivalModel, slot_time: float = DEFAULT_SLOT_TIME) -> float:
    """
    Probability that at least one packet arrives within the observation interval

    Poisson arrivals give 1 - exp(-lambda * epsilon), periodic ones lambda * epsilon,
    a saturated queue always has a packet. Without an explicit interval epsilon is one slot.
    """
    if model.kind == "saturated":
        return 1.0
    load = model.rate * model.effective_interval(slot_time)
    if model.kind == "poisson":
        return -math.expm1(-load)
    if load > 1.0:
        raise DomainError(f"periodic arrival probability {load:.4g} exceeds 1")
    return load


def _post_queue_term(rho: float, p_arrival: float, label: str) -> float:
    if rho >= 1.0:
        return 0.0
    if p_arrival <= 0.0:
        raise SingularityError(label, f"Singular term in model equation: {label} = 0 with rho = {rho}")
    return (1.0 - rho) / p_arrival


def omega_ac0(w00: int, p_b0: float, rho0: float, p_a0: float) -> float:
    """
    Internal transmission probability of AC0

    Args:
        w00: Contention window W_{0,0}
        p_b0: Busy probability seen by AC0
        rho0: AC0 utilization
        p_a0: AC0 arrival probability per observation interval

    Returns:
        float: [(W00 + 1) / (2 (1 - p_b0)) + (1 - rho0) / p_a0]^-1
    """
    if p_b0 >= 1.0:
        raise SingularityError("1 - p_b0")
    backoff_term = (w00 + 1) / (2.0 * (1.0 - p_b0))
    return 1.0 / (backoff_term + _post_queue_term(rho0, p_a0, "p_a0"))


def _doubling_sum(p_c1: float, stages: int) -> float:
    """sum_{j=1..M} (2 p_c1)^j, i.e. 2 p (1 - (2p)^M) / (1 - 2p)"""
    ratio = 2.0 * p_c1
    if abs(1.0 - ratio) < GEOMETRIC_SINGULARITY_BAND:
        return math.fsum(ratio ** j for j in range(1, stages + 1))
    return ratio * (1.0 - ratio ** stages) / (1.0 - ratio)


def omega_ac1(w10: int, doublings: int, retry_limit: int, p_c1: float, p_b1: float,
              rho1: float, p_a1: float) -> float:
    """
    Internal transmission probability of AC1

    Args:
        w10: Contention window W_{1,0}
        doublings: M, the number of window doublings (capped at the retry limit)
        retry_limit: L
        p_c1: AC1 collision probability (internal or external)
        p_b1: Busy probability seen by AC1
        rho1: AC1 utilization
        p_a1: AC1 arrival probability per observation interval

    Returns:
        float: omega_1 from the normalization of the AC1 backoff chain
    """
    if p_c1 >= 1.0:
        raise SingularityError("1 - p_c1")
    if p_b1 >= 1.0:
        raise SingularityError("1 - p_b1")
    m = min(doublings, retry_limit)
    p = p_c1
    attempts = (1.0 - p ** (retry_limit + 1)) / (1.0 - p)
    idle = 2.0 * (1.0 - p_b1)
    retry_terms = (
        w10 * _doubling_sum(p, m) / idle
        - p * (1.0 - p ** m) / (1.0 - p)
        + ((2 ** m) * w10 - 1) * (1.0 - p ** (retry_limit - m)) * p ** (m + 1) / (1.0 - p)
    )
    denominator = attempts + (w10 - 1) / idle + retry_terms + _post_queue_term(rho1, p_a1, "p_a1")
    if denominator <= 0.0:
        raise SingularityError("omega_1 denominator")
    return attempts / denominator
