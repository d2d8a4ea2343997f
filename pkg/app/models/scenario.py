"""
Scenario configuration models
Pydantic models describing the network, the access categories, the simulator and the platoon
"""

import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# 802.11bd defaults at 10 MHz
DEFAULT_SLOT_TIME = 13e-6
DEFAULT_SIFS = 32e-6


class PhyProfile(BaseModel):
    """Physical-layer constants; rates in bits/s, times in seconds"""

    model_config = ConfigDict(frozen=True)

    basic_rate: float = Field(default=1e6, gt=0, description="Basic rate R_b")
    data_rate: float = Field(default=27e6, gt=0, description="Data rate R_d")
    phy_header: float = Field(default=48.0, ge=0, description="PHY header in bits")
    mac_header: float = Field(default=0.0, ge=0, description="MAC header in bits")
    slot_time: float = Field(default=DEFAULT_SLOT_TIME, gt=0, description="Slot time sigma")
    sifs: float = Field(default=DEFAULT_SIFS, gt=0, description="Short inter-frame space")
    propagation_delay: float = Field(default=0.0, ge=0, description="Propagation delay delta")
    packet_payload: float = Field(default=4000.0, gt=0, description="Packet size P in bits")


class ArrivalModel(BaseModel):
    """Packet arrival process of one access category"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["poisson", "periodic", "saturated"] = "poisson"
    rate: float = Field(default=0.0, ge=0, description="Arrival rate in packets/s")
    interval: Optional[float] = Field(default=None, gt=0,
                                      description="Observation interval epsilon in seconds; "
                                                  "one slot of the PHY if unset")

    def effective_interval(self, slot_time: float = DEFAULT_SLOT_TIME) -> float:
        return self.interval if self.interval is not None else slot_time

    def check_probability(self, slot_time: float = DEFAULT_SLOT_TIME):
        load = self.rate * self.effective_interval(slot_time)
        if self.kind == "periodic" and load > 1.0:
            raise ValueError(f"periodic arrival probability rate*interval={load:.4g} exceeds 1")

    @model_validator(mode="after")
    def _check_periodic_probability(self):
        if self.interval is not None:
            self.check_probability()
        return self


class AccessCategoryConfig(BaseModel):
    """Protocol constants of one EDCA access category"""

    model_config = ConfigDict(frozen=True)

    index: Literal[0, 1]
    aifsn: int = Field(gt=0)
    cw_min: int = Field(gt=0)
    cw_max: int = Field(gt=0)
    retry_limit: int = Field(default=0, ge=0)
    arrival: ArrivalModel = Field(default_factory=ArrivalModel)

    @model_validator(mode="after")
    def _check_window_bounds(self):
        if self.cw_max < self.cw_min:
            raise ValueError(f"cw_max={self.cw_max} is smaller than cw_min={self.cw_min}")
        ratio, remainder = divmod(self.cw_max + 1, self.cw_min + 1)
        if remainder or ratio & (ratio - 1):
            raise ValueError(
                f"(cw_max+1)/(cw_min+1) must be a power of two, got {self.cw_max + 1}/{self.cw_min + 1}"
            )
        return self

    def aifs_time(self, phy: PhyProfile) -> float:
        """AIFS duration: SIFS plus AIFSN slots"""
        return phy.sifs + self.aifsn * phy.slot_time


class DetectionModel(BaseModel):
    """Receiver preamble-detection and decoding probabilities"""

    model_config = ConfigDict(frozen=True)

    p_preamble: float = Field(default=0.9, ge=0.0, le=1.0)
    p_decode: float = Field(default=0.8, ge=0.0, le=1.0)


def default_access_categories() -> Tuple[AccessCategoryConfig, AccessCategoryConfig]:
    """Default AC0 and AC1 protocol constants with the default traffic mix"""
    return (
        AccessCategoryConfig(index=0, aifsn=2, cw_min=15, cw_max=15, retry_limit=0,
                             arrival=ArrivalModel(kind="poisson", rate=50.0)),
        AccessCategoryConfig(index=1, aifsn=3, cw_min=15, cw_max=31, retry_limit=2,
                             arrival=ArrivalModel(kind="periodic", rate=30.0)),
    )


class NetworkScenario(BaseModel):
    """Everything the analytical model needs for one operating point"""

    model_config = ConfigDict(frozen=True)

    n_stations: int = Field(default=100, ge=1)
    phy: PhyProfile = Field(default_factory=PhyProfile)
    ac: Tuple[AccessCategoryConfig, AccessCategoryConfig] = Field(
        default_factory=default_access_categories)
    detection: DetectionModel = Field(default_factory=DetectionModel)
    grid_resolution: float = Field(default=1e-6, gt=0,
                                   description="PGF time quantization in seconds")

    @model_validator(mode="after")
    def _check_access_categories(self):
        if self.ac[0].index != 0 or self.ac[1].index != 1:
            raise ValueError("access categories must be listed as AC0 then AC1")
        if self.ac[0].aifsn >= self.ac[1].aifsn:
            raise ValueError(
                f"AC0 aifsn ({self.ac[0].aifsn}) must be strictly smaller than AC1 aifsn ({self.ac[1].aifsn})"
            )
        for ac in self.ac:
            ac.arrival.check_probability(self.phy.slot_time)
        return self

    def arrival_interval(self, ac_index: int) -> float:
        """Observation interval of one access category; defaults to the PHY slot time"""
        return self.ac[ac_index].arrival.effective_interval(self.phy.slot_time)

    def legacy(self) -> "NetworkScenario":
        """Same scenario with single-copy (802.11p) transmissions"""
        return self.model_copy(update={"detection": DetectionModel(p_preamble=1.0, p_decode=1.0)})

    def with_updates(self, n_stations: Optional[int] = None, phy: Optional[dict] = None,
                     rates: Optional[Tuple[Optional[float], Optional[float]]] = None) -> "NetworkScenario":
        """Validated copy with a different station count, PHY fields or arrival rates"""
        data = self.model_dump()
        if n_stations is not None:
            data["n_stations"] = n_stations
        if phy:
            data["phy"].update(phy)
        if rates:
            for index, rate in enumerate(rates):
                if rate is not None:
                    data["ac"][index]["arrival"]["rate"] = rate
        return NetworkScenario.model_validate(data)


class SolverOptions(BaseModel):
    """Controls of the damped fixed-point iteration"""

    model_config = ConfigDict(frozen=True)

    tolerance: float = Field(default=1e-5, gt=0)
    max_iterations: int = Field(default=10_000, gt=0)
    damping: float = Field(default=0.5, gt=0, le=1.0)
    initial_rho: Tuple[float, float] = (0.5, 0.5)
    inner_tolerance: float = Field(default=1e-13, gt=0)
    inner_max_iterations: int = Field(default=100_000, gt=0)
    bound_slack: float = Field(default=1e-9, ge=0)


class SimConfig(BaseModel):
    """Discrete-event simulation run configuration"""

    model_config = ConfigDict(frozen=True)

    scenario: NetworkScenario = Field(default_factory=NetworkScenario)
    sim_duration: float = Field(default=10.0, gt=0, description="Simulated seconds per run")
    warmup: Optional[float] = Field(default=None, ge=0,
                                    description="Discarded start-up period; 10% of the duration if unset")
    rng_seed: int = Field(default=1, ge=0, lt=2 ** 64)
    runs: int = Field(default=1, ge=1)
    arrival_clock: Literal["slot", "time"] = Field(
        default="slot",
        description="'slot': one Bernoulli arrival draw per virtual slot with the model's "
                    "arrival probability; 'time': arrivals in seconds at the configured rate")

    @model_validator(mode="after")
    def _check_warmup(self):
        if self.warmup is not None and self.warmup >= self.sim_duration:
            raise ValueError(f"warmup={self.warmup} must be shorter than sim_duration={self.sim_duration}")
        return self

    @property
    def effective_warmup(self) -> float:
        return 0.1 * self.sim_duration if self.warmup is None else self.warmup


class FvdParams(BaseModel):
    """Full Velocity Difference car-following parameters (l = 0 gives MOV)"""

    model_config = ConfigDict(frozen=True)

    a: float = Field(default=0.6, gt=0, description="Headway sensitivity in 1/s")
    l: float = Field(default=0.5, ge=0, description="Velocity-difference gain in 1/s")
    v0: float = Field(default=15.0, gt=0, description="BOVF speed scale V0 in m/s")
    y_m: float = Field(default=5.0, description="BOVF inflection headway in m")
    y_tilde: float = Field(default=2.0, gt=0, description="BOVF headway scale in m")
    n_vehicles: int = Field(default=10, ge=2)
    tau: float = Field(default=0.0, ge=0, description="Feedback delay in seconds")


class GapAcceptanceModel(BaseModel):
    """Logistic gap-acceptance model and the mapping to the AC0 packet rate"""

    model_config = ConfigDict(frozen=True)

    alpha: float = -1.933
    gamma: float = 0.652
    eta: Optional[float] = Field(default=None, gt=0,
                                 description="Rate scale; 100 for linear and 30 for logarithmic if unset")
    mapping: Literal["linear", "logarithmic"] = "linear"
    strict_printed: bool = False

    @property
    def effective_eta(self) -> float:
        if self.eta is not None:
            return self.eta
        return 100.0 if self.mapping == "linear" else 30.0

    @field_validator("mapping", mode="before")
    @classmethod
    def _normalize_mapping(cls, value):
        if value == "log":
            return "logarithmic"
        return value


class PlatoonConfig(BaseModel):
    """Platoon application block of the configuration document"""

    model_config = ConfigDict(frozen=True)

    fvd: FvdParams = Field(default_factory=FvdParams)
    gap: GapAcceptanceModel = Field(default_factory=GapAcceptanceModel)
    comm_range: float = Field(default=300.0, gt=0, description="Contention range in m")
    kappa_mode: Literal["deterministic", "sampled"] = "deterministic"
    lambda1: float = Field(default=30.0, ge=0, description="AC1 periodic rate in packets/s")

    @field_validator("comm_range")
    @classmethod
    def _finite_range(cls, value):
        if not math.isfinite(value):
            raise ValueError("comm_range must be finite")
        return value
