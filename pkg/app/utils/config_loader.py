"""
Configuration document loader
Parses the JSON scenario document (times in microseconds) into the domain models and
writes the effective configuration back out
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.models.scenario import (
    AccessCategoryConfig,
    ArrivalModel,
    DetectionModel,
    FvdParams,
    GapAcceptanceModel,
    NetworkScenario,
    PhyProfile,
    PlatoonConfig,
    SimConfig,
    default_access_categories,
)

logger = logging.getLogger(__name__)

CONFIG_DIR_ENV = "EDCA_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "scenario.json"

# document key -> (PhyProfile field, microseconds?)
PHY_KEYS = {
    "basic_rate_bps": ("basic_rate", False),
    "data_rate_bps": ("data_rate", False),
    "phy_header_bits": ("phy_header", False),
    "mac_header_bits": ("mac_header", False),
    "slot_time_us": ("slot_time", True),
    "sifs_us": ("sifs", True),
    "propagation_delay_us": ("propagation_delay", True),
    "packet_bits": ("packet_payload", False),
}
TOP_LEVEL_KEYS = set(PHY_KEYS) | {
    "n_stations", "p_preamble", "p_decode", "arrival_interval_us", "grid_resolution_us",
    "ac0", "ac1", "sim", "platoon",
}
AC_KEYS = {"aifsn", "cw_min", "cw_max", "retry_limit", "arrival_kind", "rate_pps"}
SIM_KEYS = {"duration_s": "sim_duration", "warmup_s": "warmup", "seed": "rng_seed", "runs": "runs",
            "arrival_clock": "arrival_clock"}
FVD_KEYS = {"a": "a", "l": "l", "v0": "v0", "y_m": "y_m", "y_tilde": "y_tilde",
            "n_vehicles": "n_vehicles", "tau_s": "tau"}
PLATOON_KEYS = set(FVD_KEYS) | {"comm_range_m", "kappa_mode", "lambda1_pps", "gap"}
GAP_KEYS = {"alpha", "gamma", "eta", "mapping", "strict_printed"}


@dataclass(frozen=True)
class LoadedConfig:
    """Everything one configuration document describes"""

    scenario: NetworkScenario = field(default_factory=NetworkScenario)
    sim: SimConfig = field(default_factory=SimConfig)
    platoon: PlatoonConfig = field(default_factory=PlatoonConfig)
    source: Optional[Path] = None


def _from_us(value: float) -> float:
    return value / 1e6


def _to_us(value: float) -> float:
    return round(value * 1e6, 9)


def _object_end(text: str, start: int) -> int:
    """Index just past the JSON object that opens at or after `start`"""
    open_at = text.find("{", start)
    if open_at < 0:
        return len(text)
    depth = 0
    in_string = escaped = False
    for index in range(open_at, len(text)):
        char = text[index]
        if in_string:
            if escaped:
                escaped = False
            elif char == "\\":
                escaped = True
            elif char == '"':
                in_string = False
        elif char == '"':
            in_string = True
        elif char == "{":
            depth += 1
        elif char == "}":
            depth -= 1
            if depth == 0:
                return index + 1
    return len(text)


def _line_of(text: str, path: str) -> Optional[int]:
    """
    Line of a dotted key path in the document text

    Each segment is looked up inside the object of the previous one; when a segment is
    missing the line of its enclosing key is returned.
    """
    start, end = 0, len(text)
    line = None
    segments = path.split(".")
    for depth, segment in enumerate(segments):
        match = re.compile(rf'"{re.escape(segment)}"\s*:').search(text, start, end)
        if not match:
            return line
        line = text.count("\n", 0, match.start()) + 1
        if depth < len(segments) - 1:
            start, end = match.end(), _object_end(text, match.end())
    return line


class ConfigParser:
    """Turns the configuration document into validated domain models"""

    def __init__(self, text: str, source: Optional[Path] = None):
        self.text = text
        self.source = source

    def _error(self, message: str, key: str) -> ConfigError:
        return ConfigError(message, key=key, line=_line_of(self.text, key))

    def _check_keys(self, block: Dict[str, Any], allowed, prefix: str = ""):
        if not isinstance(block, dict):
            raise self._error("expected an object", prefix.rstrip(".") or "<root>")
        for key in block:
            if key not in allowed:
                raise self._error("unknown configuration key", f"{prefix}{key}")

    def _number(self, block: Dict[str, Any], key: str) -> float:
        value = block[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self._error("expected a number", key)
        return value

    def _build(self, model, data: Dict[str, Any], key_names: Dict[str, str], prefix: str):
        try:
            return model(**data)
        except ValidationError as e:
            first = e.errors()[0]
            field_name = str(first["loc"][0]) if first["loc"] else ""
            key = key_names.get(field_name, field_name)
            raise self._error(first["msg"], f"{prefix}{key}" if key else prefix.rstrip(".")) from e

    def parse(self) -> LoadedConfig:
        try:
            document = json.loads(self.text) if self.text.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg} at column {e.colno}", line=e.lineno) from e
        self._check_keys(document, TOP_LEVEL_KEYS)

        scenario = self._scenario(document)
        sim = self._sim(document.get("sim", {}), scenario)
        platoon = self._platoon(document.get("platoon", {}))
        logger.info(f"Loaded configuration{f' from {self.source}' if self.source else ''}: "
                    f"N={scenario.n_stations}, R_d={scenario.phy.data_rate:g} bps")
        return LoadedConfig(scenario=scenario, sim=sim, platoon=platoon, source=self.source)

    def _scenario(self, document: Dict[str, Any]) -> NetworkScenario:
        phy_data = {}
        for key, (name, in_us) in PHY_KEYS.items():
            if key in document:
                value = document[key]
                phy_data[name] = _from_us(value) if in_us and isinstance(value, (int, float)) else value
        phy_names = {name: key for key, (name, _) in PHY_KEYS.items()}
        phy = self._build(PhyProfile, phy_data, phy_names, "")

        interval = None
        if "arrival_interval_us" in document:
            interval = _from_us(self._number(document, "arrival_interval_us"))

        defaults = default_access_categories()
        categories = []
        for index, default in enumerate(defaults):
            key = f"ac{index}"
            block = document.get(key, {})
            self._check_keys(block, AC_KEYS, f"{key}.")
            arrival = self._build(ArrivalModel, {
                "kind": block.get("arrival_kind", default.arrival.kind),
                "rate": block.get("rate_pps", default.arrival.rate),
                "interval": interval,
            }, {"kind": "arrival_kind", "rate": "rate_pps", "interval": "arrival_interval_us"}, f"{key}.")
            categories.append(self._build(AccessCategoryConfig, {
                "index": index,
                "aifsn": block.get("aifsn", default.aifsn),
                "cw_min": block.get("cw_min", default.cw_min),
                "cw_max": block.get("cw_max", default.cw_max),
                "retry_limit": block.get("retry_limit", default.retry_limit),
                "arrival": arrival,
            }, {}, f"{key}."))

        detection = self._build(DetectionModel, {
            name: document[name] for name in ("p_preamble", "p_decode") if name in document
        }, {}, "")

        scenario_data = {"phy": phy, "ac": tuple(categories), "detection": detection}
        if "n_stations" in document:
            scenario_data["n_stations"] = document["n_stations"]
        if "grid_resolution_us" in document:
            scenario_data["grid_resolution"] = _from_us(self._number(document, "grid_resolution_us"))
        return self._build(NetworkScenario, scenario_data,
                           {"grid_resolution": "grid_resolution_us", "ac": "ac1.aifsn"}, "")

    def _sim(self, block: Dict[str, Any], scenario: NetworkScenario) -> SimConfig:
        self._check_keys(block, SIM_KEYS, "sim.")
        data = {SIM_KEYS[key]: value for key, value in block.items()}
        return self._build(SimConfig, {"scenario": scenario, **data},
                           {name: key for key, name in SIM_KEYS.items()}, "sim.")

    def _platoon(self, block: Dict[str, Any]) -> PlatoonConfig:
        self._check_keys(block, PLATOON_KEYS, "platoon.")
        fvd = self._build(FvdParams, {FVD_KEYS[k]: v for k, v in block.items() if k in FVD_KEYS},
                          {name: key for key, name in FVD_KEYS.items()}, "platoon.")
        gap_block = block.get("gap", {})
        self._check_keys(gap_block, GAP_KEYS, "platoon.gap.")
        gap = self._build(GapAcceptanceModel, dict(gap_block), {}, "platoon.gap.")
        data = {"fvd": fvd, "gap": gap}
        if "comm_range_m" in block:
            data["comm_range"] = block["comm_range_m"]
        if "kappa_mode" in block:
            data["kappa_mode"] = block["kappa_mode"]
        if "lambda1_pps" in block:
            data["lambda1"] = block["lambda1_pps"]
        return self._build(PlatoonConfig, data,
                           {"comm_range": "comm_range_m", "lambda1": "lambda1_pps"}, "platoon.")


def parse_config(text: str, source: Optional[Path] = None) -> LoadedConfig:
    return ConfigParser(text, source).parse()


def resolve_config_path(path: Optional[str]) -> Optional[Path]:
    """
    Locate the configuration document

    Relative paths are looked up in $EDCA_CONFIG_DIR when they do not exist as given;
    without a path, $EDCA_CONFIG_DIR/scenario.json is used if present.
    """
    config_dir = os.getenv(CONFIG_DIR_ENV)
    if path:
        candidate = Path(path)
        if not candidate.is_absolute() and not candidate.exists() and config_dir:
            candidate = Path(config_dir) / candidate
        return candidate
    if config_dir:
        candidate = Path(config_dir) / DEFAULT_CONFIG_NAME
        if candidate.exists():
            return candidate
    return None


def load_config(path: Optional[str] = None) -> LoadedConfig:
    """
    Load a configuration document, or the defaults when none is found

    Raises:
        ConfigError: The file is missing, is not valid JSON or holds invalid values
    """
    resolved = resolve_config_path(path)
    if resolved is None:
        logger.info("No configuration document given, using defaults")
        return LoadedConfig()
    try:
        text = resolved.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read configuration '{resolved}': {e.strerror}") from e
    return parse_config(text, resolved)


def config_to_document(config: LoadedConfig) -> Dict[str, Any]:
    """Effective configuration as a document that parses back to the same models"""
    scenario = config.scenario
    phy = scenario.phy
    document: Dict[str, Any] = {}
    for key, (name, in_us) in PHY_KEYS.items():
        value = getattr(phy, name)
        document[key] = _to_us(value) if in_us else value
    document.update(
        n_stations=scenario.n_stations,
        p_preamble=scenario.detection.p_preamble,
        p_decode=scenario.detection.p_decode,
        grid_resolution_us=_to_us(scenario.grid_resolution),
    )
    if scenario.ac[0].arrival.interval is not None:
        document["arrival_interval_us"] = _to_us(scenario.ac[0].arrival.interval)
    for ac in scenario.ac:
        document[f"ac{ac.index}"] = {
            "aifsn": ac.aifsn,
            "cw_min": ac.cw_min,
            "cw_max": ac.cw_max,
            "retry_limit": ac.retry_limit,
            "arrival_kind": ac.arrival.kind,
            "rate_pps": ac.arrival.rate,
        }
    sim = config.sim
    document["sim"] = {"duration_s": sim.sim_duration, "warmup_s": sim.warmup,
                       "seed": sim.rng_seed, "runs": sim.runs, "arrival_clock": sim.arrival_clock}
    platoon = config.platoon
    fvd = platoon.fvd
    document["platoon"] = {
        **{key: getattr(fvd, name) for key, name in FVD_KEYS.items()},
        "comm_range_m": platoon.comm_range,
        "kappa_mode": platoon.kappa_mode,
        "lambda1_pps": platoon.lambda1,
        "gap": platoon.gap.model_dump(),
    }
    return document


def dump_config(config: LoadedConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_document(config), indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote effective configuration to {path}")
    return path
