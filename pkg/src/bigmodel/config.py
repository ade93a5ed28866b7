"""Pipeline configuration: a YAML file plus command-line overrides."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .expansion_sim import SCENARIOS, ScenarioConfig


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration."""


SUPPORTED_UNIT = "ug/m3"


@dataclass
class PipelineConfig:
    # input paths (resolved relative to the config file)
    roads: list[Path] = field(default_factory=list)
    admin: Path | None = None
    pois: Path | None = None
    width_table: Path | None = None
    targets: Path | None = None
    cities: Path | None = None
    stations: Path | None = None
    subdistricts: Path | None = None
    supplement: Path | None = None
    scenario_file: Path | None = None
    weights_file: Path | None = None
    calibration_t0: Path | None = None
    calibration_t1: Path | None = None

    # AICP
    trim_threshold_m: float = 200.0
    extension_m: float = 20.0
    min_parcel_area_m2: float = 1000.0
    road_class_property: str = "class"

    # POI density
    near_distance_m: float = 50.0

    # identification
    w_density: float = 0.7
    w_neighbor: float = 0.3
    identify_batch_fraction: float = 0.01
    contact_distance_m: float = 60.0

    # expansion simulation
    scenario: str = "bau"
    horizon_years: int = 5
    growth_model: str = "compound"
    gamma: float = 0.1
    batch_quota_fraction: float = 0.05

    # exposure
    threshold: float = 75.0
    threshold_unit: str = SUPPORTED_UNIT
    idw_k: int = 8
    idw_power: float = 2.0
    max_station_distance_m: float = 200_000.0
    exposed_month_cut: float = 0.5

    # run settings
    seed: int = 42
    jobs: int = 1
    out_dir: Path = Path("out")


_PATH_KEYS = ("admin", "pois", "width_table", "targets", "cities", "stations",
              "subdistricts", "supplement", "scenario_file", "weights_file",
              "calibration_t0", "calibration_t1")

_SECTION_KEYS = {
    "aicp": ("trim_threshold_m", "extension_m", "min_parcel_area_m2",
             "road_class_property"),
    "poi": ("near_distance_m",),
    "identify": ("w_density", "w_neighbor", "identify_batch_fraction",
                 "contact_distance_m"),
    "simulate": ("scenario", "horizon_years", "growth_model", "gamma",
                 "batch_quota_fraction"),
    "exposure": ("threshold", "threshold_unit", "idw_k", "idw_power",
                 "max_station_distance_m", "exposed_month_cut"),
}


def load_config(path: str | Path) -> PipelineConfig:
    """Read a YAML config; relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: bad YAML: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")

    base = path.parent
    cfg = PipelineConfig()

    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError(f"{path}: 'paths' must be a mapping")
    roads = paths.get("roads")
    if roads is not None:
        if isinstance(roads, (str, Path)):
            roads = [roads]
        cfg.roads = [base / Path(p) for p in roads]
    for key in _PATH_KEYS:
        value = paths.get(key)
        if value is not None:
            setattr(cfg, key, base / Path(value))

    for section, keys in _SECTION_KEYS.items():
        block = doc.get(section, {})
        if not isinstance(block, dict):
            raise ConfigError(f"{path}: section {section!r} must be a mapping")
        for key, value in block.items():
            if key not in keys:
                raise ConfigError(f"{path}: unknown key {key!r} in section {section!r}")
            setattr(cfg, key, value)

    for key in ("seed", "jobs", "out_dir"):
        if key in doc:
            setattr(cfg, key, doc[key])
    cfg.out_dir = base / Path(cfg.out_dir)
    cfg.seed = int(cfg.seed)
    cfg.jobs = int(cfg.jobs)
    cfg.scenario = str(cfg.scenario).lower()

    unknown = set(doc) - {"paths", "seed", "jobs", "out_dir"} - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown top-level key(s) {sorted(unknown)}")
    return cfg


def validate_config(cfg: PipelineConfig, require: tuple[str, ...] = ()) -> None:
    """Range-check parameters and confirm the required input files exist."""
    if cfg.trim_threshold_m <= 0:
        raise ConfigError("aicp.trim_threshold_m must be positive")
    if cfg.extension_m < 0:
        raise ConfigError("aicp.extension_m must be nonnegative")
    if cfg.min_parcel_area_m2 < 0:
        raise ConfigError("aicp.min_parcel_area_m2 must be nonnegative")
    if cfg.near_distance_m < 0:
        raise ConfigError("poi.near_distance_m must be nonnegative")
    if cfg.w_density < 0 or cfg.w_neighbor < 0 or (cfg.w_density == 0 and cfg.w_neighbor == 0):
        raise ConfigError("identify weights must be nonnegative and not both zero")
    if not (0 < cfg.identify_batch_fraction <= 1):
        raise ConfigError("identify.identify_batch_fraction must lie in (0, 1]")
    if cfg.contact_distance_m < 0:
        raise ConfigError("identify.contact_distance_m must be nonnegative")
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"simulate.scenario must be one of {SCENARIOS}")
    if cfg.gamma < 0:
        raise ConfigError("simulate.gamma must be nonnegative")
    if not (0 < cfg.batch_quota_fraction <= 1):
        raise ConfigError("simulate.batch_quota_fraction must lie in (0, 1]")
    if cfg.horizon_years <= 0:
        raise ConfigError("simulate.horizon_years must be positive")
    if cfg.threshold <= 0:
        raise ConfigError("exposure.threshold must be positive")
    if cfg.threshold_unit != SUPPORTED_UNIT:
        raise ConfigError(f"exposure.threshold_unit must be {SUPPORTED_UNIT!r} "
                          f"(got {cfg.threshold_unit!r})")
    if cfg.idw_k < 1:
        raise ConfigError("exposure.idw_k must be at least 1")
    if cfg.idw_power <= 0:
        raise ConfigError("exposure.idw_power must be positive")
    if not (0 <= cfg.exposed_month_cut < 1):
        raise ConfigError("exposure.exposed_month_cut must lie in [0, 1)")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")

    for key in require:
        value = getattr(cfg, key)
        if key == "roads":
            if not value:
                raise ConfigError("paths.roads is required for this stage")
            for p in value:
                if not Path(p).exists():
                    raise ConfigError(f"paths.roads: file not found: {p}")
        else:
            if value is None:
                raise ConfigError(f"paths.{key} is required for this stage")
            if not Path(value).exists():
                raise ConfigError(f"paths.{key}: file not found: {value}")


def scenario_config(cfg: PipelineConfig) -> ScenarioConfig:
    """Scenario multipliers from the scenario file, if any, else defaults."""
    kwargs = {
        "scenario": cfg.scenario,
        "horizon_years": cfg.horizon_years,
        "growth_model": cfg.growth_model,
    }
    if cfg.scenario_file is not None:
        try:
            with open(cfg.scenario_file) as fh:
                doc = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"scenario file not found: {cfg.scenario_file}")
        except yaml.YAMLError as err:
            raise ConfigError(f"{cfg.scenario_file}: bad YAML: {err}") from err
        multipliers = doc.get("multipliers", {})
        if "bau" in multipliers:
            kwargs["bau_multiplier"] = float(multipliers["bau"])
        if "uao" in multipliers:
            kwargs["uao_member_multiplier"] = float(multipliers["uao"]["member"])
            kwargs["uao_other_multiplier"] = float(multipliers["uao"]["other"])
        if "ntu" in multipliers:
            kwargs["ntu_small_medium_multiplier"] = float(multipliers["ntu"]["small_medium"])
            kwargs["ntu_large_multiplier"] = float(multipliers["ntu"]["large"])
        if "horizon_years" in doc:
            kwargs["horizon_years"] = int(doc["horizon_years"])
        if "growth_model" in doc:
            kwargs["growth_model"] = str(doc["growth_model"])
    try:
        return ScenarioConfig(**kwargs)
    except ValueError as err:
        raise ConfigError(str(err)) from err
