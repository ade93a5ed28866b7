"""Stage orchestration: AICP -> density -> identify -> simulate, plus exposure.

Each stage reads its inputs (files or the previous stage's artifact),
writes its artifact deterministically, and drops a manifest recording
input checksums, parameters, seed, timings, and output checksums. Stages
never mutate their inputs. Per-admin and per-city work runs on a worker
pool; results are order-independent by construction.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import exposure as exp
from . import expansion_sim as sim
from . import geoio
from . import poi_density
from . import road_parcel as rp
from . import urban_identify as ui
from .config import ConfigError, PipelineConfig, scenario_config, validate_config

logger = logging.getLogger(__name__)

STAGES = ("parcels", "density", "identify", "calibrate", "simulate", "exposure")
ALL_STAGES = ("parcels", "density", "identify", "simulate", "exposure")

ARTIFACTS = {
    "parcels": ["parcels.geojson"],
    "density": ["parcels_density.geojson"],
    "identify": ["parcels_identified.geojson", "identify_log.csv"],
    "calibrate": ["weights.json"],
    "simulate": ["parcels_simulated.geojson", "simulation_summary.csv"],
    "exposure": ["exposure_subdistricts.csv", "exposure_monthly.csv",
                 "exposure_cities.csv"],
}

# stage -> (artifact it needs, stage that produces it)
_DEPENDS = {
    "density": ("parcels.geojson", "parcels"),
    "identify": ("parcels_density.geojson", "density"),
    "simulate": ("parcels_identified.geojson", "identify"),
}


class DependencyError(RuntimeError):
    """A stage ran before the stage that produces its input artifact."""


def _require_artifact(cfg: PipelineConfig, stage: str) -> Path:
    artifact, producer = _DEPENDS[stage]
    path = cfg.out_dir / artifact
    if not path.exists():
        raise DependencyError(
            f"stage {stage!r} needs {artifact} from stage {producer!r}; "
            f"run 'bigmodel {producer}' first")
    return path


def _parallel_map(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass
class _Manifest:
    stage: str
    inputs: dict
    parameters: dict
    seed: int
    started: float

    def write(self, cfg: PipelineConfig, outputs: list[Path]) -> Path:
        doc = {
            "stage": self.stage,
            "inputs": self.inputs,
            "parameters": self.parameters,
            "seed": self.seed,
            "jobs": cfg.jobs,
            "timings": {"wall_s": round(time.perf_counter() - self.started, 6)},
            "outputs": {p.name: geoio.sha256_file(p) for p in outputs},
        }
        path = cfg.out_dir / f"{self.stage}_manifest.json"
        with open(path, "w", newline="") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return path


def _start_manifest(cfg: PipelineConfig, stage: str, input_paths: list[Path],
                    parameters: dict) -> _Manifest:
    inputs = {str(p): geoio.sha256_file(p) for p in input_paths}
    return _Manifest(stage=stage, inputs=inputs, parameters=parameters,
                     seed=cfg.seed, started=time.perf_counter())


# --- stage: parcels (AICP) ---------------------------------------------------

def _delineate_task(args):
    admin, road_space, min_area = args
    return rp.delineate_parcels(admin, road_space, min_parcel_area_m2=min_area)


def stage_parcels(cfg: PipelineConfig) -> list[Path]:
    validate_config(cfg, require=("roads", "admin"))
    inputs = list(cfg.roads) + [cfg.admin]
    if cfg.width_table is not None:
        inputs.append(cfg.width_table)
    layers = [geoio.load_roads(p, cfg.road_class_property) for p in cfg.roads]
    admins = geoio.load_admin_units(cfg.admin)
    width_table = (geoio.load_width_table(cfg.width_table)
                   if cfg.width_table is not None else None)

    merged = rp.merge_road_layers(layers)
    trimmed = rp.trim_dangles(merged, cfg.trim_threshold_m)
    extended = rp.extend_ends(trimmed, cfg.extension_m)
    road_space = rp.build_road_space(extended, width_table)

    manifest = _start_manifest(cfg, "parcels", inputs, {
        "trim_threshold_m": cfg.trim_threshold_m,
        "extension_m": cfg.extension_m,
        "min_parcel_area_m2": cfg.min_parcel_area_m2,
        "segments_in": len(merged),
        "segments_after_trim": len(trimmed),
    })
    tasks = [(admin, road_space, cfg.min_parcel_area_m2)
             for admin in sorted(admins, key=lambda a: a.id)]
    results = _parallel_map(_delineate_task, tasks, cfg.jobs)
    parcels = [p for res in results for p in res.parcels]
    manifest.parameters["conservation"] = {
        res.admin_id: {
            "admin_area_m2": res.admin_area_m2,
            "road_area_m2": res.road_area_m2,
            "dropped_sliver_area_m2": res.dropped_sliver_area_m2,
            "dropped_sliver_count": res.dropped_sliver_count,
            "relative_error": res.conservation_error(),
        } for res in results
    }
    out = cfg.out_dir / "parcels.geojson"
    geoio.save_parcels(out, parcels, crs=merged.crs)
    manifest.write(cfg, [out])
    return [out]


# --- stage: density -----------------------------------------------------------

def stage_density(cfg: PipelineConfig) -> list[Path]:
    validate_config(cfg, require=("pois",))
    parcels_path = _require_artifact(cfg, "density")
    parcels, crs = geoio.load_parcels(parcels_path)
    pois = geoio.load_pois(cfg.pois)
    manifest = _start_manifest(cfg, "density", [parcels_path, cfg.pois], {
        "near_distance_m": cfg.near_distance_m,
    })
    assignment = poi_density.assign_pois(parcels, pois, cfg.near_distance_m)
    stats = poi_density.apply_density(parcels)
    manifest.parameters.update({
        "assigned": assignment.assigned,
        "discarded": len(assignment.discarded_ids),
        "max_raw_density": stats.max_raw,
    })
    out = cfg.out_dir / "parcels_density.geojson"
    geoio.save_parcels(out, parcels, crs=crs)
    manifest.write(cfg, [out])
    return [out]


# --- stage: identify -----------------------------------------------------------

def _identify_task(args):
    parcels, target, w_density, w_neighbor, batch_fraction, contact = args
    graph = ui.build_neighbor_graph(parcels, contact)
    config = ui.IdentifyConfig(target_area_km2=target, w_density=w_density,
                               w_neighbor=w_neighbor, batch_fraction=batch_fraction)
    return ui.identify_urban(parcels, graph, config)


def stage_identify(cfg: PipelineConfig) -> list[Path]:
    validate_config(cfg, require=("targets",))
    parcels_path = _require_artifact(cfg, "identify")
    parcels, crs = geoio.load_parcels(parcels_path)
    targets = geoio.load_targets(cfg.targets)
    manifest = _start_manifest(cfg, "identify", [parcels_path, cfg.targets], {
        "w_density": cfg.w_density,
        "w_neighbor": cfg.w_neighbor,
        "batch_fraction": cfg.identify_batch_fraction,
        "contact_distance_m": cfg.contact_distance_m,
    })
    by_admin: dict[str, list] = {}
    for p in parcels:
        by_admin.setdefault(p.admin_id, []).append(p)
    missing = sorted(set(by_admin) - set(targets))
    unknown = sorted(set(targets) - set(by_admin))
    if missing:
        logger.warning("no identify target for admin unit(s) %s; they stay rural", missing)
    if unknown:
        logger.warning("targets name admin unit(s) with no parcels: %s", unknown)
    manifest.parameters["admins_without_target"] = missing
    manifest.parameters["targets_without_parcels"] = unknown

    tasks = [(by_admin[a], targets[a], cfg.w_density, cfg.w_neighbor,
              cfg.identify_batch_fraction, cfg.contact_distance_m)
             for a in sorted(by_admin) if a in targets]
    results = _parallel_map(_identify_task, tasks, cfg.jobs)

    log_rows = []
    for admin_id, res in zip(sorted(a for a in by_admin if a in targets), results):
        ui.apply_states(by_admin[admin_id], res.states)
        for entry in res.iterations:
            log_rows.append([admin_id, entry.iteration, entry.n_flipped,
                             entry.flipped_area_km2, entry.cumulative_area_km2])

    out = cfg.out_dir / "parcels_identified.geojson"
    geoio.save_parcels(out, parcels, crs=crs)
    log_path = cfg.out_dir / "identify_log.csv"
    geoio.write_csv(log_path,
                    ["admin_id", "iteration", "n_flipped", "flipped_area_km2",
                     "cumulative_area_km2"], log_rows)
    manifest.write(cfg, [out, log_path])
    return [out, log_path]


# --- stage: calibrate -----------------------------------------------------------

def stage_calibrate(cfg: PipelineConfig) -> list[Path]:
    validate_config(cfg, require=("calibration_t0", "calibration_t1"))
    parcels_t0, _ = geoio.load_parcels(cfg.calibration_t0)
    parcels_t1, _ = geoio.load_parcels(cfg.calibration_t1)
    manifest = _start_manifest(cfg, "calibrate",
                               [cfg.calibration_t0, cfg.calibration_t1], {})
    states_t0 = {p.id: p.state for p in parcels_t0}
    states_t1 = {p.id: p.state for p in parcels_t1}
    graph = ui.build_neighbor_graph(parcels_t0, cfg.contact_distance_m)
    center = sim.city_center(parcels_t0)
    table = sim.build_feature_table(parcels_t0, graph, states_t0, center)
    weights = sim.calibrate_weights(states_t0, states_t1, table)
    manifest.parameters.update({
        "converged": weights.converged,
        "gradient_norm": weights.gradient_norm,
        "n_iterations": weights.n_iterations,
        "separation_clamped": weights.separation_clamped,
    })
    out = cfg.out_dir / "weights.json"
    geoio.save_weights(out, weights)
    manifest.write(cfg, [out])
    return [out]


# --- stage: simulate -----------------------------------------------------------

def _simulate_task(args):
    (parcels, city_id, target, weights, seed, gamma, quota, contact) = args
    graph = ui.build_neighbor_graph(parcels, contact)
    return sim.simulate_city(parcels, graph, weights, city_id, target, seed,
                             gamma=gamma, batch_quota_fraction=quota)


def stage_simulate(cfg: PipelineConfig) -> list[Path]:
    validate_config(cfg, require=("cities",))
    parcels_path = _require_artifact(cfg, "simulate")
    parcels, crs = geoio.load_parcels(parcels_path)
    cities = geoio.load_cities(cfg.cities)
    scenario = scenario_config(cfg)
    inputs = [parcels_path, cfg.cities]
    weights = sim.DEFAULT_EXPANSION_WEIGHTS
    if cfg.weights_file is not None and Path(cfg.weights_file).exists():
        weights = geoio.load_weights(cfg.weights_file)
        inputs.append(cfg.weights_file)
    if cfg.scenario_file is not None and Path(cfg.scenario_file).exists():
        inputs.append(cfg.scenario_file)

    # the live identified state is authoritative for existing urban area;
    # the CSV value remains as fallback for cities with nothing identified
    urban_by_city: dict[str, float] = {}
    for p in parcels:
        if p.state == rp.URBAN:
            urban_by_city[p.admin_id] = urban_by_city.get(p.admin_id, 0.0) + p.area_km2
    for city in cities:
        identified = urban_by_city.get(city.city_id, 0.0)
        if identified > 0:
            city.existing_urban_km2 = identified

    targets = sim.compute_city_targets(cities, scenario)
    manifest = _start_manifest(cfg, "simulate", inputs, {
        "scenario": scenario.scenario,
        "horizon_years": scenario.horizon_years,
        "growth_model": scenario.growth_model,
        "gamma": cfg.gamma,
        "batch_quota_fraction": cfg.batch_quota_fraction,
        "targets": {k: targets[k] for k in sorted(targets)},
        "weights": weights.to_dict(),
    })

    by_city: dict[str, list] = {}
    for p in parcels:
        by_city.setdefault(p.admin_id, []).append(p)
    tasks = [(by_city.get(c, []), c, targets[c], weights, cfg.seed, cfg.gamma,
              cfg.batch_quota_fraction, cfg.contact_distance_m)
             for c in sorted(targets)]
    city_results = _parallel_map(_simulate_task, tasks, cfg.jobs)
    result = sim.SimulationResult(seed=cfg.seed)
    for res in city_results:
        result.cities[res.city_id] = res
    sim.apply_simulation(parcels, result)

    out = cfg.out_dir / "parcels_simulated.geojson"
    geoio.save_parcels(out, parcels, crs=crs, flip_iterations=result.flipped_ids())
    summary_path = cfg.out_dir / "simulation_summary.csv"
    rows = [[c.city_id, scenario.scenario, c.target_new_km2, c.achieved_new_km2,
             c.shortfall_km2, c.iterations, len(c.flips)]
            for c in (result.cities[k] for k in sorted(result.cities))]
    geoio.write_csv(summary_path,
                    ["city_id", "scenario", "target_new_km2", "achieved_new_km2",
                     "shortfall_km2", "iterations", "n_flips"], rows)
    manifest.write(cfg, [out, summary_path])
    return [out, summary_path]


# --- stage: exposure -----------------------------------------------------------

def stage_exposure(cfg: PipelineConfig) -> list[Path]:
    validate_config(cfg, require=("stations", "subdistricts"))
    readings = geoio.load_stations(cfg.stations)
    subdistricts = geoio.load_subdistricts(cfg.subdistricts)
    inputs = [cfg.stations, cfg.subdistricts]
    manifest = _start_manifest(cfg, "exposure", inputs, {
        "threshold": cfg.threshold,
        "threshold_unit": cfg.threshold_unit,
        "idw_k": cfg.idw_k,
        "idw_power": cfg.idw_power,
        "max_station_distance_m": cfg.max_station_distance_m,
        "exposed_month_cut": cfg.exposed_month_cut,
    })
    points = np.array([[s.x, s.y] for s in subdistricts])
    surface = exp.interpolate_series(readings, points, k=cfg.idw_k,
                                     power=cfg.idw_power,
                                     max_station_distance_m=cfg.max_station_distance_m)
    if cfg.supplement is not None and Path(cfg.supplement).exists():
        supplement = geoio.load_supplement(cfg.supplement, subdistricts, surface.dates)
        surface = exp.merge_supplement(surface, supplement)
        manifest.inputs[str(cfg.supplement)] = geoio.sha256_file(cfg.supplement)

    estimates = exp.estimate_exposure(subdistricts, surface, threshold=cfg.threshold,
                                      month_cut=cfg.exposed_month_cut)
    monthly = exp.monthly_exceedance(surface, cfg.threshold)

    sub_path = cfg.out_dir / "exposure_subdistricts.csv"
    geoio.write_csv(sub_path, [
        "id", "city_id", "pop_density", "exposed_days", "exposed_months",
        "intensity_total", "intensity_0_14", "intensity_15_64", "intensity_65p",
    ], [[s.id, s.city_id, s.pop_density, e.exposed_days, e.exposed_months,
         e.intensity, e.intensity_by_group["0-14"], e.intensity_by_group["15-64"],
         e.intensity_by_group["65+"]]
        for s, e in zip(subdistricts, estimates)])

    monthly_path = cfg.out_dir / "exposure_monthly.csv"
    geoio.write_csv(monthly_path, ["subdistrict_id", *monthly.months],
                    [[sub.id, *monthly.counts[j].tolist()]
                     for j, sub in enumerate(subdistricts)])

    days = np.array([e.exposed_days for e in estimates], dtype=float)
    intensity = np.array([e.intensity for e in estimates], dtype=float)
    mean_days = exp.city_mean(subdistricts, days)
    mean_intensity = exp.city_mean(subdistricts, intensity)
    members: dict[str, int] = {}
    for s in subdistricts:
        members[s.city_id] = members.get(s.city_id, 0) + 1
    city_path = cfg.out_dir / "exposure_cities.csv"
    geoio.write_csv(city_path, ["city_id", "n_subdistricts", "mean_exposed_days",
                                "mean_intensity"],
                    [[c, members[c], mean_days.values[c], mean_intensity.values[c]]
                     for c in sorted(mean_days.values)])
    manifest.write(cfg, [sub_path, monthly_path, city_path])
    return [sub_path, monthly_path, city_path]


_STAGE_FUNCS = {
    "parcels": stage_parcels,
    "density": stage_density,
    "identify": stage_identify,
    "calibrate": stage_calibrate,
    "simulate": stage_simulate,
    "exposure": stage_exposure,
}


def run_pipeline(cfg: PipelineConfig, stage: str) -> list[Path]:
    """Run one stage, or every stage in order for ``all``."""
    if stage != "all" and stage not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of "
                          f"{STAGES + ('all',)}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    stages = ALL_STAGES if stage == "all" else (stage,)
    for name in stages:
        t0 = time.perf_counter()
        outputs = _STAGE_FUNCS[name](cfg)
        logger.info("stage %s finished in %.2fs: %s", name,
                    time.perf_counter() - t0, ", ".join(p.name for p in outputs))
        written.extend(outputs)
    return written
