"""Synthetic "toy nation" fixture: three cities small enough for fast,
fully offline end-to-end runs.

City A is a large agglomeration member on a 5x5 parcel grid, B a medium
standalone city, C a small one. The road layers include a sub-threshold
dangle (trimmed away), an over-threshold stub (kept), and a 30 m gap
between collinear segments (healed by end extension). Two monitoring
stations cover one year of daily PM2.5 with a few missing days, and a
supplementary surface fills the days both stations miss.
"""
from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np
import yaml
from shapely.geometry import LineString, box, mapping

from .geoio import save_feature_collection, write_csv

TOY_CRS = "EPSG:32650"
TOY_START_DATE = dt.date(2013, 4, 8)
TOY_DAYS = 365

_CITIES = {
    # admin id -> (bounds, grid step, center, cagr, in_agglomeration, size_class)
    "A": ((0.0, 0.0, 4000.0, 4000.0), 800.0, (2000.0, 2000.0), 0.08, True, "large"),
    "B": ((5000.0, 0.0, 8000.0, 3000.0), 750.0, (6500.0, 1500.0), 0.05, False, "medium"),
    "C": ((9000.0, 0.0, 11000.0, 2000.0), 1000.0, (10000.0, 1000.0), 0.12, False, "small"),
}

_IDENTIFY_TARGETS = {"A": 6.0, "B": 2.5, "C": 0.8}
_POI_COUNTS = {"A": 300, "B": 120, "C": 60}
_POI_SPREAD = {"A": 700.0, "B": 500.0, "C": 350.0}


def _grid_roads() -> list[dict]:
    features = []

    def add(xy_pairs, road_class):
        features.append({
            "type": "Feature",
            "id": f"m{len(features):04d}",
            "geometry": mapping(LineString(xy_pairs)),
            "properties": {"class": road_class},
        })

    for (minx, miny, maxx, maxy), step, _, _, _, _ in _CITIES.values():
        x = minx + step
        while x < maxx - step / 2:
            add([(x, miny), (x, maxy)], 3)
            x += step
        y = miny + step
        while y < maxy - step / 2:
            add([(minx, y), (maxx, y)], 3)
            y += step
    # an arterial across city A
    add([(0.0, 2000.0 + 400.0), (4000.0, 2400.0)], 2)
    return features


def _local_roads() -> list[dict]:
    features = []

    def add(xy_pairs, road_class):
        features.append({
            "type": "Feature",
            "id": f"l{len(features):04d}",
            "geometry": mapping(LineString(xy_pairs)),
            "properties": {"class": road_class},
        })

    # 150 m dangle off a grid street in A: trimmed away
    add([(800.0, 1200.0), (950.0, 1200.0)], 5)
    # 250 m stub in C: longer than the trim threshold, so it survives
    add([(10000.0, 1000.0), (10250.0, 1000.0)], 5)
    # collinear pair with a 30 m gap in B: end extension makes them fuse
    add([(5000.0, 1125.0), (6485.0, 1125.0)], 4)
    add([(6515.0, 1125.0), (8000.0, 1125.0)], 4)
    return features


def build_toy_nation(root: str | Path, seed: int = 20130408) -> Path:
    """Write every input file plus a config.yaml; returns the config path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    save_feature_collection(root / "roads_main.geojson", _grid_roads(), TOY_CRS)
    save_feature_collection(root / "roads_local.geojson", _local_roads(), TOY_CRS)

    admin_features = [{
        "type": "Feature",
        "id": admin_id,
        "geometry": mapping(box(*bounds)),
        "properties": {"name": f"city {admin_id}"},
    } for admin_id, (bounds, *_rest) in _CITIES.items()]
    save_feature_collection(root / "admin.geojson", admin_features, TOY_CRS)

    write_csv(root / "width_table.csv", ["class", "half_width_m"],
              [[1, 30.0], [2, 20.0], [3, 12.0], [4, 6.0], [5, 2.0]])

    poi_rows = []
    for admin_id, (_, _, center, _, _, _) in _CITIES.items():
        n = _POI_COUNTS[admin_id]
        spread = _POI_SPREAD[admin_id]
        xs = rng.normal(center[0], spread, size=n)
        ys = rng.normal(center[1], spread, size=n)
        for x, y in zip(xs, ys):
            poi_rows.append([f"poi{len(poi_rows):05d}", round(float(x), 3),
                             round(float(y), 3), "amenity"])
    for _ in range(20):  # scatter, some in the voids between cities
        poi_rows.append([f"poi{len(poi_rows):05d}",
                         round(float(rng.uniform(0, 11000)), 3),
                         round(float(rng.uniform(0, 4000)), 3), "other"])
    write_csv(root / "pois.csv", ["id", "x", "y", "category"], poi_rows)

    write_csv(root / "targets.csv", ["admin_id", "target_urban_km2"],
              [[a, _IDENTIFY_TARGETS[a]] for a in _CITIES])

    write_csv(root / "cities.csv",
              ["city_id", "existing_urban_km2", "historical_cagr",
               "in_agglomeration", "size_class"],
              [[a, _IDENTIFY_TARGETS[a], cagr, str(in_agg).lower(), size]
               for a, (_, _, _, cagr, in_agg, size) in _CITIES.items()])

    dates = [TOY_START_DATE + dt.timedelta(days=i) for i in range(TOY_DAYS)]
    station_rows = []
    missing = {"SA": set(range(100, 105)), "SB": set(range(102, 107))}
    for sid, (sx, sy, base) in {"SA": (2000.0, 2000.0, 70.0),
                                "SB": (6500.0, 1500.0, 55.0)}.items():
        for i, day in enumerate(dates):
            if i in missing[sid]:
                continue
            level = base + 35.0 * np.sin(2 * np.pi * (i + 270) / 365.0)
            value = max(float(level + rng.normal(0, 12.0)), 5.0)
            station_rows.append([sid, sx, sy, day.isoformat(), round(value, 2)])
    write_csv(root / "stations.csv", ["station_id", "x", "y", "date", "pm25"],
              station_rows)

    sub_points = {
        "A": [(1200.0, 1200.0), (2800.0, 1200.0), (1200.0, 2800.0), (2800.0, 2800.0)],
        "B": [(5600.0, 800.0), (7400.0, 800.0), (6500.0, 2200.0)],
        "C": [(9500.0, 500.0), (10500.0, 1500.0)],
    }
    sub_density = {
        "A": [2200.0, 1800.0, 1500.0, 1200.0],
        "B": [900.0, 700.0, 1100.0],
        "C": [450.0, 300.0],
    }
    sub_rows = []
    for admin_id, points in sub_points.items():
        for (x, y), rho in zip(points, sub_density[admin_id]):
            sub_rows.append([f"sub{len(sub_rows):03d}", x, y, rho,
                             0.18 * rho, 0.70 * rho, 0.12 * rho, admin_id])
    write_csv(root / "subdistricts.csv",
              ["id", "x", "y", "pop_density", "d0_14", "d15_64", "d65p", "city_id"],
              sub_rows)

    # supplementary surface for the days both stations are silent
    supp_rows = []
    for i in sorted(set(missing["SA"]) & set(missing["SB"])):
        day = dates[i].isoformat()
        for j, row in enumerate(sub_rows):
            supp_rows.append([row[1], row[2], day, 80.0 + 2.0 * j])
    write_csv(root / "supplement.csv", ["x", "y", "date", "pm25"], supp_rows)

    with open(root / "scenario.yaml", "w", newline="") as fh:
        yaml.safe_dump({
            "multipliers": {
                "bau": 1.0,
                "uao": {"member": 1.5, "other": 0.8},
                "ntu": {"small_medium": 1.4, "large": 0.9},
            },
            "horizon_years": 5,
            "growth_model": "compound",
        }, fh, sort_keys=True)

    config = {
        "paths": {
            "roads": ["roads_main.geojson", "roads_local.geojson"],
            "admin": "admin.geojson",
            "pois": "pois.csv",
            "width_table": "width_table.csv",
            "targets": "targets.csv",
            "cities": "cities.csv",
            "stations": "stations.csv",
            "subdistricts": "subdistricts.csv",
            "supplement": "supplement.csv",
            "scenario_file": "scenario.yaml",
        },
        "aicp": {"trim_threshold_m": 200.0, "extension_m": 20.0,
                 "min_parcel_area_m2": 1000.0},
        "poi": {"near_distance_m": 50.0},
        "identify": {"w_density": 0.7, "w_neighbor": 0.3,
                     "identify_batch_fraction": 0.01, "contact_distance_m": 60.0},
        "simulate": {"scenario": "bau", "horizon_years": 5, "gamma": 0.1,
                     "batch_quota_fraction": 0.05},
        "exposure": {"threshold": 75.0, "threshold_unit": "ug/m3", "idw_k": 8,
                     "idw_power": 2.0, "max_station_distance_m": 200000.0,
                     "exposed_month_cut": 0.5},
        "seed": 42,
        "jobs": 1,
        "out_dir": "out",
    }
    config_path = root / "config.yaml"
    with open(config_path, "w", newline="") as fh:
        yaml.safe_dump(config, fh, sort_keys=True)
    return config_path
