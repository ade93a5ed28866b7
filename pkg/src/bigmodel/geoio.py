"""File formats: GeoJSON feature collections and the CSV side tables.

All writers are deterministic (sorted keys, repr floats, fixed newlines)
so reruns with identical inputs produce byte-identical artifacts. Loaders
address malformed content by feature index or CSV line number.
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import Point, mapping, shape

from .exposure import ExposureSurface, StationReading, Subdistrict
from .expansion_sim import CalibratedWeights, CityRecord
from .poi_density import PoiPoint
from .road_parcel import (MAX_HALF_WIDTH_M, MIN_HALF_WIDTH_M, NON_URBAN, URBAN,
                          AdminUnit, Parcel, RoadNetwork, RoadSegment)


class GeoIOError(ValueError):
    """Malformed or inconsistent input file."""


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_csv(path: str | Path, required: list[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise GeoIOError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise GeoIOError(f"{path}: missing column(s) {missing}")
        return list(reader)


def _csv_float(path, line, row, col) -> float:
    try:
        return float(row[col])
    except (ValueError, TypeError) as err:
        raise GeoIOError(f"{path}: line {line}: bad {col!r} value {row.get(col)!r}") from err


# --- GeoJSON ---------------------------------------------------------------

def _parse_crs(doc: dict) -> str | None:
    crs = doc.get("crs")
    if crs is None:
        return None
    if isinstance(crs, str):
        return crs
    if isinstance(crs, dict):
        name = crs.get("properties", {}).get("name")
        if isinstance(name, str):
            return name
    return None


def load_feature_collection(path: str | Path) -> tuple[list[dict], str | None]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise GeoIOError(f"{path}: not valid JSON: {err}") from err
    if doc.get("type") != "FeatureCollection" or "features" not in doc:
        raise GeoIOError(f"{path}: not a GeoJSON FeatureCollection")
    return doc["features"], _parse_crs(doc)


def save_feature_collection(path: str | Path, features: list[dict],
                            crs: str | None = None) -> None:
    doc = {"type": "FeatureCollection", "features": features}
    if crs is not None:
        doc["crs"] = {"type": "name", "properties": {"name": crs}}
    with open(path, "w", newline="") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _feature_geometry(path, i: int, feature: dict, expect: tuple[str, ...]):
    try:
        geom = shape(feature["geometry"])
    except (KeyError, TypeError, ValueError, AttributeError) as err:
        raise GeoIOError(f"{path}: feature {i}: bad geometry: {err}") from err
    if geom.geom_type not in expect:
        raise GeoIOError(f"{path}: feature {i}: expected {'/'.join(expect)}, "
                         f"got {geom.geom_type}")
    return geom


def load_roads(path: str | Path, class_property: str = "class") -> RoadNetwork:
    features, crs = load_feature_collection(path)
    segments = []
    for i, feature in enumerate(features):
        geom = _feature_geometry(path, i, feature, ("LineString",))
        props = feature.get("properties") or {}
        raw_class = props.get(class_property, 5)
        try:
            road_class = int(raw_class)
        except (TypeError, ValueError) as err:
            raise GeoIOError(f"{path}: feature {i}: road class {raw_class!r} "
                             f"is not an integer") from err
        seg_id = str(feature.get("id", props.get("id", f"r{i:06d}")))
        segments.append(RoadSegment(id=seg_id, geometry=geom, road_class=road_class))
    return RoadNetwork(segments=segments, crs=crs)


def save_roads(path: str | Path, network: RoadNetwork) -> None:
    features = []
    for seg in network.segments:
        features.append({
            "type": "Feature",
            "id": seg.id,
            "geometry": mapping(seg.geometry),
            "properties": {"class": seg.road_class},
        })
    save_feature_collection(path, features, network.crs)


def load_admin_units(path: str | Path) -> list[AdminUnit]:
    features, _ = load_feature_collection(path)
    units = []
    for i, feature in enumerate(features):
        geom = _feature_geometry(path, i, feature, ("Polygon",))
        if not geom.is_valid or geom.area <= 0:
            raise GeoIOError(f"{path}: feature {i}: invalid or degenerate admin polygon")
        props = feature.get("properties") or {}
        unit_id = feature.get("id", props.get("id"))
        if unit_id is None:
            raise GeoIOError(f"{path}: feature {i}: admin unit has no id")
        units.append(AdminUnit(id=str(unit_id), boundary=geom,
                               name=str(props.get("name", ""))))
    return units


def save_admin_units(path: str | Path, units: list[AdminUnit],
                     crs: str | None = None) -> None:
    features = [{
        "type": "Feature",
        "id": u.id,
        "geometry": mapping(u.boundary),
        "properties": {"name": u.name},
    } for u in units]
    save_feature_collection(path, features, crs)


def load_parcels(path: str | Path) -> tuple[list[Parcel], str | None]:
    features, crs = load_feature_collection(path)
    parcels = []
    for i, feature in enumerate(features):
        geom = _feature_geometry(path, i, feature, ("Polygon",))
        props = feature.get("properties") or {}
        pid = feature.get("id", props.get("id"))
        if pid is None:
            raise GeoIOError(f"{path}: feature {i}: parcel has no id")
        state = props.get("state", NON_URBAN)
        if state not in (URBAN, NON_URBAN):
            raise GeoIOError(f"{path}: feature {i}: unknown state {state!r}")
        parcels.append(Parcel(
            id=str(pid),
            geometry=geom,
            admin_id=str(props.get("admin_id", "")),
            area_km2=float(props.get("area_km2", geom.area / 1e6)),
            poi_count=int(props.get("poi_count", 0)),
            density_raw=float(props.get("density_raw", 1.0)),
            density_std=float(props.get("density_std", 0.0)),
            state=state,
        ))
    return parcels, crs


def save_parcels(path: str | Path, parcels: list[Parcel], crs: str | None = None,
                 flip_iterations: dict[str, int] | None = None) -> None:
    """Parcels as GeoJSON, sorted by id. Urban parcels carry urban=1."""
    features = []
    for p in sorted(parcels, key=lambda p: p.id):
        props = {
            "admin_id": p.admin_id,
            "area_km2": p.area_km2,
            "poi_count": p.poi_count,
            "density_raw": p.density_raw,
            "density_std": p.density_std,
            "state": p.state,
            "urban": 1 if p.state == URBAN else 0,
        }
        if flip_iterations is not None:
            props["flip_iter"] = flip_iterations.get(p.id, -1)
        features.append({
            "type": "Feature",
            "id": p.id,
            "geometry": mapping(p.geometry),
            "properties": props,
        })
    save_feature_collection(path, features, crs)


def load_pois(path: str | Path) -> list[PoiPoint]:
    """POIs from GeoJSON points or CSV ``id,x,y,category``."""
    path = Path(path)
    pois = []
    if path.suffix.lower() == ".csv":
        for line, row in enumerate(_read_csv(path, ["id", "x", "y"]), start=2):
            pois.append(PoiPoint(
                id=row["id"],
                location=Point(_csv_float(path, line, row, "x"),
                               _csv_float(path, line, row, "y")),
                category=row.get("category", "") or "",
            ))
        return pois
    features, _ = load_feature_collection(path)
    for i, feature in enumerate(features):
        geom = _feature_geometry(path, i, feature, ("Point",))
        props = feature.get("properties") or {}
        pois.append(PoiPoint(
            id=str(feature.get("id", props.get("id", f"poi{i:06d}"))),
            location=geom,
            category=str(props.get("category", "")),
        ))
    return pois


# --- CSV side tables --------------------------------------------------------

def load_width_table(path: str | Path) -> dict[int, float]:
    table = {}
    for line, row in enumerate(_read_csv(path, ["class", "half_width_m"]), start=2):
        try:
            cls = int(row["class"])
        except ValueError as err:
            raise GeoIOError(f"{path}: line {line}: bad class {row['class']!r}") from err
        width = _csv_float(path, line, row, "half_width_m")
        if not (MIN_HALF_WIDTH_M <= width <= MAX_HALF_WIDTH_M):
            raise GeoIOError(f"{path}: line {line}: half-width {width} outside "
                             f"[{MIN_HALF_WIDTH_M}, {MAX_HALF_WIDTH_M}] m")
        table[cls] = width
    return table


def load_targets(path: str | Path) -> dict[str, float]:
    targets = {}
    for line, row in enumerate(_read_csv(path, ["admin_id", "target_urban_km2"]), start=2):
        value = _csv_float(path, line, row, "target_urban_km2")
        if value < 0:
            raise GeoIOError(f"{path}: line {line}: negative target")
        targets[row["admin_id"]] = value
    return targets


_TRUE = {"true", "1", "yes", "y"}
_FALSE = {"false", "0", "no", "n"}


def load_cities(path: str | Path) -> list[CityRecord]:
    cities = []
    cols = ["city_id", "existing_urban_km2", "historical_cagr", "in_agglomeration", "size_class"]
    for line, row in enumerate(_read_csv(path, cols), start=2):
        flag = row["in_agglomeration"].strip().lower()
        if flag not in _TRUE | _FALSE:
            raise GeoIOError(f"{path}: line {line}: bad boolean {row['in_agglomeration']!r}")
        try:
            cities.append(CityRecord(
                city_id=row["city_id"],
                existing_urban_km2=_csv_float(path, line, row, "existing_urban_km2"),
                historical_cagr=_csv_float(path, line, row, "historical_cagr"),
                in_agglomeration=flag in _TRUE,
                size_class=row["size_class"].strip().lower(),
            ))
        except ValueError as err:
            raise GeoIOError(f"{path}: line {line}: {err}") from err
    return cities


def _parse_date(path, line, raw: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw.strip())
    except ValueError as err:
        raise GeoIOError(f"{path}: line {line}: bad date {raw!r}") from err


def load_stations(path: str | Path) -> list[StationReading]:
    readings = []
    for line, row in enumerate(_read_csv(path, ["station_id", "x", "y", "date", "pm25"]), start=2):
        try:
            readings.append(StationReading(
                station_id=row["station_id"],
                x=_csv_float(path, line, row, "x"),
                y=_csv_float(path, line, row, "y"),
                date=_parse_date(path, line, row["date"]),
                pm25=_csv_float(path, line, row, "pm25"),
            ))
        except ValueError as err:
            raise GeoIOError(f"{path}: line {line}: {err}") from err
    seen = set()
    for r in readings:
        key = (r.station_id, r.date)
        if key in seen:
            raise GeoIOError(f"{path}: duplicate reading for station {r.station_id} "
                             f"on {r.date}")
        seen.add(key)
    return readings


def load_subdistricts(path: str | Path) -> list[Subdistrict]:
    subs = []
    cols = ["id", "x", "y", "pop_density", "d0_14", "d15_64", "d65p", "city_id"]
    for line, row in enumerate(_read_csv(path, cols), start=2):
        try:
            subs.append(Subdistrict(
                id=row["id"],
                x=_csv_float(path, line, row, "x"),
                y=_csv_float(path, line, row, "y"),
                pop_density=_csv_float(path, line, row, "pop_density"),
                density_0_14=_csv_float(path, line, row, "d0_14"),
                density_15_64=_csv_float(path, line, row, "d15_64"),
                density_65p=_csv_float(path, line, row, "d65p"),
                city_id=row["city_id"],
            ))
        except ValueError as err:
            raise GeoIOError(f"{path}: line {line}: {err}") from err
    return subs


def load_supplement(path: str | Path, subdistricts: list[Subdistrict],
                    dates: list[dt.date], tolerance_m: float = 1.0) -> ExposureSurface:
    """Pre-gridded supplementary surface, matched to sub-district points.

    Rows whose coordinates match no sub-district within the tolerance are
    ignored; rows for dates outside the period are ignored.
    """
    values = np.full((len(dates), len(subdistricts)), np.nan)
    date_index = {d: i for i, d in enumerate(dates)}
    coords = np.array([[s.x, s.y] for s in subdistricts]) if subdistricts else np.empty((0, 2))
    tree = cKDTree(coords) if len(coords) else None
    for line, row in enumerate(_read_csv(path, ["x", "y", "date", "pm25"]), start=2):
        day = _parse_date(path, line, row["date"])
        if day not in date_index or tree is None:
            continue
        x = _csv_float(path, line, row, "x")
        y = _csv_float(path, line, row, "y")
        dist, j = tree.query([x, y], k=1)
        if dist <= tolerance_m:
            values[date_index[day], j] = _csv_float(path, line, row, "pm25")
    return ExposureSurface(dates=list(dates), values=values)


def save_weights(path: str | Path, weights: CalibratedWeights) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(weights.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_weights(path: str | Path) -> CalibratedWeights:
    try:
        with open(path) as fh:
            data = json.load(fh)
        return CalibratedWeights.from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise GeoIOError(f"{path}: bad weights file: {err}") from err
