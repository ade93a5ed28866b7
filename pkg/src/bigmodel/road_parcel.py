"""Road-network cleaning and parcel delineation.

The geometry pipeline turns classed road center-lines into land parcels:
merge layers, trim short dangles, extend free ends to heal small gaps,
buffer segments into road space, subtract the road space from each
administrative boundary, and assign the leftover polygons to admin units.

All geometry is planar (projected CRS, meters). Every function is a pure
function of its inputs, so per-admin work can run in parallel without
changing results.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from shapely.geometry import LineString, Polygon
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union
from shapely.strtree import STRtree

URBAN = "urban"
NON_URBAN = "non_urban"
UNASSIGNED = "unassigned"

DEFAULT_TRIM_THRESHOLD_M = 200.0
DEFAULT_EXTENSION_M = 20.0
# half-widths in meters per road class; the usable range is 2-30 m
DEFAULT_WIDTH_TABLE = {1: 30.0, 2: 20.0, 3: 12.0, 4: 6.0, 5: 2.0}
MIN_HALF_WIDTH_M = 2.0
MAX_HALF_WIDTH_M = 30.0
DEFAULT_MIN_PARCEL_AREA_M2 = 1000.0
SNAP_TOLERANCE_M = 0.01


@dataclass
class RoadSegment:
    """A classed road center-line in a projected CRS (meters)."""

    id: str
    geometry: LineString
    road_class: int = 5


@dataclass
class RoadNetwork:
    """A collection of road segments sharing one CRS."""

    segments: list[RoadSegment]
    crs: str | None = None

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)


@dataclass
class AdminUnit:
    """An administrative boundary polygon (possibly with holes)."""

    id: str
    boundary: Polygon
    name: str = ""


@dataclass
class RoadSpace:
    """Union of per-segment buffer polygons."""

    polygons: list[Polygon]
    total_area: float
    union: BaseGeometry


@dataclass
class Parcel:
    """A land unit bounded by road space; the atomic simulation cell."""

    id: str
    geometry: Polygon
    admin_id: str
    area_km2: float
    poi_count: int = 0
    density_raw: float = 1.0
    density_std: float = 0.0
    state: str = NON_URBAN


@dataclass
class DelineationResult:
    """Parcels for one admin unit plus the area bookkeeping.

    Conservation identity: sum of parcel areas + road area inside the
    admin + dropped sliver area equals the admin area (up to boolean-op
    noise).
    """

    admin_id: str
    parcels: list[Parcel]
    admin_area_m2: float
    road_area_m2: float
    dropped_sliver_area_m2: float
    dropped_sliver_count: int

    def parcel_area_m2(self) -> float:
        return sum(p.geometry.area for p in self.parcels)

    def conservation_error(self) -> float:
        """Relative error of the area-conservation identity."""
        accounted = self.parcel_area_m2() + self.road_area_m2 + self.dropped_sliver_area_m2
        return abs(accounted - self.admin_area_m2) / max(self.admin_area_m2, 1e-12)


@dataclass
class OverlayReport:
    unassigned_ids: list[str] = field(default_factory=list)
    split_source_ids: list[str] = field(default_factory=list)


def validate_segments(segments: list[RoadSegment]) -> None:
    """Reject polylines with fewer than 2 vertices or non-finite coordinates."""
    for seg in segments:
        coords = list(seg.geometry.coords)
        if len(coords) < 2:
            raise ValueError(f"segment {seg.id}: polyline needs at least 2 vertices")
        for x, y in (c[:2] for c in coords):
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"segment {seg.id}: non-finite coordinate ({x}, {y})")


def merge_road_layers(layers: list[RoadNetwork]) -> RoadNetwork:
    """Merge road layers into one network with re-issued unique ids.

    Geometry passes through unchanged and duplicates are retained;
    deduplication is not this step's job. Layers must carry matching CRS
    metadata.
    """
    if not layers:
        raise ValueError("merge_road_layers: no input layers")
    crss = []
    for i, layer in enumerate(layers):
        if layer.crs is None:
            raise ValueError(f"merge_road_layers: layer {i} has no CRS metadata")
        crss.append(layer.crs)
    if len(set(crss)) > 1:
        raise ValueError(f"merge_road_layers: mixed CRS metadata {sorted(set(crss))}")
    merged: list[RoadSegment] = []
    for layer in layers:
        for seg in layer.segments:
            merged.append(RoadSegment(id=f"r{len(merged):06d}", geometry=seg.geometry,
                                      road_class=seg.road_class))
    validate_segments(merged)
    return RoadNetwork(segments=merged, crs=crss[0])


def _node_key(coord, tol: float) -> tuple[int, int]:
    x, y = coord[0], coord[1]
    return (round(x / tol), round(y / tol))


def _endpoint_degrees(segments: list[RoadSegment], tol: float) -> Counter:
    deg: Counter = Counter()
    for seg in segments:
        coords = seg.geometry.coords
        deg[_node_key(coords[0], tol)] += 1
        deg[_node_key(coords[-1], tol)] += 1
    return deg


def trim_dangles(network: RoadNetwork, threshold_m: float = DEFAULT_TRIM_THRESHOLD_M,
                 snap_tolerance_m: float = SNAP_TOLERANCE_M) -> RoadNetwork:
    """Remove hanging segments shorter than the threshold.

    A dangle has a free (degree-1) endpoint. Removal repeats to a fixed
    point because deleting one dangle can expose the next one in a chain.
    """
    if threshold_m <= 0:
        raise ValueError("trim threshold must be positive")
    segments = list(network.segments)
    while True:
        deg = _endpoint_degrees(segments, snap_tolerance_m)
        keep = []
        removed = False
        for seg in segments:
            coords = seg.geometry.coords
            free = (deg[_node_key(coords[0], snap_tolerance_m)] == 1
                    or deg[_node_key(coords[-1], snap_tolerance_m)] == 1)
            if free and seg.geometry.length < threshold_m:
                removed = True
            else:
                keep.append(seg)
        segments = keep
        if not removed:
            break
    return RoadNetwork(segments=segments, crs=network.crs)


def _extended_endpoint(coords: list[tuple], end_index: int, extension_m: float):
    """Translate a terminal vertex along the outgoing tangent of its edge."""
    p = coords[end_index]
    step = 1 if end_index == 0 else -1
    inner = None
    i = end_index + step
    while 0 <= i < len(coords):
        q = coords[i]
        if q[0] != p[0] or q[1] != p[1]:
            inner = q
            break
        i += step
    if inner is None:  # degenerate zero-length polyline
        return p
    dx, dy = p[0] - inner[0], p[1] - inner[1]
    norm = math.hypot(dx, dy)
    return (p[0] + extension_m * dx / norm, p[1] + extension_m * dy / norm)


def extend_ends(network: RoadNetwork, extension_m: float = DEFAULT_EXTENSION_M,
                snap_tolerance_m: float = SNAP_TOLERANCE_M) -> RoadNetwork:
    """Extend every free endpoint along its terminal edge.

    Shared (junction) endpoints stay put; each open polyline grows by
    exactly ``extension_m`` per free endpoint.
    """
    if extension_m < 0:
        raise ValueError("extension must be nonnegative")
    deg = _endpoint_degrees(network.segments, snap_tolerance_m)
    out = []
    for seg in network.segments:
        coords = list(seg.geometry.coords)
        start_free = deg[_node_key(coords[0], snap_tolerance_m)] == 1
        end_free = deg[_node_key(coords[-1], snap_tolerance_m)] == 1
        if extension_m > 0 and (start_free or end_free):
            if start_free:
                coords[0] = _extended_endpoint(coords, 0, extension_m)
            if end_free:
                coords[-1] = _extended_endpoint(coords, len(coords) - 1, extension_m)
            geometry = LineString(coords)
        else:
            geometry = seg.geometry
        out.append(RoadSegment(id=seg.id, geometry=geometry, road_class=seg.road_class))
    return RoadNetwork(segments=out, crs=network.crs)


def _explode_polygons(geom: BaseGeometry) -> list[Polygon]:
    if geom is None or geom.is_empty:
        return []
    if geom.geom_type == "Polygon":
        return [geom]
    if geom.geom_type in ("MultiPolygon", "GeometryCollection"):
        out = []
        for g in geom.geoms:
            out.extend(_explode_polygons(g))
        return out
    return []


def build_road_space(network: RoadNetwork,
                     width_table: dict[int, float] | None = None) -> RoadSpace:
    """Buffer every segment by its class half-width and union the result.

    Flat caps and mitred joins (limit 2) keep the road space from bulging
    past intersections and make straight-segment areas exact rectangles.
    """
    table = dict(DEFAULT_WIDTH_TABLE) if width_table is None else dict(width_table)
    for cls, width in table.items():
        if not (MIN_HALF_WIDTH_M <= width <= MAX_HALF_WIDTH_M):
            raise ValueError(
                f"half-width for class {cls} is {width}; must lie in "
                f"[{MIN_HALF_WIDTH_M}, {MAX_HALF_WIDTH_M}] m")
    missing = sorted({seg.road_class for seg in network.segments} - set(table))
    if missing:
        raise ValueError(f"no half-width configured for road class(es) {missing}")
    buffers = [
        seg.geometry.buffer(table[seg.road_class], cap_style="flat",
                            join_style="mitre", mitre_limit=2.0)
        for seg in network.segments
    ]
    union = unary_union(buffers) if buffers else Polygon()
    return RoadSpace(polygons=_explode_polygons(union), total_area=union.area, union=union)


def _component_sort_key(geom: Polygon):
    minx, miny, maxx, maxy = geom.bounds
    return (minx, miny, maxx, maxy)


def delineate_parcels(admin: AdminUnit, road_space: RoadSpace,
                      min_parcel_area_m2: float = DEFAULT_MIN_PARCEL_AREA_M2) -> DelineationResult:
    """Partition an admin unit into parcels: the space left once road space is removed.

    Connected components below ``min_parcel_area_m2`` are dropped as
    buffering slivers; their area is folded into the conservation report.
    Parcel ids are deterministic: components sorted by bounding box, then
    sequence-numbered within the admin unit.
    """
    if admin.boundary.is_empty or admin.boundary.area <= 0:
        raise ValueError(f"admin unit {admin.id}: degenerate boundary (zero area)")
    if not admin.boundary.is_valid:
        raise ValueError(f"admin unit {admin.id}: invalid boundary polygon")
    remaining = admin.boundary.difference(road_space.union)
    components = sorted(_explode_polygons(remaining), key=_component_sort_key)
    parcels: list[Parcel] = []
    sliver_area = 0.0
    sliver_count = 0
    for geom in components:
        if geom.area < min_parcel_area_m2:
            sliver_area += geom.area
            sliver_count += 1
            continue
        parcels.append(Parcel(
            id=f"{admin.id}:{len(parcels):05d}",
            geometry=geom,
            admin_id=admin.id,
            area_km2=geom.area / 1e6,
        ))
    road_area = road_space.union.intersection(admin.boundary).area
    return DelineationResult(
        admin_id=admin.id,
        parcels=parcels,
        admin_area_m2=admin.boundary.area,
        road_area_m2=road_area,
        dropped_sliver_area_m2=sliver_area,
        dropped_sliver_count=sliver_count,
    )


def _check_units_disjoint(admin_units: list[AdminUnit]) -> None:
    tree = STRtree([u.boundary for u in admin_units])
    pairs = tree.query([u.boundary for u in admin_units], predicate="intersects")
    for i, j in zip(pairs[0], pairs[1]):
        if i >= j:
            continue
        overlap = admin_units[i].boundary.intersection(admin_units[j].boundary).area
        if overlap > 0.01:  # m²; touching boundaries contribute zero area
            raise ValueError(
                f"admin units {admin_units[i].id} and {admin_units[j].id} overlap "
                f"by {overlap:.3f} m²")


def overlay_admin(parcels: list[Parcel], admin_units: list[AdminUnit],
                  min_piece_area_m2: float = 1.0) -> tuple[list[Parcel], OverlayReport]:
    """Assign parcels to admin units, splitting any that straddle a boundary.

    Pieces smaller than ``min_piece_area_m2`` are treated as snapping noise
    and discarded. Anything left outside every unit keeps the sentinel
    admin id ``unassigned`` and is reported. Ids are re-issued with the
    deterministic (admin_id, bounding box) ordering.
    """
    _check_units_disjoint(admin_units)
    tree = STRtree([u.boundary for u in admin_units])
    report = OverlayReport()
    pieces: list[tuple[str, Polygon, Parcel]] = []
    for parcel in parcels:
        candidates = sorted(tree.query(parcel.geometry, predicate="intersects"))
        covered = False
        for ci in candidates:
            if admin_units[ci].boundary.covers(parcel.geometry):
                pieces.append((admin_units[ci].id, parcel.geometry, parcel))
                covered = True
                break
        if covered:
            continue
        remainder = parcel.geometry
        produced = 0
        for ci in candidates:
            unit = admin_units[ci]
            inside = parcel.geometry.intersection(unit.boundary)
            kept = [g for g in _explode_polygons(inside) if g.area >= min_piece_area_m2]
            for g in kept:
                pieces.append((unit.id, g, parcel))
            produced += len(kept)
            remainder = remainder.difference(unit.boundary)
        leftovers = [g for g in _explode_polygons(remainder) if g.area >= min_piece_area_m2]
        for g in leftovers:
            pieces.append((UNASSIGNED, g, parcel))
        produced += len(leftovers)
        if produced > 1:
            report.split_source_ids.append(parcel.id)
    pieces.sort(key=lambda item: (item[0],) + _component_sort_key(item[1]))
    out: list[Parcel] = []
    seq: Counter = Counter()
    for admin_id, geom, source in pieces:
        pid = f"{admin_id}:{seq[admin_id]:05d}"
        seq[admin_id] += 1
        out.append(Parcel(
            id=pid,
            geometry=geom,
            admin_id=admin_id,
            area_km2=geom.area / 1e6,
            poi_count=source.poi_count,
            density_raw=source.density_raw,
            density_std=source.density_std,
            state=source.state,
        ))
        if admin_id == UNASSIGNED:
            report.unassigned_ids.append(pid)
    return out, report
