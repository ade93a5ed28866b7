"""POI assignment and land-use intensity per parcel.

A POI counts toward the parcel that contains it; POIs stranded in road
space count toward the nearest parcel within a cut-off distance, otherwise
they are discarded and reported. Raw density is POIs per km² floored at
1, and standardized density rescales it to [0, 1] by log(raw)/log(max).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Point
from shapely.strtree import STRtree

from .road_parcel import Parcel

DEFAULT_NEAR_DISTANCE_M = 50.0
MIN_RAW_DENSITY = 1.0  # POIs per km² assumed for parcels with no POIs
_DEGENERATE_EPS = 1e-9


@dataclass
class PoiPoint:
    id: str
    location: Point
    category: str = ""


@dataclass
class DensityStats:
    """Density normalization constants for one study region."""

    max_raw: float
    min_raw_floor: float = MIN_RAW_DENSITY

    def __post_init__(self):
        if self.max_raw < self.min_raw_floor:
            raise ValueError(f"max_raw {self.max_raw} below floor {self.min_raw_floor}")


@dataclass
class PoiAssignment:
    parcels: list[Parcel]
    assigned: int = 0
    discarded_ids: list[str] = field(default_factory=list)


def assign_pois(parcels: list[Parcel], pois: list[PoiPoint],
                near_distance_m: float = DEFAULT_NEAR_DISTANCE_M) -> PoiAssignment:
    """Count each POI toward exactly one parcel.

    Containment wins; otherwise the nearest parcel within
    ``near_distance_m`` takes the point. Ties break toward the smaller
    parcel id so counts are deterministic.
    """
    if near_distance_m < 0:
        raise ValueError("near_distance_m must be nonnegative")
    for p in parcels:
        p.poi_count = 0
    result = PoiAssignment(parcels=parcels)
    if not parcels or not pois:
        result.discarded_ids = [poi.id for poi in pois]
        return result

    order = sorted(range(len(parcels)), key=lambda i: parcels[i].id)
    geoms = [parcels[i].geometry for i in order]
    tree = STRtree(geoms)
    points = shapely.points([(poi.location.x, poi.location.y) for poi in pois])

    owner = np.full(len(pois), -1, dtype=np.int64)
    inside = tree.query(points, predicate="covered_by")
    for poi_i, parcel_i in zip(inside[0], inside[1]):
        if owner[poi_i] == -1 or parcel_i < owner[poi_i]:
            owner[poi_i] = parcel_i

    unplaced = np.flatnonzero(owner == -1)
    if unplaced.size and near_distance_m > 0:
        near = tree.query(points[unplaced], predicate="dwithin", distance=near_distance_m)
        best = {}  # poi index -> (distance, parcel index)
        for qi, parcel_i in zip(near[0], near[1]):
            poi_i = int(unplaced[qi])
            d = shapely.distance(points[poi_i], geoms[parcel_i])
            key = (d, parcel_i)
            if poi_i not in best or key < best[poi_i]:
                best[poi_i] = key
        for poi_i, (_, parcel_i) in best.items():
            owner[poi_i] = parcel_i

    for poi_i, poi in enumerate(pois):
        if owner[poi_i] == -1:
            result.discarded_ids.append(poi.id)
        else:
            parcels[order[owner[poi_i]]].poi_count += 1
            result.assigned += 1
    return result


def raw_density(parcel: Parcel) -> float:
    """POIs per km², floored at the 1 POI/km² minimum."""
    if parcel.area_km2 <= 0:
        raise ValueError(f"parcel {parcel.id}: area must be positive")
    return max(parcel.poi_count / parcel.area_km2, MIN_RAW_DENSITY)


def compute_density_stats(parcels: list[Parcel]) -> DensityStats:
    """Reduction pass: the regional maximum raw density."""
    if not parcels:
        return DensityStats(max_raw=MIN_RAW_DENSITY)
    return DensityStats(max_raw=max(raw_density(p) for p in parcels))


def standardize_density(raw: float, stats: DensityStats) -> float:
    """log(raw)/log(max_raw), mapped into [0, 1].

    The log base cancels in the ratio. A degenerate region where every
    parcel sits at the floor gets 0 for all parcels.
    """
    if raw < stats.min_raw_floor * (1 - 1e-12):
        raise ValueError(f"raw density {raw} below the floor {stats.min_raw_floor}")
    if raw > stats.max_raw * (1 + 1e-12):
        raise ValueError(
            f"raw density {raw} exceeds regional max {stats.max_raw}; "
            "stats must be computed over the same region")
    if stats.max_raw <= stats.min_raw_floor + _DEGENERATE_EPS:
        return 0.0
    value = math.log(raw) / math.log(stats.max_raw)
    return min(max(value, 0.0), 1.0)


def apply_density(parcels: list[Parcel], stats: DensityStats | None = None) -> DensityStats:
    """Fill density_raw and density_std on every parcel; returns the stats used."""
    if stats is None:
        stats = compute_density_stats(parcels)
    for p in parcels:
        p.density_raw = raw_density(p)
        p.density_std = standardize_density(p.density_raw, stats)
    return stats
