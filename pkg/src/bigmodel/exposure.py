"""Population exposure to PM2.5 at the sub-district level.

Daily station readings are interpolated to sub-district points with
inverse-distance weighting, days above the 75 µg/m³ national standard
count as exposed, and exposure intensity is population density times
exposed days (persons·days per km²). Results aggregate by month and by
city.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_THRESHOLD_UGM3 = 75.0  # China's daily PM2.5 standard
DEFAULT_IDW_POWER = 2.0
DEFAULT_IDW_K = 8
DEFAULT_MAX_STATION_DISTANCE_M = 200_000.0
EXACT_MATCH_DISTANCE_M = 1.0
DEFAULT_EXPOSED_MONTH_CUT = 0.5
AGE_GROUPS = ("total", "0-14", "15-64", "65+")
_GROUP_SUM_TOLERANCE = 0.005


@dataclass
class StationReading:
    station_id: str
    x: float
    y: float
    date: dt.date
    pm25: float

    def __post_init__(self):
        if self.pm25 < 0:
            raise ValueError(f"station {self.station_id} on {self.date}: negative pm25")


@dataclass
class Subdistrict:
    """A township-level unit, represented by a point for interpolation."""

    id: str
    x: float
    y: float
    pop_density: float
    density_0_14: float = 0.0
    density_15_64: float = 0.0
    density_65p: float = 0.0
    city_id: str = ""

    def __post_init__(self):
        if self.pop_density < 0:
            raise ValueError(f"subdistrict {self.id}: negative population density")
        group_sum = self.density_0_14 + self.density_15_64 + self.density_65p
        if group_sum > 0 or self.pop_density > 0:
            if abs(group_sum - self.pop_density) > _GROUP_SUM_TOLERANCE * max(self.pop_density, 1e-12):
                raise ValueError(
                    f"subdistrict {self.id}: age-group densities sum to {group_sum}, "
                    f"not {self.pop_density} (0.5% tolerance)")

    def group_density(self, group: str) -> float:
        if group == "total":
            return self.pop_density
        if group == "0-14":
            return self.density_0_14
        if group == "15-64":
            return self.density_15_64
        if group == "65+":
            return self.density_65p
        raise ValueError(f"unknown age group {group!r}; expected one of {AGE_GROUPS}")


@dataclass
class ExposureSurface:
    """Daily concentration estimates at fixed query points. NaN = missing."""

    dates: list[dt.date]
    values: np.ndarray  # (n_days, n_points)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.dates):
            raise ValueError("one row of values per date required")


def interpolate_daily(readings: list[StationReading], query_xy: np.ndarray, *,
                      k: int = DEFAULT_IDW_K, power: float = DEFAULT_IDW_POWER,
                      max_station_distance_m: float = DEFAULT_MAX_STATION_DISTANCE_M) -> np.ndarray:
    """IDW estimate of one day's concentration at each query point.

    Uses the k nearest stations (all of them if fewer exist), exact values
    within 1 m of a station, and NaN where the nearest station is beyond
    ``max_station_distance_m``.
    """
    if not readings:
        raise ValueError("interpolate_daily needs at least one reading")
    seen = set()
    for r in readings:
        if r.station_id in seen:
            raise ValueError(f"duplicate reading for station {r.station_id}")
        seen.add(r.station_id)
    query_xy = np.atleast_2d(np.asarray(query_xy, dtype=float))
    coords = np.array([[r.x, r.y] for r in readings])
    values = np.array([r.pm25 for r in readings])
    kk = min(k, len(readings))
    tree = cKDTree(coords)
    dist, idx = tree.query(query_xy, k=kk)
    dist = np.atleast_2d(dist.reshape(len(query_xy), kk))
    idx = np.atleast_2d(idx.reshape(len(query_xy), kk))

    out = np.empty(len(query_xy))
    nearest = dist[:, 0]
    exact = nearest < EXACT_MATCH_DISTANCE_M
    out[exact] = values[idx[exact, 0]]
    far = nearest > max_station_distance_m
    out[far] = np.nan
    rest = ~(exact | far)
    if np.any(rest):
        w = 1.0 / dist[rest] ** power
        out[rest] = np.sum(w * values[idx[rest]], axis=1) / np.sum(w, axis=1)
    return out


def date_range(start: dt.date, end: dt.date) -> list[dt.date]:
    """Every calendar day from start to end inclusive."""
    if end < start:
        raise ValueError("end date before start date")
    return [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]


def interpolate_series(readings: list[StationReading], query_xy: np.ndarray,
                       dates: list[dt.date] | None = None, *,
                       k: int = DEFAULT_IDW_K, power: float = DEFAULT_IDW_POWER,
                       max_station_distance_m: float = DEFAULT_MAX_STATION_DISTANCE_M) -> ExposureSurface:
    """Interpolate every day of the period; days without readings are missing."""
    if not readings:
        raise ValueError("no station readings supplied")
    by_day: dict[dt.date, list[StationReading]] = {}
    for r in readings:
        by_day.setdefault(r.date, []).append(r)
    if dates is None:
        dates = date_range(min(by_day), max(by_day))
    query_xy = np.atleast_2d(np.asarray(query_xy, dtype=float))
    values = np.full((len(dates), len(query_xy)), np.nan)
    for i, day in enumerate(dates):
        day_readings = by_day.get(day)
        if day_readings:
            values[i] = interpolate_daily(day_readings, query_xy, k=k, power=power,
                                          max_station_distance_m=max_station_distance_m)
    return ExposureSurface(dates=list(dates), values=values)


def merge_supplement(primary: ExposureSurface, supplement: ExposureSurface) -> ExposureSurface:
    """Fill the primary surface's gaps from a supplementary surface.

    Points missing in both stay missing (NaN)."""
    if primary.dates != supplement.dates or primary.values.shape != supplement.values.shape:
        raise ValueError("primary and supplement surfaces must share dates and query points")
    merged = np.where(np.isnan(primary.values), supplement.values, primary.values)
    return ExposureSurface(dates=list(primary.dates), values=merged)


def exposed_days(series: np.ndarray, threshold: float = DEFAULT_THRESHOLD_UGM3) -> int:
    """Non-missing days strictly above the threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    series = np.asarray(series, dtype=float)
    return int(np.sum(series[~np.isnan(series)] > threshold))


def exposure_intensity(subdistrict: Subdistrict, n_exposed_days: int,
                       group: str = "total") -> float:
    """Population density times exposed days; persons·days per km²."""
    if n_exposed_days < 0:
        raise ValueError("exposed days must be nonnegative")
    return subdistrict.group_density(group) * n_exposed_days


@dataclass
class MonthlyExceedance:
    months: list[str]  # "YYYY-MM"
    counts: np.ndarray  # (n_points, n_months) exceedance days
    observed_days: np.ndarray  # (n_points, n_months) non-missing days


def month_key(day: dt.date) -> str:
    return f"{day.year:04d}-{day.month:02d}"


def monthly_exceedance(surface: ExposureSurface,
                       threshold: float = DEFAULT_THRESHOLD_UGM3) -> MonthlyExceedance:
    """Group daily exceedance into per-month counts per query point."""
    months: list[str] = []
    rows: dict[str, int] = {}
    for day in surface.dates:
        key = month_key(day)
        if key not in rows:
            rows[key] = len(months)
            months.append(key)
    n_points = surface.values.shape[1]
    counts = np.zeros((n_points, len(months)), dtype=np.int64)
    observed = np.zeros((n_points, len(months)), dtype=np.int64)
    for i, day in enumerate(surface.dates):
        m = rows[month_key(day)]
        row = surface.values[i]
        present = ~np.isnan(row)
        observed[present, m] += 1
        counts[present & (row > threshold), m] += 1
    return MonthlyExceedance(months=months, counts=counts, observed_days=observed)


def exposed_months(monthly: MonthlyExceedance,
                   cut: float = DEFAULT_EXPOSED_MONTH_CUT) -> np.ndarray:
    """Months whose exceedance share of observed days strictly exceeds the cut."""
    if not (0 <= cut < 1):
        raise ValueError("cut must lie in [0, 1)")
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(monthly.observed_days > 0,
                         monthly.counts / np.maximum(monthly.observed_days, 1), 0.0)
    return (share > cut).sum(axis=1).astype(np.int64)


@dataclass
class SubdistrictExposure:
    subdistrict_id: str
    exposed_days: int
    intensity: float
    intensity_by_group: dict[str, float]
    monthly_counts: dict[str, int]
    exposed_months: int


def estimate_exposure(subdistricts: list[Subdistrict], surface: ExposureSurface, *,
                      threshold: float = DEFAULT_THRESHOLD_UGM3,
                      month_cut: float = DEFAULT_EXPOSED_MONTH_CUT) -> list[SubdistrictExposure]:
    """Full exposure series per sub-district from an aligned daily surface."""
    if surface.values.shape[1] != len(subdistricts):
        raise ValueError("surface width must match the number of subdistricts")
    monthly = monthly_exceedance(surface, threshold)
    n_months = exposed_months(monthly, month_cut)
    out = []
    for j, sub in enumerate(subdistricts):
        days = exposed_days(surface.values[:, j], threshold)
        out.append(SubdistrictExposure(
            subdistrict_id=sub.id,
            exposed_days=days,
            intensity=exposure_intensity(sub, days),
            intensity_by_group={g: exposure_intensity(sub, days, g) for g in AGE_GROUPS},
            monthly_counts={m: int(monthly.counts[j, mi])
                            for mi, m in enumerate(monthly.months)},
            exposed_months=int(n_months[j]),
        ))
    return out


@dataclass
class CityAggregate:
    values: dict[str, float] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)


def city_mean(subdistricts: list[Subdistrict], per_subdistrict: np.ndarray,
              cities: list[str] | None = None) -> CityAggregate:
    """Arithmetic mean of a per-sub-district value over each city's members.

    Cities with no member sub-districts are excluded and reported."""
    per_subdistrict = np.asarray(per_subdistrict, dtype=float)
    if len(per_subdistrict) != len(subdistricts):
        raise ValueError("one value per subdistrict required")
    members: dict[str, list[float]] = {}
    for sub, value in zip(subdistricts, per_subdistrict):
        members.setdefault(sub.city_id, []).append(float(value))
    wanted = cities if cities is not None else sorted(members)
    agg = CityAggregate()
    for city in wanted:
        if members.get(city):
            agg.values[city] = float(np.mean(members[city]))
        else:
            agg.excluded.append(city)
    return agg
