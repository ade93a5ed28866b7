"""Scenario-driven parcel-level urban expansion.

Three pieces: a macro step that turns per-city growth policy into 5-year
new-area budgets, a logistic transition rule calibrated by maximum
likelihood on observed flips, and a stochastic vector CA that spends each
city's budget parcel by parcel. Per-city RNG streams keyed by
(seed, city_id) keep results identical no matter how cities are spread
across workers.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point

from .road_parcel import NON_URBAN, URBAN, Parcel
from .urban_identify import NeighborGraph, _csr_adjacency

logger = logging.getLogger(__name__)

BAU = "bau"
UAO = "uao"
NTU = "ntu"
SCENARIOS = (BAU, UAO, NTU)
SIZE_CLASSES = ("small", "medium", "large")

DEFAULT_GAMMA = 0.1
DEFAULT_BATCH_QUOTA_FRACTION = 0.05
DEFAULT_HORIZON_YEARS = 5
COEFFICIENT_BOUND = 25.0
PROB_EPS = 1e-12

INTERCEPT = "intercept"
EXPANSION_FEATURES = ("density_std", "urban_neighbor_share", "dist_center_km")


@dataclass
class CityRecord:
    city_id: str
    existing_urban_km2: float
    historical_cagr: float
    in_agglomeration: bool = False
    size_class: str = "medium"

    def __post_init__(self):
        if self.existing_urban_km2 <= 0:
            raise ValueError(f"city {self.city_id}: existing urban area must be positive")
        if self.historical_cagr < -1:
            raise ValueError(f"city {self.city_id}: growth rate below -1")
        if self.size_class not in SIZE_CLASSES:
            raise ValueError(f"city {self.city_id}: unknown size class {self.size_class!r}")


@dataclass
class ScenarioConfig:
    """Per-city growth multipliers for the three policy regimes.

    The numbers encode intent, not published values: the agglomeration
    scenario boosts member cities, the new-development scenario boosts
    small and medium cities. All are overridable.
    """

    scenario: str = BAU
    horizon_years: int = DEFAULT_HORIZON_YEARS
    bau_multiplier: float = 1.0
    uao_member_multiplier: float = 1.5
    uao_other_multiplier: float = 0.8
    ntu_small_medium_multiplier: float = 1.4
    ntu_large_multiplier: float = 0.9
    growth_model: str = "compound"  # "linear" is the sensitivity alternative

    def __post_init__(self):
        self.scenario = self.scenario.lower()
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.growth_model not in ("compound", "linear"):
            raise ValueError(f"unknown growth model {self.growth_model!r}")
        for name in ("bau_multiplier", "uao_member_multiplier", "uao_other_multiplier",
                     "ntu_small_medium_multiplier", "ntu_large_multiplier"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def multiplier(self, city: CityRecord) -> float:
        if self.scenario == BAU:
            return self.bau_multiplier
        if self.scenario == UAO:
            return self.uao_member_multiplier if city.in_agglomeration else self.uao_other_multiplier
        if city.size_class in ("small", "medium"):
            return self.ntu_small_medium_multiplier
        return self.ntu_large_multiplier


def compute_city_targets(cities: list[CityRecord],
                         scenario: ScenarioConfig) -> dict[str, float]:
    """New-urban-area budget per city over the scenario horizon.

    Compound growth at rate g = historical rate x scenario multiplier:
    existing x ((1+g)^horizon - 1), clamped at zero for shrinking cities.
    """
    targets: dict[str, float] = {}
    for city in cities:
        g = city.historical_cagr * scenario.multiplier(city)
        if scenario.growth_model == "compound":
            new_area = city.existing_urban_km2 * ((1.0 + g) ** scenario.horizon_years - 1.0)
        else:
            new_area = city.existing_urban_km2 * g * scenario.horizon_years
        targets[city.city_id] = max(new_area, 0.0)
    return targets


# --- logistic calibration -------------------------------------------------

@dataclass
class FeatureTable:
    """Per-parcel feature rows (intercept excluded; it is added by the fit)."""

    parcel_ids: list[str]
    feature_names: list[str]
    values: np.ndarray  # (n_parcels, n_features)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.parcel_ids), len(self.feature_names)):
            raise ValueError(f"feature matrix shape {self.values.shape} does not match "
                             f"{len(self.parcel_ids)} parcels x {len(self.feature_names)} features")


@dataclass
class CalibratedWeights:
    feature_names: list[str]  # intercept first
    coefficients: np.ndarray
    converged: bool = True
    gradient_norm: float = 0.0
    n_iterations: int = 0
    separation_clamped: bool = False

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("coefficients must be finite")
        if len(self.coefficients) != len(self.feature_names):
            raise ValueError("one coefficient per feature name required")

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.feature_names.index(name)])

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "coefficients": [float(c) for c in self.coefficients],
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "n_iterations": self.n_iterations,
            "separation_clamped": self.separation_clamped,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibratedWeights":
        return cls(
            feature_names=list(data["feature_names"]),
            coefficients=np.asarray(data["coefficients"], dtype=float),
            converged=bool(data.get("converged", True)),
            gradient_norm=float(data.get("gradient_norm", 0.0)),
            n_iterations=int(data.get("n_iterations", 0)),
            separation_clamped=bool(data.get("separation_clamped", False)),
        )


DEFAULT_EXPANSION_WEIGHTS = CalibratedWeights(
    feature_names=[INTERCEPT, *EXPANSION_FEATURES],
    coefficients=np.array([-2.0, 2.0, 3.0, -0.1]),
)


def sigmoid(z):
    z = np.clip(z, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-z))


def log_likelihood(weights: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean Bernoulli log-likelihood of flip labels under a logistic rule."""
    z = X @ weights
    return float(np.mean(y * z - np.logaddexp(0.0, z)))


def log_likelihood_gradient(weights: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = X @ weights
    return X.T @ (y - sigmoid(z)) / len(y)


def calibrate_weights(states_t0: dict[str, str], states_t1: dict[str, str],
                      features: FeatureTable, *, step: float | None = None,
                      tol: float = 1e-8, max_iter: int = 200_000,
                      coefficient_bound: float = COEFFICIENT_BOUND) -> CalibratedWeights:
    """Maximum-likelihood logistic fit of flip-vs-stay on parcel features.

    Candidates are the parcels rural at t0; the label is 1 if urban at t1.
    Plain gradient ascent with a fixed step (default 1/L from the data's
    curvature bound) until the mean-gradient norm drops below ``tol``.
    Perfect separation drives coefficients to infinity; when one crosses
    ``coefficient_bound`` the fit stops, clamps, and flags it.
    """
    urban_t0 = {pid for pid, s in states_t0.items() if s == URBAN}
    urban_t1 = {pid for pid, s in states_t1.items() if s == URBAN}
    reverted = urban_t0 - urban_t1
    if reverted:
        raise ValueError(f"urban set shrank between t0 and t1: {sorted(reverted)[:5]}")

    rows = [i for i, pid in enumerate(features.parcel_ids) if states_t0.get(pid) == NON_URBAN]
    if not rows:
        raise ValueError("no rural parcels at t0 to calibrate on")
    X_raw = features.values[rows]
    y = np.array([1.0 if features.parcel_ids[i] in urban_t1 else 0.0 for i in rows])
    if y.sum() == 0 or y.sum() == len(y):
        raise ValueError("calibration needs at least one flip and one non-flip")

    n = len(y)
    X = np.hstack([np.ones((n, 1)), X_raw])
    if step is None:
        # stability bound for the logistic Hessian: lambda_max(X'X) / (4n)
        lipschitz = float(np.linalg.eigvalsh(X.T @ X)[-1]) / (4.0 * n)
        step = 1.0 / lipschitz

    weights = np.zeros(X.shape[1])
    grad = log_likelihood_gradient(weights, X, y)
    grad_norm = float(np.linalg.norm(grad))
    iterations = 0
    clamped = False
    while grad_norm > tol and iterations < max_iter:
        weights = weights + step * grad
        iterations += 1
        if np.max(np.abs(weights)) > coefficient_bound:
            clamped = True
            weights = np.clip(weights, -coefficient_bound, coefficient_bound)
            grad = log_likelihood_gradient(weights, X, y)
            grad_norm = float(np.linalg.norm(grad))
            logger.warning("perfect separation suspected; coefficients clamped to "
                           "+/-%s after %d iterations", coefficient_bound, iterations)
            break
        grad = log_likelihood_gradient(weights, X, y)
        grad_norm = float(np.linalg.norm(grad))
    converged = grad_norm <= tol
    if not converged and not clamped:
        logger.warning("calibration stopped at %d iterations with gradient norm %.3g",
                       iterations, grad_norm)
    return CalibratedWeights(
        feature_names=[INTERCEPT, *features.feature_names],
        coefficients=weights,
        converged=converged,
        gradient_norm=grad_norm,
        n_iterations=iterations,
        separation_clamped=clamped,
    )


# --- transition rule and simulation ----------------------------------------

def city_center(parcels: list[Parcel]) -> Point:
    """Area-weighted centroid of urban parcels (all parcels if none urban)."""
    chosen = [p for p in parcels if p.state == URBAN] or parcels
    if not chosen:
        raise ValueError("city_center needs at least one parcel")
    wsum = sum(p.geometry.area for p in chosen)
    x = sum(p.geometry.centroid.x * p.geometry.area for p in chosen) / wsum
    y = sum(p.geometry.centroid.y * p.geometry.area for p in chosen) / wsum
    return Point(x, y)


def urban_neighbor_share(parcel: Parcel, graph: NeighborGraph,
                         states: dict[str, str]) -> float:
    nbrs = graph.neighbors(parcel.id)
    total = sum(w for _, w in nbrs)
    if total <= 0:
        return 0.0
    return sum(w for nid, w in nbrs if states[nid] == URBAN) / total


def parcel_features(parcel: Parcel, graph: NeighborGraph, states: dict[str, str],
                    center: Point, extras: dict[str, float] | None = None) -> dict[str, float]:
    feats = {
        "density_std": parcel.density_std,
        "urban_neighbor_share": urban_neighbor_share(parcel, graph, states),
        "dist_center_km": parcel.geometry.centroid.distance(center) / 1000.0,
    }
    if extras:
        feats.update(extras)
    return feats


def build_feature_table(parcels: list[Parcel], graph: NeighborGraph,
                        states: dict[str, str], center: Point,
                        extras: dict[str, dict[str, float]] | None = None) -> FeatureTable:
    """Standard expansion features for every parcel, in id order."""
    ordered = sorted(parcels, key=lambda p: p.id)
    names = list(EXPANSION_FEATURES)
    extra_names = sorted({k for row in (extras or {}).values() for k in row})
    names.extend(extra_names)
    rows = []
    for p in ordered:
        feats = parcel_features(p, graph, states, center,
                                (extras or {}).get(p.id))
        rows.append([feats.get(name, 0.0) for name in names])
    return FeatureTable(parcel_ids=[p.id for p in ordered], feature_names=names,
                        values=np.asarray(rows, dtype=float))


def _feature_vector(weights: CalibratedWeights, feats: dict[str, float]) -> np.ndarray:
    x = np.empty(len(weights.feature_names))
    for i, name in enumerate(weights.feature_names):
        if name == INTERCEPT:
            x[i] = 1.0
        elif name in feats:
            x[i] = feats[name]
        else:
            raise ValueError(f"feature {name!r} required by weights but not supplied")
    return x


def expansion_probability(parcel: Parcel, weights: CalibratedWeights,
                          states: dict[str, str], graph: NeighborGraph, *,
                          center: Point, rng: np.random.Generator | None = None,
                          gamma: float = DEFAULT_GAMMA,
                          extras: dict[str, float] | None = None) -> float:
    """Flip probability: logistic score times a seeded uniform perturbation.

    p = sigmoid(w.x) * (1 + gamma*u) with u ~ Uniform(-1, 1), clamped to
    the open interval (0, 1). gamma = 0 turns the noise off.
    """
    if parcel.state != NON_URBAN:
        raise ValueError(f"parcel {parcel.id} is already urban")
    x = _feature_vector(weights, parcel_features(parcel, graph, states, center, extras))
    p = float(sigmoid(x @ weights.coefficients))
    if gamma != 0.0:
        if rng is None:
            raise ValueError("gamma > 0 requires a seeded random generator")
        p *= 1.0 + gamma * float(rng.uniform(-1.0, 1.0))
    return float(np.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def city_rng(seed: int, city_id: str) -> np.random.Generator:
    """One RNG stream per (seed, city) so worker layout cannot change results."""
    digest = hashlib.sha256(city_id.encode("utf-8")).digest()
    return np.random.default_rng(np.random.SeedSequence(
        [seed, int.from_bytes(digest[:8], "big")]))


@dataclass
class CityExpansion:
    city_id: str
    target_new_km2: float
    achieved_new_km2: float
    shortfall_km2: float
    iterations: int
    flips: list[tuple[str, int]] = field(default_factory=list)  # (parcel id, iteration)


@dataclass
class SimulationResult:
    seed: int
    cities: dict[str, CityExpansion] = field(default_factory=dict)

    def flipped_ids(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for city in self.cities.values():
            out.update(dict(city.flips))
        return out


def simulate_city(parcels: list[Parcel], graph: NeighborGraph,
                  weights: CalibratedWeights, city_id: str, target_new_km2: float,
                  seed: int, *, gamma: float = DEFAULT_GAMMA,
                  batch_quota_fraction: float = DEFAULT_BATCH_QUOTA_FRACTION,
                  center: Point | None = None,
                  extras: dict[str, dict[str, float]] | None = None) -> CityExpansion:
    """Spend one city's area budget by flipping rural parcels.

    Each iteration draws the noise term for every candidate, then flips in
    descending-probability order (ids break ties) until the batch quota --
    a fraction of the remaining budget -- is spent. The threshold is thus
    the smallest probability whose flip area still fits the quota.
    Neighborhood terms refresh between iterations.
    """
    if not (0 < batch_quota_fraction <= 1):
        raise ValueError("batch_quota_fraction must lie in (0, 1]")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    ordered = sorted((p for p in parcels if p.admin_id == city_id), key=lambda p: p.id)
    result = CityExpansion(city_id=city_id, target_new_km2=target_new_km2,
                           achieved_new_km2=0.0, shortfall_km2=0.0, iterations=0)
    if target_new_km2 <= 0 or not ordered:
        result.shortfall_km2 = max(target_new_km2, 0.0) if not ordered else 0.0
        return result

    ids = [p.id for p in ordered]
    areas = np.array([p.area_km2 for p in ordered])
    urban = np.array([p.state == URBAN for p in ordered])
    if center is None:
        center = city_center(ordered)

    # static part of the logistic score; the neighbor share is the only
    # feature that changes while the city grows
    name_set = set(weights.feature_names)
    unknown = name_set - {INTERCEPT, "urban_neighbor_share", "density_std", "dist_center_km"}
    extra_cols = {}
    for name in sorted(unknown):
        col = np.zeros(len(ordered))
        for i, pid in enumerate(ids):
            row = (extras or {}).get(pid, {})
            if name not in row:
                raise ValueError(f"feature {name!r} required by weights but not supplied "
                                 f"for parcel {pid}")
            col[i] = row[name]
        extra_cols[name] = col
    static = np.zeros(len(ordered))
    w_share = 0.0
    for name, coef in zip(weights.feature_names, weights.coefficients):
        if name == INTERCEPT:
            static += coef
        elif name == "density_std":
            static += coef * np.array([p.density_std for p in ordered])
        elif name == "dist_center_km":
            static += coef * np.array([p.geometry.centroid.distance(center) / 1000.0
                                       for p in ordered])
        elif name == "urban_neighbor_share":
            w_share = coef
        else:
            static += coef * extra_cols[name]

    indptr, indices = _csr_adjacency(ids, graph)
    nbr_total = np.zeros(len(ids))
    np.add.at(nbr_total, np.repeat(np.arange(len(ids)), np.diff(indptr)), areas[indices])
    safe_total = np.where(nbr_total > 0, nbr_total, 1.0)
    urban_nbr = np.zeros(len(ids))
    for gi in np.flatnonzero(urban):
        urban_nbr[indices[indptr[gi]:indptr[gi + 1]]] += areas[gi]

    rng = city_rng(seed, city_id)
    achieved = 0.0
    while achieved < target_new_km2:
        candidates = np.flatnonzero(~urban)
        if candidates.size == 0:
            result.shortfall_km2 = target_new_km2 - achieved
            break
        result.iterations += 1
        z = static[candidates] + w_share * (urban_nbr[candidates] / safe_total[candidates])
        p = sigmoid(z)
        if gamma != 0.0:
            p = p * (1.0 + gamma * rng.uniform(-1.0, 1.0, size=candidates.size))
        p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
        rank = np.lexsort((candidates, -p))
        quota = batch_quota_fraction * (target_new_km2 - achieved)
        flipped: list[int] = []
        batch_area = 0.0
        for k in rank:
            gi = int(candidates[k])
            flipped.append(gi)
            batch_area += float(areas[gi])
            achieved += float(areas[gi])
            if achieved >= target_new_km2 or batch_area >= quota:
                break
        urban[flipped] = True
        for gi in flipped:
            urban_nbr[indices[indptr[gi]:indptr[gi + 1]]] += areas[gi]
            result.flips.append((ids[gi], result.iterations))
    result.achieved_new_km2 = achieved
    return result


def simulate_expansion(parcels: list[Parcel], graph: NeighborGraph,
                       weights: CalibratedWeights, targets: dict[str, float],
                       seed: int, *, gamma: float = DEFAULT_GAMMA,
                       batch_quota_fraction: float = DEFAULT_BATCH_QUOTA_FRACTION,
                       centers: dict[str, Point] | None = None,
                       extras: dict[str, dict[str, float]] | None = None) -> SimulationResult:
    """Run the expansion CA for every city with a budget.

    Input parcels are not mutated; apply the result with
    :func:`apply_simulation`. Cities are fully independent, so callers may
    distribute them across workers without affecting the outcome.
    """
    result = SimulationResult(seed=seed)
    for city_id in sorted(targets):
        center = (centers or {}).get(city_id)
        result.cities[city_id] = simulate_city(
            parcels, graph, weights, city_id, targets[city_id], seed,
            gamma=gamma, batch_quota_fraction=batch_quota_fraction,
            center=center, extras=extras)
    return result


def apply_simulation(parcels: list[Parcel], result: SimulationResult) -> None:
    flips = result.flipped_ids()
    for p in parcels:
        if p.id in flips:
            p.state = URBAN


# --- validation -------------------------------------------------------------

@dataclass
class AgreementMetrics:
    overall_accuracy: float
    per_class_accuracy: dict[str, float]
    flipped_area_ratio: float


def agreement_metrics(simulated: dict[str, str], reference: dict[str, str],
                      areas: dict[str, float]) -> AgreementMetrics:
    """Area-weighted agreement between two labelings of the same parcels.

    Per-class accuracy is the matched share of each reference class;
    flipped_area_ratio compares total urban area (simulated / reference).
    """
    missing_ref = sorted(set(simulated) - set(reference))
    missing_sim = sorted(set(reference) - set(simulated))
    if missing_ref or missing_sim:
        raise ValueError(
            f"parcel id universes differ; missing from reference: {missing_ref[:10]}, "
            f"missing from simulated: {missing_sim[:10]}")
    total = sum(areas[pid] for pid in reference)
    if total <= 0:
        raise ValueError("total parcel area must be positive")
    matched = sum(areas[pid] for pid in reference if simulated[pid] == reference[pid])
    per_class: dict[str, float] = {}
    for cls in (URBAN, NON_URBAN):
        class_area = sum(areas[pid] for pid, s in reference.items() if s == cls)
        if class_area > 0:
            hit = sum(areas[pid] for pid, s in reference.items()
                      if s == cls and simulated[pid] == cls)
            per_class[cls] = hit / class_area
        else:
            per_class[cls] = float("nan")
    sim_urban = sum(areas[pid] for pid, s in simulated.items() if s == URBAN)
    ref_urban = sum(areas[pid] for pid, s in reference.items() if s == URBAN)
    ratio = sim_urban / ref_urban if ref_urban > 0 else float("nan")
    return AgreementMetrics(overall_accuracy=matched / total,
                            per_class_accuracy=per_class,
                            flipped_area_ratio=ratio)
