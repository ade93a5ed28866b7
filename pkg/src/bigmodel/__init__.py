"""Parcel-based urban mapping, expansion simulation, and exposure estimation.

The library splits into five capabilities plus IO/orchestration:

- :mod:`bigmodel.road_parcel` -- road-network cleaning and parcel delineation
- :mod:`bigmodel.poi_density` -- POI counts and standardized land-use density
- :mod:`bigmodel.urban_identify` -- urban/non-urban labeling with a vector CA
- :mod:`bigmodel.expansion_sim` -- scenario budgets, logistic calibration, and
  the stochastic expansion CA
- :mod:`bigmodel.exposure` -- PM2.5 interpolation, exceedance, and intensity
- :mod:`bigmodel.geoio` / :mod:`bigmodel.pipeline` / :mod:`bigmodel.cli` --
  file formats, stage orchestration, and the ``bigmodel`` command
"""
from .road_parcel import (AdminUnit, Parcel, RoadNetwork, RoadSegment, RoadSpace,
                          build_road_space, delineate_parcels, extend_ends,
                          merge_road_layers, overlay_admin, trim_dangles)
from .poi_density import (DensityStats, PoiPoint, assign_pois, apply_density,
                          compute_density_stats, raw_density, standardize_density)
from .urban_identify import (IdentifyConfig, NeighborGraph, build_neighbor_graph,
                             identify_urban, transition_score)
from .expansion_sim import (CalibratedWeights, CityRecord, FeatureTable,
                            ScenarioConfig, SimulationResult, agreement_metrics,
                            calibrate_weights, compute_city_targets,
                            expansion_probability, simulate_expansion)
from .exposure import (ExposureSurface, StationReading, Subdistrict, city_mean,
                       estimate_exposure, exposed_days, exposure_intensity,
                       interpolate_daily, interpolate_series, merge_supplement,
                       monthly_exceedance)

__version__ = "0.1.0"
