from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point

from bigmodel.poi_density import (DensityStats, PoiPoint, apply_density,
                                  assign_pois, compute_density_stats,
                                  raw_density, standardize_density)
from conftest import grid_parcels, make_parcel


def poi(pid, x, y):
    return PoiPoint(id=pid, location=Point(x, y))


class TestAssignPois:
    def test_containment(self):
        parcels = [make_parcel("A:0", 0, 0, 100, 100)]
        result = assign_pois(parcels, [poi("p0", 50, 50)], near_distance_m=20)
        assert parcels[0].poi_count == 1
        assert result.assigned == 1
        assert result.discarded_ids == []

    def test_nearest_rule_in_road_space(self):
        # POI on the road, 8 m from A and 15 m from B
        a = make_parcel("A:0", 0, 0, 100, 100)
        b = make_parcel("A:1", 123, 0, 223, 100)
        result = assign_pois([a, b], [poi("p0", 108, 50)], near_distance_m=20)
        assert a.poi_count == 1
        assert b.poi_count == 0
        assert result.discarded_ids == []

    def test_out_of_reach_discarded(self):
        a = make_parcel("A:0", 0, 0, 100, 100)
        result = assign_pois([a], [poi("far", 500, 500)], near_distance_m=50)
        assert a.poi_count == 0
        assert result.discarded_ids == ["far"]

    def test_random_pois_match_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        parcels = grid_parcels(2, 2, cell=480.0, gap=40.0)
        pois = [poi(f"p{i:04d}", rng.uniform(-30, 1030), rng.uniform(-30, 1030))
                for i in range(1000)]
        near = 50.0
        assign_pois(parcels, pois, near_distance_m=near)

        expected = {p.id: 0 for p in parcels}
        discarded = 0
        for pt in pois:
            containing = sorted(p.id for p in parcels if p.geometry.covers(pt.location))
            if containing:
                expected[containing[0]] += 1
                continue
            dists = sorted((p.geometry.distance(pt.location), p.id) for p in parcels)
            if dists[0][0] <= near:
                expected[dists[0][1]] += 1
            else:
                discarded += 1
        for p in parcels:
            assert p.poi_count == expected[p.id]
        assert sum(p.poi_count for p in parcels) + discarded == len(pois)

    def test_count_conservation(self):
        rng = np.random.default_rng(3)
        parcels = grid_parcels(3, 3, cell=300.0, gap=20.0)
        pois = [poi(f"p{i}", rng.uniform(-100, 1100), rng.uniform(-100, 1100))
                for i in range(200)]
        result = assign_pois(parcels, pois, near_distance_m=30)
        assert sum(p.poi_count for p in parcels) + len(result.discarded_ids) == 200


class TestRawDensity:
    def test_simple_ratio(self):
        p = make_parcel("A:0", 0, 0, 707.1067811865476, 707.1067811865476)  # 0.5 km²
        p.area_km2 = 0.5
        p.poi_count = 50
        assert raw_density(p) == pytest.approx(100.0)

    def test_zero_pois_floors_to_one(self):
        p = make_parcel("A:0", 0, 0, 100, 100)
        p.poi_count = 0
        assert raw_density(p) == 1.0

    def test_sub_floor_ratio_floors_to_one(self):
        p = make_parcel("A:0", 0, 0, 1000, 2000)  # 2 km²
        p.poi_count = 1
        assert raw_density(p) == 1.0

    def test_zero_area_rejected(self):
        p = make_parcel("A:0", 0, 0, 100, 100)
        p.area_km2 = 0.0
        with pytest.raises(ValueError):
            raw_density(p)


class TestStandardizeDensity:
    def test_max_maps_to_one(self):
        assert standardize_density(10_000.0, DensityStats(max_raw=10_000.0)) == 1.0

    def test_floor_maps_to_zero(self):
        assert standardize_density(1.0, DensityStats(max_raw=10_000.0)) == 0.0

    def test_log_identity_half(self):
        assert standardize_density(100.0, DensityStats(max_raw=10_000.0)) == 0.5

    def test_raw_above_max_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            standardize_density(20.0, DensityStats(max_raw=10.0))

    def test_degenerate_region_all_zero(self):
        stats = DensityStats(max_raw=1.0)
        assert standardize_density(1.0, stats) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=1.0, max_value=1e6),
           st.floats(min_value=1.5, max_value=1e6))
    def test_range_property(self, raw, max_raw):
        raw = min(raw, max_raw)
        value = standardize_density(raw, DensityStats(max_raw=max_raw))
        assert 0.0 <= value <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=1.0, max_value=9e5),
           st.floats(min_value=1e-3, max_value=1e5))
    def test_monotonicity(self, raw, bump):
        stats = DensityStats(max_raw=2e6)
        low = standardize_density(raw, stats)
        high = standardize_density(raw + bump, stats)
        assert high > low

    def test_base_invariance(self):
        # any log base cancels in the ratio
        stats = DensityStats(max_raw=3456.0)
        for raw in (1.0, 7.0, 123.4, 3456.0):
            expected = math.log10(raw) / math.log10(stats.max_raw)
            assert standardize_density(raw, stats) == pytest.approx(expected, abs=1e-12)

    def test_scale_covariance_on_doubling(self):
        parcels = grid_parcels(2, 2, cell=1000.0, gap=10.0)
        counts = [3, 9, 27, 81]  # all above the floor for 1 km² parcels
        for p, c in zip(parcels, counts):
            p.poi_count = c
        stats = apply_density(parcels)
        before = [p.density_std for p in parcels]
        raws = [p.density_raw for p in parcels]
        for p in parcels:
            p.poi_count *= 2
        apply_density(parcels)
        for p, old_std, raw in zip(parcels, before, raws):
            expected = (math.log(raw) + math.log(2)) / (math.log(stats.max_raw) + math.log(2))
            assert p.density_std == pytest.approx(expected, abs=1e-12)


class TestApplyDensity:
    def test_fills_fields_and_returns_stats(self):
        parcels = grid_parcels(2, 1, cell=1000.0, gap=10.0)
        parcels[0].poi_count = 100
        parcels[1].poi_count = 10
        stats = apply_density(parcels)
        assert stats.max_raw == pytest.approx(100.0)
        assert parcels[0].density_std == 1.0
        assert 0.0 < parcels[1].density_std < 1.0

    def test_stats_over_wider_region(self):
        parcels = grid_parcels(2, 1, cell=1000.0, gap=10.0)
        parcels[0].poi_count = 10
        parcels[1].poi_count = 5
        apply_density(parcels, DensityStats(max_raw=1000.0))
        assert parcels[0].density_std == pytest.approx(math.log(10) / math.log(1000))

    def test_empty_region(self):
        stats = compute_density_stats([])
        assert stats.max_raw == 1.0
