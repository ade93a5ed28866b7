from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from bigmodel.config import ConfigError, load_config, validate_config
from bigmodel.geoio import (GeoIOError, load_parcels, load_roads, load_stations,
                            load_weights, load_width_table, save_parcels,
                            save_roads, save_weights, sha256_file, write_csv)
from bigmodel.expansion_sim import CalibratedWeights
from bigmodel.pipeline import DependencyError, run_pipeline
from conftest import grid_parcels, make_network


def test_parcels_round_trip(tmp_path):
    parcels = grid_parcels(3, 3, cell=250.0, gap=10.0)
    parcels[0].poi_count = 12
    parcels[0].density_raw = 7.123456789
    parcels[0].density_std = 0.456
    parcels[0].state = "urban"
    path = tmp_path / "parcels.geojson"
    save_parcels(path, parcels, crs="EPSG:32650")
    loaded, crs = load_parcels(path)
    assert crs == "EPSG:32650"
    assert loaded == sorted(parcels, key=lambda p: p.id)


def test_roads_round_trip_preserves_geometry(tmp_path):
    net = make_network([[(0.123456789, 9.87654321), (1000.0000001, 2.5)]])
    path = tmp_path / "roads.geojson"
    save_roads(path, net)
    loaded = load_roads(path)
    assert loaded.crs == net.crs
    a = np.asarray(loaded.segments[0].geometry.coords)
    b = np.asarray(net.segments[0].geometry.coords)
    assert np.max(np.abs(a - b)) < 1e-9


def test_malformed_feature_diagnostic_names_index(tmp_path):
    doc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "id": "ok", "geometry":
         {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]},
         "properties": {}},
        {"type": "Feature", "id": "bad", "geometry": {"type": "Polygon"},
         "properties": {}},
    ]}
    path = tmp_path / "broken.geojson"
    path.write_text(json.dumps(doc))
    with pytest.raises(GeoIOError, match="feature 1"):
        load_parcels(path)


def test_not_json_diagnostic(tmp_path):
    path = tmp_path / "broken.geojson"
    path.write_text("{this is not json")
    with pytest.raises(GeoIOError, match="not valid JSON"):
        load_parcels(path)


def test_large_round_trip_checksum_stable(tmp_path):
    parcels = grid_parcels(100, 100, cell=90.0, gap=10.0)
    first = tmp_path / "a.geojson"
    second = tmp_path / "b.geojson"
    save_parcels(first, parcels, crs="EPSG:32650")
    loaded, crs = load_parcels(first)
    save_parcels(second, loaded, crs=crs)
    assert sha256_file(first) == sha256_file(second)


def test_width_table_load_and_validation(tmp_path):
    path = tmp_path / "widths.csv"
    write_csv(path, ["class", "half_width_m"], [[1, 30.0], [5, 2.0]])
    assert load_width_table(path) == {1: 30.0, 5: 2.0}
    bad = tmp_path / "bad.csv"
    write_csv(bad, ["class", "half_width_m"], [[1, 99.0]])
    with pytest.raises(GeoIOError, match="line 2"):
        load_width_table(bad)


def test_stations_duplicate_rejected(tmp_path):
    path = tmp_path / "stations.csv"
    write_csv(path, ["station_id", "x", "y", "date", "pm25"],
              [["a", 0.0, 0.0, "2013-06-01", 40.0],
               ["a", 0.0, 0.0, "2013-06-01", 41.0]])
    with pytest.raises(GeoIOError, match="duplicate"):
        load_stations(path)


def test_weights_round_trip(tmp_path):
    w = CalibratedWeights(feature_names=["intercept", "density_std"],
                          coefficients=[-1.5, 2.25], gradient_norm=3e-9,
                          n_iterations=77)
    path = tmp_path / "weights.json"
    save_weights(path, w)
    loaded = load_weights(path)
    assert loaded.feature_names == w.feature_names
    assert np.array_equal(loaded.coefficients, w.coefficients)
    assert loaded.n_iterations == 77


class TestConfig:
    def test_load_toy_config(self, toy_nation):
        cfg = load_config(toy_nation)
        assert cfg.seed == 42
        assert len(cfg.roads) == 2
        assert cfg.admin.exists()
        validate_config(cfg, require=("roads", "admin", "pois"))

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("paths: {}\nbogus: 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            load_config(path)

    def test_unknown_section_key_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("exposure:\n  banana: 1\n")
        with pytest.raises(ConfigError, match="banana"):
            load_config(path)

    def test_missing_file_flagged(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("paths:\n  admin: nowhere.geojson\n")
        cfg = load_config(path)
        with pytest.raises(ConfigError, match="not found"):
            validate_config(cfg, require=("admin",))

    def test_out_of_range_parameter(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("identify:\n  identify_batch_fraction: 2.0\n")
        cfg = load_config(path)
        with pytest.raises(ConfigError, match="batch_fraction"):
            validate_config(cfg)

    def test_wrong_unit_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("exposure:\n  threshold_unit: mg/m3\n")
        cfg = load_config(path)
        with pytest.raises(ConfigError, match="threshold_unit"):
            validate_config(cfg)


class TestPipeline:
    def test_simulate_before_identify_fails(self, toy_nation, tmp_path):
        cfg = load_config(toy_nation)
        cfg.out_dir = tmp_path / "fresh"
        with pytest.raises(DependencyError, match="identify"):
            run_pipeline(cfg, "simulate")

    def test_all_writes_artifacts_and_manifests(self, toy_run):
        cfg, written = toy_run
        names = {p.name for p in written}
        assert "parcels.geojson" in names
        assert "parcels_simulated.geojson" in names
        assert "exposure_cities.csv" in names
        for stage in ("parcels", "density", "identify", "simulate", "exposure"):
            manifest = json.loads((cfg.out_dir / f"{stage}_manifest.json").read_text())
            assert manifest["stage"] == stage
            assert manifest["inputs"]
            assert manifest["outputs"]
            assert manifest["seed"] == cfg.seed

    def test_stages_do_not_mutate_inputs(self, toy_nation, toy_run):
        cfg, _ = toy_run
        before = {p: sha256_file(p) for p in toy_nation.parent.glob("*.csv")}
        run_pipeline(cfg, "exposure")
        after = {p: sha256_file(p) for p in toy_nation.parent.glob("*.csv")}
        assert before == after

    def test_rerun_is_byte_identical(self, toy_nation, toy_run, tmp_path):
        cfg, written = toy_run
        checksums = {p.name: sha256_file(p) for p in written}
        cfg2 = load_config(toy_nation)
        cfg2.out_dir = tmp_path / "rerun"
        rerun = run_pipeline(cfg2, "all")
        assert {p.name: sha256_file(p) for p in rerun} == checksums


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "bigmodel", *args],
                              capture_output=True, text=True)

    def test_missing_config_is_input_error(self, tmp_path):
        proc = self.run_cli("parcels", "--config", str(tmp_path / "none.yaml"))
        assert proc.returncode == 2

    def test_dependency_error_exit_code(self, toy_nation, tmp_path):
        proc = self.run_cli("simulate", "--config", str(toy_nation),
                            "--out", str(tmp_path / "dep"))
        assert proc.returncode == 3
        assert "identify" in proc.stderr

    def test_single_stage_success(self, toy_nation, tmp_path):
        out = tmp_path / "cli_out"
        proc = self.run_cli("parcels", "--config", str(toy_nation), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        assert (out / "parcels.geojson").exists()
        assert (out / "parcels_manifest.json").exists()

    def test_bad_stage_rejected_by_parser(self):
        proc = self.run_cli("frobnicate", "--config", "x.yaml")
        assert proc.returncode == 2
