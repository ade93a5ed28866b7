from __future__ import annotations

import numpy as np
import pytest
from shapely.geometry import LineString, box

from bigmodel.config import load_config
from bigmodel.fixtures import build_toy_nation
from bigmodel.road_parcel import AdminUnit, Parcel, RoadNetwork, RoadSegment


def make_network(lines, crs="EPSG:32650", road_class=3):
    segments = [RoadSegment(id=f"s{i:03d}", geometry=LineString(pts), road_class=road_class)
                for i, pts in enumerate(lines)]
    return RoadNetwork(segments=segments, crs=crs)


def make_parcel(pid, minx, miny, maxx, maxy, admin_id="A", **kw):
    geom = box(minx, miny, maxx, maxy)
    return Parcel(id=pid, geometry=geom, admin_id=admin_id,
                  area_km2=geom.area / 1e6, **kw)


def grid_parcels(n, m, cell=1000.0, gap=12.0, admin_id="A", origin=(0.0, 0.0)):
    """n x m grid of square parcels separated by a road-width gap."""
    parcels = []
    for i in range(n):
        for j in range(m):
            minx = origin[0] + i * (cell + gap)
            miny = origin[1] + j * (cell + gap)
            parcels.append(make_parcel(f"{admin_id}:{i*m+j:05d}", minx, miny,
                                       minx + cell, miny + cell, admin_id=admin_id))
    return parcels


def random_road_network(rng, n_segments=15, extent=3000.0):
    """A mixed bag of chains, loops, and stubs for property tests."""
    lines = []
    # a loop
    cx, cy = rng.uniform(500, extent - 500, size=2)
    r = rng.uniform(100, 400)
    ring = [(cx + r * np.cos(t), cy + r * np.sin(t))
            for t in np.linspace(0, 2 * np.pi, 9)]
    ring[-1] = ring[0]
    lines.append(ring)
    # chains of random walks
    while len(lines) < n_segments:
        x, y = rng.uniform(0, extent, size=2)
        hops = rng.integers(1, 4)
        for _ in range(hops):
            ang = rng.uniform(0, 2 * np.pi)
            length = rng.uniform(30, 600)
            nx_, ny_ = x + length * np.cos(ang), y + length * np.sin(ang)
            lines.append([(x, y), (nx_, ny_)])
            x, y = nx_, ny_
            if len(lines) >= n_segments:
                break
    return make_network(lines)


@pytest.fixture(scope="session")
def toy_nation(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_nation")
    config_path = build_toy_nation(root)
    return config_path


@pytest.fixture(scope="session")
def toy_config(toy_nation):
    return load_config(toy_nation)


@pytest.fixture(scope="session")
def toy_run(toy_config):
    """One full pipeline run on the toy nation, shared across tests."""
    from bigmodel.pipeline import run_pipeline
    written = run_pipeline(toy_config, "all")
    return toy_config, written


@pytest.fixture
def square_admin():
    return AdminUnit(id="A", boundary=box(0, 0, 1000, 1000), name="unit square km")
