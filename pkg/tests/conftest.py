import math

import numpy as np
import pytest

from pimvc.geometry import boundary_measure_weights, voronoi_volume_weights
from pimvc.pointcloud import PointCloud, sample_unit_disk


def wendland(r):
    """Independent scalar reference for the default profile."""
    return (1.0 - r) ** 4 * (4.0 * r + 1.0) if r <= 1.0 else 0.0


def wendland_bar(r):
    return (1.0 - r) ** 5 * (1.0 + 2.0 * r) / 3.0 if r <= 1.0 else 0.0


def rt(t, p, q, k=2):
    d2 = sum((a - b) ** 2 for a, b in zip(p, q))
    return (4.0 * math.pi * t) ** (-k / 2) * wendland(d2 / (4.0 * t))


def rbart(t, p, q, k=2):
    d2 = sum((a - b) ** 2 for a, b in zip(p, q))
    return (4.0 * math.pi * t) ** (-k / 2) * wendland_bar(d2 / (4.0 * t))


@pytest.fixture(scope="session")
def small_disk():
    """About 200 disk samples with estimated weights."""
    cloud = sample_unit_disk(200, seed=3)
    return boundary_measure_weights(voronoi_volume_weights(cloud))


@pytest.fixture(scope="session")
def torus_cloud():
    """Flat torus sampled on a jittered grid: a closed 2-manifold in R^4."""
    rng = np.random.default_rng(5)
    m = 14
    a, b = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    a = (a.ravel() + 0.2 * rng.random(m * m)) * 2 * math.pi / m
    b = (b.ravel() + 0.2 * rng.random(m * m)) * 2 * math.pi / m
    coords = np.column_stack([np.cos(a), np.sin(a), np.cos(b), np.sin(b)])
    V = np.full(m * m, (2 * math.pi) ** 2 / (m * m))
    return PointCloud(coords, 2, volume_weight=V)


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE = []


def record(label, ok, detail):
    """Register one acceptance line; printed at the end of the session."""
    ACCEPTANCE.append((label, bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
