import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pimvc.errors import CoverageError, ParameterError
from pimvc.kernel import KernelSpec
from pimvc.operator import (
    SolveReport,
    SourceField,
    assemble_load,
    assemble_mass,
    assemble_robin,
    assemble_stiffness,
    certify_diagonal_dominance,
    coercivity_probe,
    discrete_l2_error,
    interpolate,
    partition_domain,
)
from pimvc.pointcloud import PointCloud, build_index

from conftest import rbart, rt

T = 0.02


@pytest.fixture(scope="module")
def setup(small_disk):
    kernel = KernelSpec(T)
    part = partition_domain(small_disk, build_index(small_disk), T)
    return small_disk, kernel, part


def _close(a, b, rel=1e-10):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def test_small_disk_is_nontrivial(setup):
    cloud, _, part = setup
    assert cloud.n <= 300
    assert 20 <= len(part.interior_ids) < cloud.n


def test_partition_examples():
    pts = [[0.75, 0.0], [1.0, 0.0], [0.0, 1.0], [0.9, 0.0]]
    cloud = PointCloud(pts, 2, [False, True, True, False])
    part = partition_domain(cloud, build_index(cloud), 0.01)
    assert list(part.interior_ids) == [0]
    assert list(part.constrained_ids) == [1, 2, 3]


def test_partition_closed_manifold(torus_cloud):
    part = partition_domain(torus_cloud, None, 0.05)
    assert len(part.constrained_ids) == 0
    assert part.n == torus_cloud.n


def test_partition_empty_interior(small_disk):
    with pytest.raises(ParameterError, match="bandwidth too large"):
        partition_domain(small_disk, None, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-4, 0.05), st.floats(1.01, 3.0))
def test_partition_monotone_in_t(small_disk, t1, factor):
    c1 = set(partition_domain(small_disk, None, t1).constrained_ids.tolist())
    c2 = set(partition_domain(small_disk, None, t1 * factor).constrained_ids.tolist())
    assert c1 <= c2


def test_quadratic_form_double_loop(setup):
    cloud, kernel, part = setup
    A = assemble_stiffness(cloud, kernel, part)
    P, V = cloud.coords.tolist(), cloud.volume_weight.tolist()
    I, C = part.interior_ids.tolist(), part.constrained_ids.tolist()
    rng = np.random.default_rng(0)
    u = rng.standard_normal(len(I))
    pair = sum(rt(T, P[i], P[j]) * (u[a] - u[b]) ** 2 * V[i] * V[j]
               for a, i in enumerate(I) for b, j in enumerate(I))
    collar = sum(u[a] ** 2 * V[i] * sum(rt(T, P[i], P[j]) * V[j] for j in C)
                 for a, i in enumerate(I))
    oracle = pair / (2 * T) + collar / T
    assert _close(float(u @ (A @ u)), oracle)


def test_stiffness_symmetric_and_certified(setup):
    cloud, kernel, part = setup
    A = assemble_stiffness(cloud, kernel, part)
    assert abs(A.matrix - A.matrix.T).max() == 0.0
    assert certify_diagonal_dominance(A)


def test_two_point_symmetry():
    cloud = PointCloud([[0.0, 0.0], [0.1, 0.0]], 2, volume_weight=[0.5, 0.5])
    kernel = KernelSpec(0.01)
    A = assemble_stiffness(cloud, kernel, partition_domain(cloud, None, 0.01)).matrix.toarray()
    assert A[0, 1] == A[1, 0] < 0


def test_constants_annihilated_on_closed_manifold(torus_cloud):
    kernel = KernelSpec(0.05)
    A = assemble_stiffness(torus_cloud, kernel, partition_domain(torus_cloud, None, 0.05))
    one = np.ones(A.dim)
    assert np.max(np.abs(A @ one)) <= 1e-10 * np.max(np.abs(A.diagonal()))


def test_load_zero(setup):
    cloud, kernel, part = setup
    b = assemble_load(cloud, kernel, part, SourceField(lambda x: 0.0 * x[:, 0]))
    assert np.all(b == 0)


def test_load_double_loop(setup):
    cloud, kernel, part = setup
    f = lambda x: np.sin(3 * x[:, 0]) + x[:, 1] ** 2
    g = lambda x: 1.0 + x[:, 0]
    b = assemble_load(cloud, kernel, part, SourceField(f, g))
    P, V = cloud.coords.tolist(), cloud.volume_weight.tolist()
    fv, gv = f(cloud.coords), g(cloud.coords)
    C = part.constrained_ids.tolist()
    for a, i in enumerate(part.interior_ids.tolist()):
        s = sum(rbart(T, P[i], P[j]) * fv[j] * V[j] for j in range(cloud.n))
        s += sum(rt(T, P[i], P[j]) * gv[j] * V[j] for j in C) / T
        assert _close(b[a], V[i] * s)


def test_load_unit_source_positive(setup):
    cloud, kernel, part = setup
    b = assemble_load(cloud, kernel, part, SourceField(lambda x: np.ones(len(x))))
    assert np.all(b > 0)


def test_load_single_point_near_collar():
    # one interior point within 2 sqrt(t) of a constrained collar point
    pts = [[0.0, 0.0], [0.25, 0.0], [0.45, 0.0]]
    cloud = PointCloud(pts, 2, [False, False, True], volume_weight=[0.3, 0.2, 0.1])
    t = 0.01
    part = partition_domain(cloud, None, t)
    assert list(part.interior_ids) == [0] and list(part.constrained_ids) == [1, 2]
    b = assemble_load(cloud, KernelSpec(t), part, SourceField(lambda x: 0 * x[:, 0], lambda x: 1 + 0 * x[:, 0]))
    expected = 0.3 / t * (rt(t, pts[0], pts[1]) * 0.2 + rt(t, pts[0], pts[2]) * 0.1)
    assert _close(b[0], expected)


def test_mass_double_loop(setup):
    cloud, kernel, part = setup
    B = assemble_mass(cloud, kernel, part).matrix.toarray()
    P, V = cloud.coords.tolist(), cloud.volume_weight.tolist()
    I = part.interior_ids.tolist()
    oracle = np.array([[V[i] * rbart(T, P[i], P[j]) * V[j] for j in I] for i in I])
    assert np.max(np.abs(B - oracle)) <= 1e-10 * np.max(np.abs(oracle))
    assert np.max(np.abs(B - B.T)) <= 1e-12 * np.max(np.abs(B))
    diag = [V[i] ** 2 / (4 * math.pi * T) / 3 for i in I]
    assert np.allclose(np.diag(B), diag, rtol=1e-12)


def test_mass_total(setup):
    cloud, kernel, part = setup
    B = assemble_mass(cloud, kernel, part)
    P, V = cloud.coords.tolist(), cloud.volume_weight.tolist()
    I = part.interior_ids.tolist()
    oracle = sum(V[i] * sum(rbart(T, P[i], P[j]) * V[j] for j in I) for i in I)
    assert abs(B.matrix.sum() - oracle) <= 0.1 * oracle


def test_robin_single_boundary_term():
    pts = [[0.0, 0.0], [0.05, 0.0], [0.1, 0.0]]
    cloud = PointCloud(pts, 2, [False, False, True], volume_weight=[0.2, 0.3, 0.1],
                       boundary_weight=[0, 0, 0.4])
    t, beta = 0.01, 1e-2
    sys = assemble_robin(cloud, KernelSpec(t), beta)
    for i in range(3):
        expected = 0.2 * 0 + [0.2, 0.3, 0.1][i] * (2 / beta) * rbart(t, pts[i], pts[2]) * 0.4
        assert _close(sys.boundary[i, 2], expected)
    assert sys.boundary[:, :2].nnz == 0


def test_robin_large_beta_boundary_vanishes(small_disk):
    sys = assemble_robin(small_disk, KernelSpec(T), 1e12)
    ratio = abs(sys.boundary).max() / abs(sys.operator.matrix).max()
    assert ratio < 1e-12


def test_robin_diffusion_annihilates_constants(small_disk):
    sys = assemble_robin(small_disk, KernelSpec(T), 1e-4)
    assert np.max(np.abs(sys.diffusion @ np.ones(small_disk.n))) < 1e-10 * abs(sys.diffusion).max()


def test_interpolant_reproduces_constants(setup):
    cloud, kernel, part = setup
    report = SolveReport(np.full(cloud.n, 2.5))
    u = interpolate(report, cloud, kernel, part)
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.4, 0.4, (20, 2))
    assert np.max(np.abs(u(x) - 2.5)) <= 1e-12


def test_interpolant_zero_in_collar(setup):
    cloud, kernel, part = setup
    u = interpolate(SolveReport(np.ones(cloud.n)), cloud, kernel, part)
    assert u([[0.99, 0.0]])[0] == 0.0


def test_interpolant_at_sample(setup):
    cloud, kernel, part = setup
    rng = np.random.default_rng(2)
    sol = rng.standard_normal(cloud.n)
    f = lambda x: np.cos(x[:, 0])
    u = interpolate(SolveReport(sol), cloud, kernel, part, SourceField(f))
    P, V = cloud.coords.tolist(), cloud.volume_weight.tolist()
    fv = f(cloud.coords)
    for i in part.interior_ids[:10].tolist():
        num = sum(rt(T, P[i], P[j]) * sol[j] * V[j] for j in range(cloud.n))
        num += T * sum(rbart(T, P[i], P[j]) * fv[j] * V[j] for j in range(cloud.n))
        den = sum(rt(T, P[i], P[j]) * V[j] for j in range(cloud.n))
        assert _close(u(cloud.coords[i])[0], num / den)


def test_interpolant_coverage_error():
    cloud = PointCloud([[0.0, 0.0], [0.1, 0.0]], 2, volume_weight=[1.0, 1.0])
    part = partition_domain(cloud, None, 0.01)
    u = interpolate(SolveReport(np.zeros(2)), cloud, KernelSpec(0.01), part)
    with pytest.raises(CoverageError):
        u([[5.0, 5.0]])


def test_l2_error_examples(setup):
    cloud, _, part = setup
    exact = lambda x: np.sin(x[:, 0])
    u = exact(cloud.coords)
    assert discrete_l2_error(u, exact, cloud, part) == 0.0
    assert discrete_l2_error(u + 0.3, exact, cloud, part) == pytest.approx(0.3, rel=1e-12)
    r = np.random.default_rng(3).standard_normal(cloud.n)
    I = part.interior_ids
    V = cloud.volume_weight[I]
    hand = math.sqrt(sum(r[i] ** 2 * v for i, v in zip(I, V)) / sum(V))
    assert discrete_l2_error(r, lambda x: 0 * x[:, 0], cloud, part) == pytest.approx(hand, rel=1e-12)


def test_coercivity_single_point(setup):
    cloud, kernel, part = setup
    A = assemble_stiffness(cloud, kernel, part)
    a = 0
    i = int(part.interior_ids[a])
    e = np.zeros(A.dim)
    e[a] = 1.0
    ratio = float(e @ (A @ e)) / cloud.volume_weight[i]
    P, V = cloud.coords.tolist(), cloud.volume_weight.tolist()
    others = sum(rt(T, P[i], P[j]) * V[j] for j in range(cloud.n) if j != i)
    assert ratio == pytest.approx(others / T, rel=1e-10)
    assert ratio > 0


def test_coercivity_probe_positive(setup):
    cloud, kernel, part = setup
    assert coercivity_probe(cloud, kernel, part, trials=8, seed=0) > 0
    with pytest.raises(ParameterError):
        coercivity_probe(cloud, kernel, part, trials=0)


def test_missing_weights_rejected():
    cloud = PointCloud([[0.0, 0.0], [0.1, 0.0]], 2)
    with pytest.raises(ParameterError, match="volume weights"):
        assemble_stiffness(cloud, KernelSpec(0.01), partition_domain(cloud, None, 0.01))


def test_partition_kernel_mismatch(setup):
    cloud, _, part = setup
    with pytest.raises(ParameterError, match="partition"):
        assemble_stiffness(cloud, KernelSpec(2 * T), part)


def test_nonfinite_source_rejected(setup):
    cloud, kernel, part = setup
    with pytest.raises(ParameterError), np.errstate(divide="ignore"):
        assemble_load(cloud, kernel, part, SourceField(lambda x: 1 / (0 * x[:, 0])))
