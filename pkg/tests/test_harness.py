import math

import numpy as np
import pytest

from pimvc.errors import ParameterError, StageError
from pimvc.harness import (
    ExperimentConfig,
    choose_kernel,
    discretize,
    exact_solution,
    manufactured_source,
    parse_field,
    robin_data_for_exact,
    robin_error,
    run,
    run_single_solve,
    solve_robin,
    solve_volume_constrained,
    weighted_disk,
)
from pimvc.bessel import bessel_zeros, disk_dirichlet_eigenvalues
from pimvc.operator import SourceField, partition_domain
from pimvc.pointcloud import save_cloud
from scipy import special


def _bisect(fn, a, b, tol=1e-13):
    fa = fn(a)
    while b - a > tol:
        mid = 0.5 * (a + b)
        if fn(mid) * fa > 0:
            a, fa = mid, fn(mid)
        else:
            b = mid
    return 0.5 * (a + b)


def test_bessel_zeros_against_bisection():
    j01 = _bisect(special.j0, 2.0, 3.0)
    j11 = _bisect(special.j1, 3.0, 4.5)
    assert j01 == pytest.approx(2.404826, abs=1e-6)
    assert j11 == pytest.approx(3.831706, abs=1e-6)
    assert bessel_zeros(0, 1)[0] == pytest.approx(j01, abs=1e-11)
    ref = disk_dirichlet_eigenvalues(3)
    assert ref[0][0] == pytest.approx(5.7832, abs=1e-4)
    assert ref[1][0] == ref[2][0] == pytest.approx(14.6820, abs=1e-4)
    assert ref[0][0] == pytest.approx(j01**2, rel=1e-11)


def test_bessel_zeros_many_orders():
    for order in range(6):
        assert np.allclose(bessel_zeros(order, 5), special.jn_zeros(order, 5), rtol=1e-12)


def test_disk_spectrum_multiplicities():
    ref = disk_dirichlet_eigenvalues(10)
    orders = [o for _, o, _ in ref]
    assert orders == [0, 1, 1, 2, 2, 0, 3, 3, 1, 1]


def test_manufactured_source_is_minus_laplacian():
    # centred differences of cos(2 pi r) in 2D
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.9, 0.9, (20, 2))
    e = 1e-4
    lap = sum(exact_solution(x + e * d) + exact_solution(x - e * d) for d in np.eye(2))
    lap = (lap - 4 * exact_solution(x)) / e**2
    assert np.allclose(manufactured_source(x), -lap, rtol=1e-5, atol=1e-3)
    assert manufactured_source(np.zeros((1, 2)))[0] == pytest.approx(8 * math.pi**2)
    near = manufactured_source(np.array([[1e-9, 0.0]]))[0]
    assert near == pytest.approx(8 * math.pi**2, rel=1e-9)


def test_config_validation():
    with pytest.raises(ParameterError):
        ExperimentConfig("nonsense")
    with pytest.raises(ParameterError):
        ExperimentConfig(sizes=(2610, 684))
    with pytest.raises(ParameterError):
        ExperimentConfig("compare_robin", beta=0.0)
    with pytest.raises(ParameterError):
        ExperimentConfig("eigen_convergence", m_eigs=21)
    with pytest.raises(ParameterError):
        ExperimentConfig(t_policy="fixed")
    assert ExperimentConfig(t_policy="balance").t_policy == "theorem_balance"


def test_parse_field():
    f = parse_field("sin(x) + y**2 + r")
    pts = np.array([[0.3, 0.4]])
    assert f(pts)[0] == pytest.approx(math.sin(0.3) + 0.16 + 0.5)
    assert np.all(parse_field("0")(np.ones((4, 3))) == 0)
    with pytest.raises(Exception):
        parse_field("__import__('os')")(pts)


def _disk_disc(n=684, c_d=8.0):
    cfg = ExperimentConfig(sizes=(n,), c_d=c_d)
    cloud = weighted_disk(n)
    stats, kernel = choose_kernel(cloud, cfg)
    return discretize(cloud, kernel, stats.fill_distance)


def test_zero_problem_gives_zero():
    disc = _disk_disc()
    zero = lambda x: 0 * x[:, 0]
    rep = solve_volume_constrained(disc, SourceField(zero, zero))
    assert np.max(np.abs(rep.solution)) <= 1e-10


def test_constrained_values_are_boundary_data():
    disc = _disk_disc()
    rep = solve_volume_constrained(disc, SourceField(manufactured_source, exact_solution))
    C = disc.partition.constrained_ids
    assert np.array_equal(rep.solution[C], exact_solution(disc.cloud.coords[C]))
    assert rep.constrained_count >= len(disc.cloud.boundary_ids)


def test_robin_penalty_limit():
    # beta -> infinity removes the boundary condition: the boundary error grows
    disc = _disk_disc()
    cloud = disc.cloud
    errs = []
    for beta in (1e-4, 1e12):
        u, _ = solve_robin(disc, SourceField(manufactured_source), beta, robin_data_for_exact(beta))
        b = cloud.boundary_ids
        errs.append(np.sqrt(np.mean((u[b] - exact_solution(cloud.coords[b])) ** 2)))
    assert errs[1] > 10 * errs[0]


def test_robin_error_small():
    disc = _disk_disc(2610)
    u, _ = solve_robin(disc, SourceField(manufactured_source), 1e-4, robin_data_for_exact(1e-4))
    assert 0.0428 / 3 <= robin_error(u, disc.cloud) <= 0.0428 * 3


def test_boundary_layer_diagnostic():
    cloud = weighted_disk(2610)
    vals = []
    for t in (0.04, 0.02, 0.01, 0.005):
        part = partition_domain(cloud, None, t)
        C = part.constrained_ids
        diff = exact_solution(cloud.coords[C]) - 1.0
        vals.append(np.sum(diff**2 * cloud.volume_weight[C]) / t**1.5)
    med = np.median(vals)
    assert all(med / 10 <= v <= med * 10 for v in vals)


def test_stage_errors_are_labelled(tmp_path):
    cfg = ExperimentConfig("single_solve", t_policy="fixed", t=10.0, out=str(tmp_path))
    path = tmp_path / "c.xyzb"
    save_cloud(weighted_disk(684), path)
    with pytest.raises(StageError, match="partition"):
        run_single_solve(cfg, path)


def test_single_solve_zero(tmp_path):
    path = tmp_path / "disk.xyzb"
    save_cloud(weighted_disk(684), path)
    cfg = ExperimentConfig("single_solve", cloud=str(path), out=str(tmp_path / "o"))
    rep, report = run(cfg)
    assert np.max(np.abs(rep.solution)) <= 1e-10
    rows = (tmp_path / "o" / "solution.csv").read_text().splitlines()
    assert rows[0] == "x0,x1,value" and len(rows) == 1 + report["n"]
    text = (tmp_path / "o" / "report.txt").read_text()
    assert "interior_count" in text and "cg_iterations" in text


def test_single_solve_estimates_missing_weights(tmp_path):
    from pimvc.pointcloud import sample_unit_disk

    path = tmp_path / "disk.xyzb"
    save_cloud(sample_unit_disk(684, 0), path)
    cfg = ExperimentConfig("single_solve", cloud=str(path), f="1", g="0", t_policy="fixed", t=0.01)
    rep, _ = run(cfg)
    assert np.all(rep.solution >= -1e-12)  # maximum principle
    assert rep.solution.max() > 0


def test_single_solve_closed_manifold(tmp_path, torus_cloud):
    path = tmp_path / "torus.xyzb"
    save_cloud(torus_cloud, path)
    cfg = ExperimentConfig("single_solve", cloud=str(path), f="x0", t_policy="fixed", t=0.2)
    rep, report = run(cfg)
    assert report["constrained_count"] == 0
    assert any("deflated" in n for n in rep.notes)
    assert abs(rep.solution @ torus_cloud.volume_weight) < 1e-10
    # u ~ cos(a): -Laplace of cos(a) = cos(a), so u correlates with the source
    assert np.corrcoef(rep.solution, torus_cloud.coords[:, 0])[0, 1] > 0.9


def test_single_solve_deterministic(tmp_path):
    path = tmp_path / "disk.xyzb"
    save_cloud(weighted_disk(684), path)
    blobs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        run(ExperimentConfig("single_solve", cloud=str(path), f="4", g="x*y", out=str(out)))
        blobs.append((out / "solution.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_convergence_csv_deterministic(tmp_path):
    blobs = []
    for k in range(2):
        weighted_disk.cache_clear()
        out = tmp_path / f"o{k}"
        rows = run(ExperimentConfig(sizes=(684, 1200), out=str(out), dump_history=True))
        blobs.append((out / "convergence.csv").read_bytes())
    assert blobs[0] == blobs[1]
    assert (tmp_path / "o0" / f"cg_history_{rows[0].n}.csv").exists()
    for r in rows:
        assert r.n > 0 and r.h > 0 and r.t > 0 and r.l2_error > 0 and r.cg_iters > 0
        assert r.interior_count > 0 and r.constrained_count >= r.boundary_count > 0


def test_eigen_csv(tmp_path):
    rows = run(ExperimentConfig("eigen_convergence", sizes=(684,), m_eigs=3, out=str(tmp_path)))
    assert [r.index for r in rows] == [1, 2, 3]
    text = (tmp_path / "eigen.csv").read_text().splitlines()
    assert text[0] == "n,t,index,computed,exact,rel_error,mass_used"
    assert len(text) == 4


def test_higher_eigenvalues_have_larger_errors():
    rows = run(ExperimentConfig("eigen_convergence", sizes=(2610,), m_eigs=10))
    err = [r.rel_error for r in rows]
    assert np.mean(err[5:]) >= np.mean(err[:5])
