"""Unit-disk experiments: Poisson convergence, Robin comparison, spectrum, single solves."""

from __future__ import annotations

import csv
import functools
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab, spilu, spsolve

from . import geometry
from .bessel import disk_dirichlet_eigenvalues
from .errors import ParameterError, PimError, StageError
from .kernel import KernelSpec, balance_constant, select_bandwidth
from .operator import (
    SolveReport,
    SourceField,
    assemble_load,
    assemble_mass,
    assemble_robin,
    assemble_stiffness,
    certify_diagonal_dominance,
    discrete_l2_error,
    kernel_matrices,
    partition_domain,
)
from .pointcloud import PointCloud, build_index, estimate_fill_distance, load_cloud, sample_unit_disk
from .solvers import CgConfig, cg_solve, min_ritz_value, smallest_eigenpairs

logger = logging.getLogger(__name__)

DISK_SIZES = (684, 2610, 10191, 40269)
EXPERIMENTS = ("poisson_convergence", "eigen_convergence", "compare_robin", "single_solve")


@dataclass
class ExperimentConfig:
    experiment: str = "poisson_convergence"
    sizes: tuple = DISK_SIZES
    seed: int = 0
    t_policy: str = "density"
    t: float | None = None
    c_b: float | str = 1.0
    c_d: float = 8.0
    beta: float = 1e-4
    m_eigs: int = 10
    out: str | None = None
    cloud: str | None = None
    cloud_format: str = "xyzb"
    f: str = "0"
    g: str = "0"
    cg_tol: float = 1e-10
    eig_tol: float = 1e-6
    m_neighbors: int = 20
    mass: str = "auto"
    certify: bool = True
    dump_history: bool = False
    dump_triplets: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ParameterError(f"unknown experiment {self.experiment!r}")
        self.sizes = tuple(int(s) for s in self.sizes)
        if list(self.sizes) != sorted(self.sizes):
            raise ParameterError("sizes must be ascending")
        if self.experiment == "compare_robin" and not self.beta > 0:
            raise ParameterError("beta must be positive")
        if not 1 <= self.m_eigs <= 20:
            raise ParameterError("m_eigs must lie in [1, 20]")
        if self.t_policy in ("balance", "theorem_balance"):
            self.t_policy = "theorem_balance"
        if self.t_policy not in ("theorem_balance", "fixed", "density"):
            raise ParameterError(f"unknown t policy {self.t_policy!r}")
        if self.c_b != "auto":
            self.c_b = float(self.c_b)
        if self.t_policy == "fixed" and self.t is None:
            raise ParameterError("t policy 'fixed' needs t")


@dataclass
class ConvergenceRow:
    n: int
    h: float
    t: float
    l2_error: float
    cg_iters: int
    interior_count: int
    constrained_count: int
    boundary_count: int = 0
    min_ritz: float = float("nan")
    spd_certified: bool = False
    robin_error: float = float("nan")


# ---------------------------------------------------------------------------
# Manufactured solution u = cos(2 pi r)
# ---------------------------------------------------------------------------

def _radius(x):
    x = np.atleast_2d(x)
    return np.sqrt(np.sum(x[:, :2] ** 2, axis=1))


def exact_solution(x):
    return np.cos(2.0 * math.pi * _radius(x))


def manufactured_source(x):
    """-Laplace of cos(2 pi r): 4 pi^2 cos(2 pi r) + 2 pi sin(2 pi r) / r."""
    r = _radius(x)
    two_pi = 2.0 * math.pi
    safe = np.where(r > 1e-12, r, 1.0)
    second = np.where(r > 1e-12, two_pi * np.sin(two_pi * safe) / safe, two_pi * two_pi)
    return two_pi * two_pi * np.cos(two_pi * r) + second


def exact_normal_derivative(x):
    """Outward normal derivative of cos(2 pi r) on circles centred at 0."""
    return -2.0 * math.pi * np.sin(2.0 * math.pi * _radius(x))


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PimError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc


def ensure_weights(cloud: PointCloud, m_neighbors=20) -> PointCloud:
    """Estimate missing weights; weights already present are kept."""
    if cloud.volume_weight is None:
        cloud = geometry.voronoi_volume_weights(cloud, m_neighbors)
    if cloud.boundary_weight is None and len(cloud.boundary_ids) >= 2 and cloud.intrinsic_dim == 2:
        cloud = geometry.boundary_measure_weights(cloud)
    return cloud


@functools.lru_cache(maxsize=16)
def weighted_disk(n_target: int, seed: int = 0, m_neighbors: int = 20) -> PointCloud:
    """Sampled unit disk with volume and boundary weights (cached per process)."""
    cloud = _stage("sample", sample_unit_disk, n_target, seed)
    return _stage("weights", ensure_weights, cloud, m_neighbors)


def resolve_balance_constant(cfg: ExperimentConfig) -> float:
    """``c_b`` for a refinement study; ``"auto"`` calibrates on the coarsest disk.

    Under ``t ~ h**(4/7)`` the samples per kernel ball grow with refinement,
    so meeting the minimum on the coarsest cloud meets it everywhere.
    """
    if cfg.c_b != "auto":
        return float(cfg.c_b)
    cloud = weighted_disk(cfg.sizes[0], cfg.seed, cfg.m_neighbors)
    return balance_constant(estimate_fill_distance(cloud))


def choose_kernel(cloud, cfg: ExperimentConfig, c_b=None):
    stats = _stage("fill-distance", estimate_fill_distance, cloud, build_index(cloud))
    c_b = cfg.c_b if c_b is None else c_b
    kernel = _stage("bandwidth", select_bandwidth, stats, cfg.t_policy, t=cfg.t, c_b=c_b,
                    c_d=cfg.c_d, k=cloud.intrinsic_dim)
    return stats, kernel


@dataclass
class Discretization:
    """Everything assembled for one cloud and bandwidth."""

    cloud: PointCloud
    kernel: KernelSpec
    partition: object
    W: object
    Wbar: object
    stiffness: object = None
    h: float = float("nan")
    notes: list = field(default_factory=list)


def discretize(cloud, kernel, h=float("nan")) -> Discretization:
    index = build_index(cloud)
    partition = _stage("partition", partition_domain, cloud, index, kernel.t)
    W, Wbar = _stage("kernel", kernel_matrices, cloud, kernel, index)
    A = _stage("assembly", assemble_stiffness, cloud, kernel, partition, W)
    return Discretization(cloud, kernel, partition, W, Wbar, A, h, list(kernel.warnings))


def solve_volume_constrained(disc: Discretization, source: SourceField, cfg=CgConfig()) -> SolveReport:
    """Solve the constrained system; constrained samples carry ``g``."""
    cloud, part = disc.cloud, disc.partition
    b = _stage("load", assemble_load, cloud, disc.kernel, part, source, disc.W, disc.Wbar)
    u = np.zeros(cloud.n)
    notes = []
    if len(part.constrained_ids):
        u[part.constrained_ids] = source.g_at(cloud.coords[part.constrained_ids])
    else:
        # closed manifold: constants span the kernel, solve on their complement
        V = np.asarray(cloud.volume_weight)
        b = b - V * (b.sum() / V.sum())
        notes.append("no constrained samples: constant nullspace deflated")
    x, rep = _stage("cg", cg_solve, disc.stiffness, b, cfg)
    if not len(part.constrained_ids):
        V = np.asarray(cloud.volume_weight)
        x = x - float(x @ V) / V.sum()
    u[part.interior_ids] = x
    return SolveReport(u, rep.iterations, rep.residual, len(part.interior_ids),
                       len(part.constrained_ids), rep.history, notes)


def solve_robin(disc: Discretization, source: SourceField, beta: float, robin_data=None):
    system = _stage("robin-assembly", assemble_robin, disc.cloud, disc.kernel, beta, disc.W, disc.Wbar)
    rhs = system.rhs(source, disc.cloud, robin_data)
    u = _stage("robin-solve", _sparse_lu, system.operator.matrix, rhs)
    return u, system


def _sparse_lu(M, rhs, tol=1e-10):
    """Solve the nonsymmetric Robin system.

    Small systems use a direct sparse LU. Larger ones use BiCGSTAB with an
    incomplete-LU preconditioner, falling back to LU if it stalls.
    """
    M = M.tocsc()
    if M.shape[0] > 5000:
        try:
            ilu = spilu(M, drop_tol=1e-2, fill_factor=2)
            prec = LinearOperator(M.shape, ilu.solve)
            u, info = bicgstab(M.tocsr(), rhs, M=prec, rtol=tol, maxiter=2000)
            if info == 0 and np.all(np.isfinite(u)):
                return u
            logger.warning("ILU-BiCGSTAB did not converge (info=%s); using sparse LU", info)
        except RuntimeError as exc:  # singular incomplete factor
            logger.warning("incomplete LU failed (%s); using sparse LU", exc)
    u = spsolve(M, rhs)
    if not np.all(np.isfinite(u)):
        raise ParameterError("Robin system is singular")
    return u


def robin_data_for_exact(beta):
    """Value of u + beta du/dn for the manufactured solution."""
    return lambda x: exact_solution(x) + beta * exact_normal_derivative(x)


def certify(disc: Discretization, seed=0):
    """(min Ritz value of the stiffness block, diagonal-dominance certificate)."""
    return (_stage("certify", min_ritz_value, disc.stiffness, 1e-6, seed),
            certify_diagonal_dominance(disc.stiffness))


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_rows(cfg, rows, name="convergence.csv"):
    if cfg.out is None:
        return
    header = [f.name for f in fields(ConvergenceRow)]
    write_csv(Path(cfg.out) / name, header, [[getattr(r, h) for h in header] for r in rows])


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _disk_row(cfg, n, with_robin=False, c_b=None):
    cloud = weighted_disk(n, cfg.seed, cfg.m_neighbors)
    stats, kernel = choose_kernel(cloud, cfg, c_b)
    disc = discretize(cloud, kernel, stats.fill_distance)
    source = SourceField(manufactured_source, exact_solution)
    rep = solve_volume_constrained(disc, source, CgConfig(tol=cfg.cg_tol))
    err = discrete_l2_error(rep.solution, exact_solution, cloud, disc.partition)
    row = ConvergenceRow(cloud.n, stats.fill_distance, kernel.t, err, rep.iterations,
                         rep.interior_count, rep.constrained_count, len(cloud.boundary_ids))
    if cfg.certify:
        row.min_ritz, row.spd_certified = certify(disc, cfg.seed)
    if with_robin:
        u, _ = solve_robin(disc, SourceField(manufactured_source), cfg.beta,
                           robin_data_for_exact(cfg.beta))
        row.robin_error = robin_error(u, cloud)
    if cfg.out is not None and cfg.dump_history:
        write_csv(Path(cfg.out) / f"cg_history_{cloud.n}.csv", ["iteration", "relative_residual"],
                  list(enumerate(rep.history)))
    if cfg.out is not None and cfg.dump_triplets:
        disc.stiffness.dump_triplets(Path(cfg.out) / f"stiffness_{cloud.n}.txt")
    logger.info("n=%d h=%.4g t=%.4g err=%.4g", row.n, row.h, row.t, row.l2_error)
    return row


def robin_error(u, cloud) -> float:
    """Volume-weighted RMS error of a Robin solution over all samples."""
    V = np.asarray(cloud.volume_weight)
    diff = u - exact_solution(cloud.coords)
    return float(math.sqrt(np.sum(diff * diff * V) / np.sum(V)))


def run_poisson_convergence(cfg: ExperimentConfig):
    """Volume-constrained solve of -Laplace u = f with u = cos(2 pi r) per disk size."""
    c_b = resolve_balance_constant(cfg) if cfg.t_policy == "theorem_balance" else None
    rows = [_disk_row(cfg, n, c_b=c_b) for n in cfg.sizes]
    _write_rows(cfg, rows)
    return rows


def run_compare_robin(cfg: ExperimentConfig):
    """Volume constraint and Robin penalty side by side on the same clouds."""
    c_b = resolve_balance_constant(cfg) if cfg.t_policy == "theorem_balance" else None
    rows = [_disk_row(cfg, n, with_robin=True, c_b=c_b) for n in cfg.sizes]
    _write_rows(cfg, rows)
    return rows


@dataclass
class EigenRow:
    n: int
    t: float
    index: int
    computed: float
    exact: float
    rel_error: float
    mass_used: str


def run_eigen_convergence(cfg: ExperimentConfig):
    """Smallest Dirichlet eigenvalues per disk size against squared Bessel zeros."""
    reference = disk_dirichlet_eigenvalues(cfg.m_eigs)
    c_b = resolve_balance_constant(cfg) if cfg.t_policy == "theorem_balance" else None
    rows = []
    for n in cfg.sizes:
        cloud = weighted_disk(n, cfg.seed, cfg.m_neighbors)
        stats, kernel = choose_kernel(cloud, cfg, c_b)
        disc = discretize(cloud, kernel, stats.fill_distance)
        B = _stage("mass", assemble_mass, cloud, kernel, disc.partition, disc.Wbar)
        if cfg.m_eigs > disc.stiffness.dim:
            raise StageError("eigen", ParameterError("too few interior samples"))
        rep = _stage("eigen", smallest_eigenpairs, disc.stiffness, B, cfg.m_eigs, cfg.eig_tol,
                     cfg.seed, mass=cfg.mass)
        for i, (pair, (lam, _, _)) in enumerate(zip(rep.pairs, reference), start=1):
            rows.append(EigenRow(cloud.n, kernel.t, i, pair.value, lam,
                                 abs(pair.value - lam) / lam, rep.mass_used))
    if cfg.out is not None:
        header = [f.name for f in fields(EigenRow)]
        write_csv(Path(cfg.out) / "eigen.csv", header, [[getattr(r, h) for h in header] for r in rows])
    return rows


_EXPR_NAMES = {name: getattr(np, name) for name in
               ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "arctan2", "sinh", "cosh", "tanh",
                "where", "pi")}


def parse_field(expr: str):
    """Vectorised field from an expression in ``x``, ``y``, ``z``, ``x0..`` and ``r``."""
    code = compile(expr, "<field>", "eval")

    def fn(pts):
        pts = np.atleast_2d(pts)
        env = dict(_EXPR_NAMES)
        for j in range(pts.shape[1]):
            env[f"x{j}"] = pts[:, j]
        for j, name in enumerate("xyz"[:pts.shape[1]]):
            env[name] = pts[:, j]
        env["r"] = np.sqrt(np.sum(pts**2, axis=1))
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(pts),))

    return fn


def run_single_solve(cfg: ExperimentConfig, cloud_path=None, f_spec=None, g_spec=None):
    """Solve on an arbitrary cloud and write ``solution.csv`` and ``report.txt``."""
    cloud_path = cloud_path or cfg.cloud
    if cloud_path is None:
        raise ParameterError("single solve needs a cloud file")
    cloud = _stage("load", load_cloud, cloud_path, cfg.cloud_format)
    cloud = _stage("weights", ensure_weights, cloud, cfg.m_neighbors)
    stats, kernel = choose_kernel(cloud, cfg)
    disc = discretize(cloud, kernel, stats.fill_distance)
    g_expr = g_spec if g_spec is not None else cfg.g
    source = SourceField(parse_field(f_spec if f_spec is not None else cfg.f),
                         None if g_expr.strip() == "0" else parse_field(g_expr))
    rep = solve_volume_constrained(disc, source, CgConfig(tol=cfg.cg_tol))
    report = {
        "n": cloud.n,
        "h": stats.fill_distance,
        "t": kernel.t,
        "interior_count": rep.interior_count,
        "constrained_count": rep.constrained_count,
        "cg_iterations": rep.iterations,
        "cg_residual": rep.residual,
    }
    notes = list(disc.notes) + list(rep.notes)
    if cfg.out is not None:
        out = Path(cfg.out)
        d = cloud.ambient_dim
        write_csv(out / "solution.csv", [f"x{j}" for j in range(d)] + ["value"],
                  [list(cloud.coords[i]) + [rep.solution[i]] for i in range(cloud.n)])
        lines = [f"{k} = {_fmt(v)}" for k, v in report.items()] + [f"note = {s}" for s in notes]
        (out / "report.txt").write_text("\n".join(lines) + "\n")
        if cfg.dump_history:
            write_csv(out / "cg_history.csv", ["iteration", "relative_residual"],
                      list(enumerate(rep.history)))
    return rep, report


def run(cfg: ExperimentConfig):
    start = time.perf_counter()
    if cfg.experiment == "poisson_convergence":
        result = run_poisson_convergence(cfg)
    elif cfg.experiment == "compare_robin":
        result = run_compare_robin(cfg)
    elif cfg.experiment == "eigen_convergence":
        result = run_eigen_convergence(cfg)
    else:
        result = run_single_solve(cfg)
    logger.info("%s finished in %.1fs", cfg.experiment, time.perf_counter() - start)
    return result


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
