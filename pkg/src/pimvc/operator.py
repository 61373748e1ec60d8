"""Domain partition and sparse assembly of the volume-constrained system.

Rows of the raw point-integral equations carry the weight ``V_j`` on the
column side only. Every operator here is scaled row-wise by ``V_i``, which
makes the interior stiffness block symmetric with the quadratic form

    u^T A u = 1/(2t) sum_ij R_t(p_i, p_j) (u_i - u_j)^2 V_i V_j
              + 1/t sum_{i in M'} u_i^2 V_i sum_{j in V_t} R_t(p_i, p_j) V_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import CoverageError, ParameterError
from .kernel import KernelSpec
from .pointcloud import NeighborIndex, PointCloud, build_index

__all__ = [
    "DomainPartition",
    "SparseOperator",
    "SourceField",
    "SolveReport",
    "partition_domain",
    "kernel_matrices",
    "assemble_stiffness",
    "assemble_load",
    "assemble_mass",
    "lumped",
    "RobinSystem",
    "assemble_robin",
    "interpolate",
    "discrete_l2_error",
    "coercivity_probe",
    "certify_diagonal_dominance",
]


@dataclass(frozen=True)
class DomainPartition:
    """Index sets of free (interior) and constrained samples."""

    interior_ids: np.ndarray
    constrained_ids: np.ndarray
    t_used: float

    @property
    def n(self) -> int:
        return len(self.interior_ids) + len(self.constrained_ids)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.interior_ids] = True
        return mask


@dataclass(frozen=True)
class SparseOperator:
    """Sparse matrix acting on the samples listed in ``ids``."""

    matrix: sparse.csr_matrix
    ids: np.ndarray
    symmetric: bool = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x

    def diagonal(self):
        return self.matrix.diagonal()

    def triplets(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def dump_triplets(self, path) -> None:
        """Write ``row col value`` lines (local indices) for cross-checking."""
        row, col, val = self.triplets()
        with Path(path).open("w") as fh:
            for r, c, v in zip(row, col, val):
                fh.write(f"{r} {c} {v!r}\n")


@dataclass(frozen=True)
class SourceField:
    """Right-hand side ``f`` and constraint data ``g`` (``None`` means zero).

    Both are vectorised callables mapping an (m, d) array to m values.
    """

    f: Callable
    g: Callable | None = None

    def f_at(self, pts):
        return _evaluate(self.f, pts, "f")

    def g_at(self, pts):
        if self.g is None:
            return np.zeros(len(pts))
        return _evaluate(self.g, pts, "g")


def _evaluate(fn, pts, name):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    values = np.broadcast_to(np.asarray(fn(pts), dtype=float), (len(pts),)).copy()
    if not np.all(np.isfinite(values)):
        raise ParameterError(f"{name} is not finite on all samples")
    return values


@dataclass
class SolveReport:
    """Outcome of a solve: the full solution vector plus solver metadata."""

    solution: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    interior_count: int = 0
    constrained_count: int = 0
    history: list = field(default_factory=list)
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Partition
# ---------------------------------------------------------------------------

def partition_domain(cloud: PointCloud, index: NeighborIndex | None, t: float) -> DomainPartition:
    """Split samples into the free set and the constrained collar.

    A sample is constrained when it lies within ``2 sqrt(t)`` of some
    boundary-flagged sample (boundary samples themselves included). Clouds
    without boundary samples are entirely free.
    """
    if not t > 0:
        raise ParameterError("t must be positive")
    bids = cloud.boundary_ids
    constrained = np.zeros(cloud.n, dtype=bool)
    if len(bids):
        bindex = NeighborIndex(cloud.coords[bids])
        constrained = bindex.nearest_distance(cloud.coords) <= 2.0 * math.sqrt(t)
        constrained[bids] = True
    interior = np.flatnonzero(~constrained)
    if len(interior) == 0:
        raise ParameterError("bandwidth too large for domain: no interior samples left")
    return DomainPartition(interior, np.flatnonzero(constrained), float(t))


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def kernel_matrices(cloud: PointCloud, kernel: KernelSpec, index: NeighborIndex | None = None):
    """Full n x n sparse matrices of R_t(p_i, p_j) and Rbar_t(p_i, p_j).

    Only pairs closer than the support radius are enumerated; entries that
    evaluate to exactly zero are not stored.
    """
    index = index or build_index(cloud)
    n = cloud.n
    i, j, dist = index.pairs(kernel.support_radius)
    diag = np.arange(n)
    rows = np.concatenate([i, j, diag])
    cols = np.concatenate([j, i, diag])
    dist = np.concatenate([dist, dist, np.zeros(n)])
    out = []
    for values in (kernel.rt_of_distance(dist), kernel.rbart_of_distance(dist)):
        keep = values != 0
        mat = sparse.csr_matrix((values[keep], (rows[keep], cols[keep])), shape=(n, n))
        mat.sort_indices()
        out.append(mat)
    return out[0], out[1]


def _check_inputs(cloud, kernel, partition):
    if cloud.volume_weight is None:
        raise ParameterError("volume weights are missing; estimate or load them first")
    if partition is not None and not math.isclose(partition.t_used, kernel.t, rel_tol=1e-12):
        raise ParameterError(
            f"partition built with t={partition.t_used} but kernel has t={kernel.t}")
    if partition is not None and partition.n != cloud.n:
        raise ParameterError("partition does not match the cloud")


def _weighted(mat, V):
    """V_i * M_ij * V_j with the weight product formed symmetrically."""
    coo = mat.tocoo()
    data = coo.data * (V[coo.row] * V[coo.col])
    out = sparse.csr_matrix((data, (coo.row, coo.col)), shape=mat.shape)
    out.sort_indices()
    return out


def assemble_stiffness(cloud, kernel, partition, W=None) -> SparseOperator:
    """Symmetric interior block of the volume-constrained operator.

    Row ``i`` is ``V_i / t * (delta_ij * sum_l R_t(p_i, p_l) V_l - R_t(p_i, p_j) V_j)``
    over interior ``j``; couplings to constrained samples stay on the
    diagonal through the full degree sum.
    """
    _check_inputs(cloud, kernel, partition)
    if W is None:
        W, _ = kernel_matrices(cloud, kernel)
    V = np.asarray(cloud.volume_weight)
    I = partition.interior_ids
    t = kernel.t
    degree = W @ V
    block = _weighted(W[I][:, I], V[I])
    A = sparse.diags(V[I] * degree[I] / t) - block / t
    A = sparse.csr_matrix(A)
    A.eliminate_zeros()
    A.sort_indices()
    return SparseOperator(A, I, symmetric=True)


def assemble_load(cloud, kernel, partition, source: SourceField, W=None, Wbar=None) -> np.ndarray:
    """Right-hand side on the interior samples.

    ``b_i = V_i * (sum_j Rbar_t(p_i, p_j) f(p_j) V_j
    + 1/t * sum_{j in V_t} R_t(p_i, p_j) g(p_j) V_j)``.
    """
    _check_inputs(cloud, kernel, partition)
    if W is None or Wbar is None:
        W, Wbar = kernel_matrices(cloud, kernel)
    V = np.asarray(cloud.volume_weight)
    I, C = partition.interior_ids, partition.constrained_ids
    f = source.f_at(cloud.coords)
    b = Wbar[I] @ (f * V)
    if len(C) and source.g is not None:
        g = source.g_at(cloud.coords[C])
        b = b + (W[I][:, C] @ (g * V[C])) / kernel.t
    return V[I] * b


def assemble_mass(cloud, kernel, partition, Wbar=None) -> SparseOperator:
    """Interior block ``B_ij = V_i Rbar_t(p_i, p_j) V_j``."""
    _check_inputs(cloud, kernel, partition)
    if Wbar is None:
        _, Wbar = kernel_matrices(cloud, kernel)
    V = np.asarray(cloud.volume_weight)
    I = partition.interior_ids
    B = _weighted(Wbar[I][:, I], V[I])
    B.eliminate_zeros()
    return SparseOperator(B, I, symmetric=True)


def lumped(op: SparseOperator) -> SparseOperator:
    """Row-sum diagonal version of ``op``."""
    d = np.asarray(op.matrix.sum(axis=1)).ravel()
    return SparseOperator(sparse.csr_matrix(sparse.diags(d)), op.ids, symmetric=True)


@dataclass(frozen=True)
class RobinSystem:
    """Full-cloud system of the Robin-penalty formulation.

    ``operator`` is ``diffusion + boundary``; the boundary part alone is kept
    for diagnostics. The matrix is not symmetric: the penalty couples rows
    weighted by ``V_i`` to columns weighted by ``S_j``.
    """

    operator: SparseOperator
    diffusion: sparse.csr_matrix
    boundary: sparse.csr_matrix
    beta: float
    _Wbar: sparse.csr_matrix
    _V: np.ndarray
    _S: np.ndarray

    def rhs(self, source: SourceField, cloud: PointCloud, robin_data: Callable | None = None):
        """Load vector; ``robin_data`` is the value of ``u + beta du/dn`` on the boundary."""
        V = self._V
        b = self._Wbar @ (source.f_at(cloud.coords) * V)
        if robin_data is not None:
            gvals = np.zeros(cloud.n)
            bids = cloud.boundary_ids
            gvals[bids] = _evaluate(robin_data, cloud.coords[bids], "robin data")
            b = b + (2.0 / self.beta) * (self._Wbar @ (gvals * self._S))
        return V * b


def assemble_robin(cloud, kernel, beta, W=None, Wbar=None) -> RobinSystem:
    """Row-scaled Robin system over all samples (no volume constraint).

    Row ``i``: ``V_i [1/t sum_j R_t(p_i,p_j)(u_i - u_j) V_j
    + 2/beta sum_{j on boundary} Rbar_t(p_i,p_j) u_j S_j]``.
    """
    _check_inputs(cloud, kernel, None)
    if cloud.boundary_weight is None:
        raise ParameterError("boundary weights are missing")
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if W is None or Wbar is None:
        W, Wbar = kernel_matrices(cloud, kernel)
    V = np.asarray(cloud.volume_weight)
    S = np.asarray(cloud.boundary_weight)
    t = kernel.t
    diffusion = sparse.csr_matrix(sparse.diags(V * (W @ V) / t) - _weighted(W, V) / t)
    boundary = sparse.csr_matrix(sparse.diags(V) @ Wbar @ sparse.diags(S)) * (2.0 / beta)
    boundary.eliminate_zeros()
    total = sparse.csr_matrix(diffusion + boundary)
    total.sort_indices()
    op = SparseOperator(total, np.arange(cloud.n), symmetric=False)
    return RobinSystem(op, diffusion, boundary, float(beta), Wbar, V, S)


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------

def interpolate(report: SolveReport, cloud, kernel, partition, source: SourceField | None = None):
    """Continuous extension of a discrete solution.

    Away from the collar the value is a kernel-weighted average of the
    samples corrected by the source term; inside the collar (within
    ``2 sqrt(t)`` of a boundary sample) it is the constraint value ``g``.
    Returns a vectorised callable on (m, d) arrays.
    """
    _check_inputs(cloud, kernel, partition)
    u = np.asarray(report.solution, dtype=float)
    if u.shape != (cloud.n,):
        raise ParameterError("solution must hold one value per sample")
    V = np.asarray(cloud.volume_weight)
    index = build_index(cloud)
    fV = (source.f_at(cloud.coords) if source is not None else np.zeros(cloud.n)) * V
    uV = u * V
    bids = cloud.boundary_ids
    bindex = NeighborIndex(cloud.coords[bids]) if len(bids) else None
    radius = kernel.support_radius
    t = kernel.t

    def u_th(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(x))
        in_collar = np.zeros(len(x), dtype=bool)
        if bindex is not None:
            in_collar = bindex.nearest_distance(x) <= radius
        if in_collar.any():
            out[in_collar] = source.g_at(x[in_collar]) if source is not None else 0.0
        for row in np.flatnonzero(~in_collar):
            nb = index.query(x[row], radius)
            dist = np.linalg.norm(cloud.coords[nb] - x[row], axis=1)
            rt = kernel.rt_of_distance(dist)
            w = float(rt @ V[nb])
            if w == 0:
                raise CoverageError(f"point {x[row]} is not covered by any kernel support")
            out[row] = (rt @ uV[nb] + t * (kernel.rbart_of_distance(dist) @ fV[nb])) / w
        return out

    return u_th


def discrete_l2_error(u, exact, cloud, partition) -> float:
    """Volume-weighted RMS of ``u - exact`` over the interior samples."""
    I = partition.interior_ids
    if len(I) == 0:
        raise ParameterError("empty interior")
    if cloud.volume_weight is None:
        raise ParameterError("volume weights are missing")
    V = np.asarray(cloud.volume_weight)[I]
    ref = _evaluate(exact, cloud.coords[I], "exact solution")
    diff = np.asarray(u, dtype=float)[I] - ref
    return float(math.sqrt(np.sum(diff * diff * V) / np.sum(V)))


def coercivity_probe(cloud, kernel, partition, trials=8, seed=0, A=None, smoothing=10) -> float:
    """Smallest observed ratio ``u^T A u / sum u_i^2 V_i`` over trial vectors.

    Trial vectors vanish on the collar. Half of them are Gaussian noise; the
    other half are noise smoothed by ``smoothing`` sweeps of kernel averaging
    so that the low end of the spectrum is probed as well.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if A is None:
        A = assemble_stiffness(cloud, kernel, partition)
    V = np.asarray(cloud.volume_weight)[partition.interior_ids]
    rng = np.random.default_rng(seed)
    M = A.matrix
    # kernel averaging on the interior graph: x -> (D - A) x / D, D = diag(A)
    d = M.diagonal()
    off = sparse.diags(d) - M
    best = math.inf
    for trial in range(trials):
        u = rng.standard_normal(A.dim)
        if trial % 2 == 1:
            for _ in range(smoothing):
                u = (off @ u) / d
        norm = float(np.sum(u * u * V))
        if norm == 0:
            continue
        best = min(best, float(u @ (M @ u)) / norm)
    return best


def certify_diagonal_dominance(A: SparseOperator) -> bool:
    """True when ``A`` is provably symmetric positive definite.

    Holds for a symmetric matrix with positive diagonal that is weakly
    diagonally dominant and has, on every connected component of its
    sparsity graph, at least one strictly dominant row.
    """
    M = A.matrix
    if abs(M - M.T).max() > 1e-12 * abs(M).max():
        return False
    d = M.diagonal()
    if np.any(d <= 0):
        return False
    offsum = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(d)
    slack = d - offsum
    tol = 1e-12 * d
    if np.any(slack < -tol):
        return False
    strict = slack > tol
    ncomp, labels = csgraph.connected_components(M, directed=False)
    return bool(np.all(np.bincount(labels, weights=strict, minlength=ncomp) > 0))
