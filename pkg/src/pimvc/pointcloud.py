"""Point-cloud data model, text I/O, radius search and disk sampling."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError, ParameterError

__all__ = [
    "PointCloud",
    "NeighborIndex",
    "SamplingStats",
    "load_cloud",
    "save_cloud",
    "build_index",
    "sample_unit_disk",
    "estimate_fill_distance",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Samples of a k-dimensional manifold embedded in R^d.

    Parameters
    ----------
    coords : array_like, shape (n, d)
        Ambient coordinates.
    intrinsic_dim : int
        Manifold dimension k, ``1 <= k <= d``.
    boundary_flag : array_like of bool, shape (n,), optional
        True for samples lying on the manifold boundary.
    volume_weight : array_like, shape (n,), optional
        Quadrature weights V_i of the manifold measure.
    boundary_weight : array_like, shape (n,), optional
        Quadrature weights S_i of the boundary measure. Must vanish on
        points that are not boundary-flagged.

    Notes
    -----
    Instances are immutable: the arrays are copied and marked read-only.
    Use :meth:`with_weights` to obtain an updated cloud.
    """

    coords: np.ndarray
    intrinsic_dim: int
    boundary_flag: np.ndarray | None = None
    volume_weight: np.ndarray | None = None
    boundary_weight: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[0] < 1:
            raise ParameterError("coords must be a nonempty (n, d) array")
        n, d = coords.shape
        k = int(self.intrinsic_dim)
        if not 1 <= k <= d:
            raise ParameterError(f"intrinsic_dim must lie in [1, {d}], got {k}")
        if not np.all(np.isfinite(coords)):
            raise ParameterError("coordinates must be finite")

        flag = self.boundary_flag
        flag = np.zeros(n, dtype=bool) if flag is None else np.asarray(flag, dtype=bool)
        if flag.shape != (n,):
            raise ParameterError("boundary_flag must have shape (n,)")

        vw = self.volume_weight
        if vw is not None:
            vw = np.asarray(vw, dtype=float)
            if vw.shape != (n,):
                raise ParameterError("volume_weight must have shape (n,)")
            if not np.all(np.isfinite(vw)) or np.any(vw < 0):
                raise ParameterError("volume weights must be finite and nonnegative")
            vw = _frozen(vw, float)

        bw = self.boundary_weight
        if bw is not None:
            bw = np.asarray(bw, dtype=float)
            if bw.shape != (n,):
                raise ParameterError("boundary_weight must have shape (n,)")
            if not np.all(np.isfinite(bw)) or np.any(bw < 0):
                raise ParameterError("boundary weights must be finite and nonnegative")
            if np.any(bw[~flag] != 0):
                raise ParameterError("boundary weights are only defined on boundary points")
            bw = _frozen(bw, float)

        object.__setattr__(self, "coords", _frozen(coords, float))
        object.__setattr__(self, "intrinsic_dim", k)
        object.__setattr__(self, "boundary_flag", _frozen(flag, bool))
        object.__setattr__(self, "volume_weight", vw)
        object.__setattr__(self, "boundary_weight", bw)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.coords.shape[1]

    @property
    def boundary_ids(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_flag)

    def with_weights(self, volume_weight=None, boundary_weight=None) -> "PointCloud":
        """Return a copy carrying the given weights (``None`` keeps current)."""
        return dataclasses.replace(
            self,
            volume_weight=self.volume_weight if volume_weight is None else volume_weight,
            boundary_weight=self.boundary_weight if boundary_weight is None else boundary_weight,
        )


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _parse_header(line, lineno):
    parts = line[1:].split()
    if len(parts) != 3 or parts[0] != "dim":
        raise FormatError(f"malformed header {line.strip()!r}, expected '#dim d k'", lineno)
    try:
        return int(parts[1]), int(parts[2])
    except ValueError:
        raise FormatError("header dimensions must be integers", lineno) from None


def _float(text, lineno):
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"cannot parse number {text!r}", lineno) from None
    if not math.isfinite(value):
        raise FormatError(f"non-finite value {text!r}", lineno)
    return value


def _flag(text, lineno):
    value = _float(text, lineno)
    if value not in (0.0, 1.0):
        raise FormatError(f"boundary flag must be 0 or 1, got {text!r}", lineno)
    return value == 1.0


def _assemble(d, k, rows, ncols, lineno_of_last):
    if not rows:
        raise FormatError("file contains no samples", lineno_of_last)
    coords = np.array([r[:d] for r in rows], dtype=float)
    flag = np.array([r[d] for r in rows], dtype=bool)
    vw = np.array([r[d + 1] for r in rows], dtype=float) if ncols >= d + 2 else None
    bw = np.array([r[d + 2] for r in rows], dtype=float) if ncols >= d + 3 else None
    if bw is not None:
        bw = np.where(flag, bw, 0.0)
    try:
        return PointCloud(coords, k, flag, vw, bw)
    except ParameterError as exc:
        raise FormatError(str(exc)) from exc


def _load_xyzb(text):
    d = k = None
    rows = []
    ncols = None
    lineno = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if stripped[1:].split()[:1] == ["dim"]:
                d, k = _parse_header(stripped, lineno)
            continue
        if d is None:
            raise FormatError("missing '#dim d k' header before data", lineno)
        fields = stripped.split()
        if ncols is None:
            ncols = len(fields)
            if not d + 1 <= ncols <= d + 3:
                raise FormatError(f"expected {d + 1} to {d + 3} columns, got {ncols}", lineno)
        elif len(fields) != ncols:
            raise FormatError(f"inconsistent column count {len(fields)} (expected {ncols})", lineno)
        row = [_float(x, lineno) for x in fields[:d]]
        row.append(_flag(fields[d], lineno))
        row.extend(_float(x, lineno) for x in fields[d + 1:])
        rows.append(row)
    if d is None:
        raise FormatError("missing '#dim d k' header", lineno or None)
    return _assemble(d, k, rows, ncols or d + 1, lineno)


def _load_csv(text):
    lines = text.splitlines()
    k = None
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            if line[1:].split()[:1] == ["dim"]:
                _, k = _parse_header(line, i + 1)
            body_start = i + 1
        else:
            break
    reader = csv.reader(lines[body_start:])
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("missing CSV header", body_start + 1) from None
    xcols = [h for h in header if h.startswith("x")]
    d = len(xcols)
    if d == 0 or xcols != [f"x{j}" for j in range(d)] or "boundary" not in header:
        raise FormatError("CSV header must contain x0..x{d-1} and boundary", body_start + 1)
    want = xcols + ["boundary"] + [c for c in ("volume", "bweight") if c in header]
    if "bweight" in header and "volume" not in header:
        raise FormatError("bweight column requires a volume column", body_start + 1)
    pos = [header.index(c) for c in want]
    rows = []
    lineno = body_start + 1
    for offset, fields in enumerate(reader):
        lineno = body_start + 2 + offset
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise FormatError(f"inconsistent column count {len(fields)} (expected {len(header)})", lineno)
        row = [_float(fields[p], lineno) for p in pos[:d]]
        row.append(_flag(fields[pos[d]], lineno))
        row.extend(_float(fields[p], lineno) for p in pos[d + 1:])
        rows.append(row)
    return _assemble(d, d if k is None else k, rows, len(want), lineno)


def load_cloud(path, format="xyzb") -> PointCloud:
    """Read a point cloud from a text file.

    Parameters
    ----------
    path : str or Path
        File to read.
    format : {"xyzb", "csv"}
        ``xyzb``: whitespace separated rows ``x1 .. xd flag [V] [S]`` after a
        ``#dim d k`` header. ``csv``: columns ``x0..x{d-1}, boundary`` and
        optionally ``volume``, ``bweight``; an optional leading ``#dim d k``
        comment sets the intrinsic dimension (default ``k = d``).

    Raises
    ------
    FormatError
        On any parse failure, with the offending line number when known.
    """
    text = Path(path).read_text()
    if format == "xyzb":
        return _load_xyzb(text)
    if format == "csv":
        return _load_csv(text)
    raise ParameterError(f"unknown cloud format {format!r}")


def save_cloud(cloud: PointCloud, path, format="xyzb") -> None:
    """Write ``cloud`` so that :func:`load_cloud` reproduces it bit-exactly."""
    d = cloud.ambient_dim
    has_v = cloud.volume_weight is not None
    has_s = cloud.boundary_weight is not None
    if has_s and not has_v:
        raise ParameterError("cannot store boundary weights without volume weights")
    buf = io.StringIO()
    buf.write(f"#dim {d} {cloud.intrinsic_dim}\n")
    if format == "csv":
        cols = [f"x{j}" for j in range(d)] + ["boundary"]
        cols += ["volume"] * has_v + ["bweight"] * has_s
        buf.write(",".join(cols) + "\n")
        sep = ","
    elif format == "xyzb":
        sep = " "
    else:
        raise ParameterError(f"unknown cloud format {format!r}")
    for i in range(cloud.n):
        fields = [repr(float(x)) for x in cloud.coords[i]]
        fields.append("1" if cloud.boundary_flag[i] else "0")
        if has_v:
            fields.append(repr(float(cloud.volume_weight[i])))
        if has_s:
            fields.append(repr(float(cloud.boundary_weight[i])))
        buf.write(sep.join(fields) + "\n")
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------

class NeighborIndex:
    """Fixed-radius and k-nearest-neighbour search over a point set."""

    def __init__(self, coords):
        self.coords = np.asarray(coords, dtype=float)
        self._tree = cKDTree(self.coords)

    def __len__(self):
        return self.coords.shape[0]

    def query(self, x, r) -> np.ndarray:
        """Sorted indices ``i`` with ``|p_i - x| <= r``."""
        ids = self._tree.query_ball_point(np.asarray(x, dtype=float), r)
        return np.array(sorted(ids), dtype=np.intp)

    def pairs(self, r):
        """All unordered pairs ``i < j`` closer than ``r``.

        Returns
        -------
        i, j : ndarray of int
        dist : ndarray of float
            Euclidean distances of the pairs.
        """
        pr = self._tree.query_pairs(r, output_type="ndarray")
        if len(pr) == 0:
            empty = np.empty(0, dtype=np.intp)
            return empty, empty, np.empty(0)
        order = np.lexsort((pr[:, 1], pr[:, 0]))
        pr = pr[order]
        dist = np.linalg.norm(self.coords[pr[:, 0]] - self.coords[pr[:, 1]], axis=1)
        return pr[:, 0].astype(np.intp), pr[:, 1].astype(np.intp), dist

    def knn(self, x, k):
        """Distances and indices of the ``k`` nearest samples to each row of ``x``."""
        return self._tree.query(np.asarray(x, dtype=float), k=k)

    def nearest_distance(self, x):
        """Distance from each row of ``x`` to the closest sample."""
        return self._tree.query(np.asarray(x, dtype=float), k=1)[0]


def build_index(cloud: PointCloud) -> NeighborIndex:
    return NeighborIndex(cloud.coords)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingStats:
    """Resolution summary of a cloud.

    ``fill_distance`` is the largest nearest-neighbour distance and stands in
    for the sampling resolution h; ``min_spacing`` is the smallest one.
    """

    fill_distance: float
    min_spacing: float
    mean_spacing: float
    n_points: int


def estimate_fill_distance(cloud: PointCloud, index: NeighborIndex | None = None) -> SamplingStats:
    """Nearest-distinct-neighbour statistics of ``cloud``."""
    if cloud.n < 2:
        raise ParameterError("fill distance needs at least 2 points")
    index = index or build_index(cloud)
    k = 2
    while True:
        dist, _ = index.knn(cloud.coords, min(k, cloud.n))
        dist = np.atleast_2d(dist)
        positive = np.where(dist > 0, dist, np.inf)
        nearest = positive.min(axis=1)
        unresolved = ~np.isfinite(nearest)
        if not unresolved.any():
            break
        if k >= cloud.n:
            raise ParameterError("all points coincide; fill distance undefined")
        k *= 2
    return SamplingStats(
        fill_distance=float(nearest.max()),
        min_spacing=float(nearest.min()),
        mean_spacing=float(nearest.mean()),
        n_points=cloud.n,
    )


def sample_unit_disk(n_target: int, seed: int = 0, jitter: float = 0.15) -> PointCloud:
    """Quasi-uniform, seed-reproducible sampling of the closed unit disk.

    Points sit on ``K`` concentric rings of radius ``j/K`` plus the centre.
    Ring ``j`` receives a number of points proportional to its circumference,
    which makes every annulus carry points in proportion to its area. Interior
    rings get a random phase and a small radial/angular jitter; the outermost
    ring lies exactly on the unit circle and is flagged as boundary.

    The returned cloud has ``k = d = 2`` and no weights.
    """
    if n_target < 16:
        raise ParameterError("n_target must be at least 16")
    if not 0 <= jitter < 0.5:
        raise ParameterError("jitter must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    K = max(2, int(round((-1.0 + math.sqrt(1.0 + 4.0 * (n_target - 1) / math.pi)) / 2.0)))
    scale = (n_target - 1) / (math.pi * K * (K + 1))
    dr = 1.0 / K

    blocks = [np.zeros((1, 2))]
    flags = [np.zeros(1, dtype=bool)]
    for j in range(1, K + 1):
        m = max(3, int(round(scale * 2.0 * math.pi * j)))
        phase = rng.random()
        base = 2.0 * math.pi * (np.arange(m) + phase) / m
        if j < K:
            r = j * dr + jitter * dr * (rng.random(m) - 0.5)
            theta = base + jitter * (2.0 * math.pi / m) * (rng.random(m) - 0.5)
        else:
            r = np.ones(m)
            theta = base
        blocks.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        flags.append(np.full(m, j == K))
    return PointCloud(np.vstack(blocks), 2, np.concatenate(flags))
