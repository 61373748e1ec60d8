"""Per-point integration weights estimated from raw coordinates.

Volume weights are the areas of Voronoi cells computed in an estimated
tangent plane from a local Delaunay triangulation. Boundary weights are
half the chord lengths to the two neighbouring boundary samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import DegenerateGeometryError, ParameterError
from .pointcloud import PointCloud, build_index

__all__ = [
    "TangentFrame",
    "estimate_tangent_frame",
    "voronoi_volume_weights",
    "boundary_measure_weights",
    "clip_polygon",
    "polygon_area",
]

_CIRCLE_SIDES = 96


@dataclass(frozen=True)
class TangentFrame:
    origin: int
    basis: np.ndarray  # (k, d), orthonormal rows


def _frame_from_neighbors(points, k, origin):
    centered = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size < k or s[0] == 0 or s[k - 1] <= 1e-10 * s[0]:
        raise DegenerateGeometryError(f"neighbourhood of point {origin} is rank deficient")
    return vt[:k]


def estimate_tangent_frame(cloud: PointCloud, i: int, m_neighbors: int, index=None) -> TangentFrame:
    """Principal-component estimate of the tangent space at sample ``i``.

    The ``m_neighbors`` nearest other samples are centred on their mean and
    the top ``k`` right singular vectors span the tangent space.
    """
    k = cloud.intrinsic_dim
    if not k + 1 <= m_neighbors <= cloud.n - 1:
        raise ParameterError(f"m_neighbors must lie in [{k + 1}, {cloud.n - 1}]")
    index = index or build_index(cloud)
    _, nb = index.knn(cloud.coords[i], m_neighbors + 1)
    nb = [j for j in np.atleast_1d(nb) if j != i][:m_neighbors]
    basis = _frame_from_neighbors(cloud.coords[nb], k, i)
    return TangentFrame(origin=int(i), basis=basis)


def polygon_area(poly) -> float:
    """Shoelace area of a simple polygon given as an (m, 2) vertex array."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon(poly, normal, offset):
    """Clip a convex polygon to the half-plane ``normal . x <= offset``."""
    if len(poly) == 0:
        return poly
    s = poly @ normal - offset
    inside = s <= 0
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    s_next = np.roll(s, -1)
    cross = inside != np.roll(inside, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(cross, s / (s - s_next), 0.0)
    inter = poly + lam[:, None] * (np.roll(poly, -1, axis=0) - poly)
    entries = np.stack([poly, inter], axis=1)
    return entries[np.column_stack([inside, cross])]


def _triangulate(q, jitter):
    try:
        return Delaunay(q)
    except QhullError:
        rng = np.random.default_rng(0)
        try:
            return Delaunay(q + jitter * rng.standard_normal(q.shape))
        except QhullError as exc:
            raise DegenerateGeometryError(f"local Delaunay triangulation failed: {exc}") from exc


def _circumcenters(a, b, c):
    ba, ca = b - a, c - a
    d = 2.0 * (ba[:, 0] * ca[:, 1] - ba[:, 1] * ca[:, 0])
    nb, nc = (ba**2).sum(1), (ca**2).sum(1)
    ux = (ca[:, 1] * nb - ba[:, 1] * nc) / d
    uy = (ba[:, 0] * nc - ca[:, 0] * nb) / d
    return a + np.column_stack([ux, uy])


def _cell_area(q, boundary_normal, jitter):
    """Area of the Voronoi cell of the origin among projected points ``q``.

    ``q[0]`` is the origin itself. Bounded interior cells are the polygons
    of circumcentres of the incident Delaunay triangles. Otherwise the cell
    is cut out of the circle through the farthest neighbour and, for boundary
    samples, clipped by the tangent line with outward normal
    ``boundary_normal``.
    """
    tri = _triangulate(q, jitter)
    on_hull = bool(np.any(tri.convex_hull == 0))
    if boundary_normal is None and not on_hull:
        simp = tri.simplices[np.any(tri.simplices == 0, axis=1)]
        pts = tri.points
        cc = _circumcenters(pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]])
        cc = cc - pts[0]
        order = np.argsort(np.arctan2(cc[:, 1], cc[:, 0]))
        return polygon_area(cc[order])

    indptr, indices = tri.vertex_neighbor_vertices
    radius = float(np.max(np.linalg.norm(q, axis=1)))
    ang = 2.0 * math.pi * np.arange(_CIRCLE_SIDES) / _CIRCLE_SIDES
    poly = radius * np.column_stack([np.cos(ang), np.sin(ang)])
    for j in indices[indptr[0]:indptr[1]]:
        qj = q[j]
        poly = clip_polygon(poly, qj, 0.5 * float(qj @ qj))
    if boundary_normal is not None:
        poly = clip_polygon(poly, boundary_normal, 0.0)
    return polygon_area(poly)


def _boundary_normal(q, nb_flag):
    """Outward unit normal of the boundary curve in tangent coordinates."""
    bq = q[1:][nb_flag]
    if len(bq) == 0:
        return None
    # two closest boundary neighbours define the local boundary direction
    order = np.argsort(np.linalg.norm(bq, axis=1))[:2]
    pts = np.vstack([np.zeros(2), bq[order]])
    _, _, vt = np.linalg.svd(pts - pts.mean(axis=0))
    tangent = vt[0]
    normal = np.array([-tangent[1], tangent[0]])
    interior = q[1:][~nb_flag]
    ref = interior.mean(axis=0) if len(interior) else -pts.mean(axis=0)
    if normal @ ref > 0:
        normal = -normal
    return normal


def _weights_1d(cloud, index, m_neighbors):
    coords = cloud.coords
    _, nbs = index.knn(coords, min(m_neighbors + 1, cloud.n))
    V = np.empty(cloud.n)
    for i in range(cloud.n):
        nb = np.array([j for j in nbs[i] if j != i])
        direction = _frame_from_neighbors(np.vstack([coords[i], coords[nb]]), 1, i)[0]
        s = (coords[nb] - coords[i]) @ direction
        left, right = s[s < 0], s[s > 0]
        gaps = []
        if len(left):
            gaps.append(-left.max())
        if len(right):
            gaps.append(right.min())
        if not gaps:
            raise DegenerateGeometryError(f"point {i} has no distinct neighbours")
        V[i] = 0.5 * sum(gaps)
    return cloud.with_weights(volume_weight=V)


def voronoi_volume_weights(cloud: PointCloud, m_neighbors: int = 20) -> PointCloud:
    """Estimate volume weights V_i as tangent-plane Voronoi cell areas.

    For every sample the ``m_neighbors`` nearest samples are projected onto
    its tangent frame, a Delaunay triangulation of the projected set selects
    the Voronoi neighbours, and the cell is the intersection of their
    bisector half-planes. Cells are clipped to the neighbourhood's bounding
    circle, and boundary samples are clipped by the local boundary tangent.

    Returns a new cloud with ``volume_weight`` set.
    """
    k = cloud.intrinsic_dim
    if k not in (1, 2):
        raise ParameterError("volume weights are implemented for k = 1 and k = 2 only")
    if cloud.n < 4:
        raise ParameterError("volume weights need at least 4 points")
    m = min(m_neighbors, cloud.n - 1)
    if m < k + 1:
        raise ParameterError("m_neighbors too small")
    index = build_index(cloud)
    if k == 1:
        return _weights_1d(cloud, index, m)

    coords = cloud.coords
    flags = cloud.boundary_flag
    dists, nbs = index.knn(coords, m + 1)
    flat = cloud.ambient_dim == 2
    V = np.empty(cloud.n)
    for i in range(cloud.n):
        nb = nbs[i][nbs[i] != i][:m]
        rel = coords[nb] - coords[i]
        if flat:
            basis = None
            q = rel
        else:
            basis = _frame_from_neighbors(np.vstack([coords[i], coords[nb]]), 2, i)
            q = rel @ basis.T
        q = np.vstack([np.zeros(2), q])
        normal = _boundary_normal(q, flags[nb]) if flags[i] else None
        jitter = 1e-12 * float(dists[i][-1])
        area = _cell_area(q, normal, jitter)
        if not area > 0:
            raise DegenerateGeometryError(f"empty Voronoi cell at point {i}")
        V[i] = area
    return cloud.with_weights(volume_weight=V)


def boundary_measure_weights(cloud: PointCloud) -> PointCloud:
    """Boundary weights S_i: half the chords to the two adjacent boundary samples.

    Adjacent samples are the two nearest boundary-flagged points; with only
    two boundary points the single neighbour counts on both sides.
    """
    bids = cloud.boundary_ids
    if len(bids) < 2:
        raise ParameterError("boundary weights need at least 2 boundary points")
    bpts = cloud.coords[bids]
    kk = min(3, len(bids))
    dist, _ = cKDTree(bpts).query(bpts, k=kk)
    if kk == 2:
        chords = np.column_stack([dist[:, 1], dist[:, 1]])
    else:
        chords = dist[:, 1:3]
    S = np.zeros(cloud.n)
    S[bids] = 0.5 * chords.sum(axis=1)
    if np.any(S[bids] <= 0):
        raise DegenerateGeometryError("coincident boundary samples")
    return cloud.with_weights(boundary_weight=S)
