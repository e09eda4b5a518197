"""Exact point-to-surface distances and the error statistics built on them.

Queries go through a linear bounding-volume hierarchy (triangles sorted along a
Morton curve, fixed-size leaves, implicit complete binary tree).  Traversal is
batched: all (query, node) pairs of one tree level are tested at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import check_topology

LEAF_SIZE = 8
_QUERY_BLOCK = 4096


def closest_points_on_triangles(p, a, b, c):
    """Closest point on triangle ``(a, b, c)`` to ``p``, row-wise.

    All inputs have shape (K, 3). Handles the vertex, edge and face regions
    (Voronoi-region test on barycentric dot products).
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[:, None] + ac * w[:, None]

        # regions in reverse priority so earlier tests win
        m_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m_bc[:, None], b + (c - b) * t_bc[:, None], out)

        m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t_ac = d2 / (d2 - d6)
        out = np.where(m_ac[:, None], a + ac * t_ac[:, None], out)

        m_c = (d6 >= 0) & (d5 <= d6)
        out = np.where(m_c[:, None], c, out)

        m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t_ab = d1 / (d1 - d3)
        out = np.where(m_ab[:, None], a + ab * t_ab[:, None], out)

        m_b = (d3 >= 0) & (d4 <= d3)
        out = np.where(m_b[:, None], b, out)

        m_a = (d1 <= 0) & (d2 <= 0)
        out = np.where(m_a[:, None], a, out)
    return out


def point_triangle_sqdist(p, a, b, c):
    d = p - closest_points_on_triangles(p, a, b, c)
    return np.einsum("ij,ij->i", d, d)


def _morton_codes(pts, lo, hi):
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    q = np.clip(((pts - lo) / span * 1023.0).astype(np.int64), 0, 1023)

    def spread(x):
        x = (x | (x << 16)) & 0x030000FF
        x = (x | (x << 8)) & 0x0300F00F
        x = (x | (x << 4)) & 0x030C30C3
        x = (x | (x << 2)) & 0x09249249
        return x

    return (spread(q[:, 0]) << 2) | (spread(q[:, 1]) << 1) | spread(q[:, 2])


class TriangleBVH:
    """Axis-aligned bounding-volume hierarchy over the triangles of a mesh."""

    def __init__(self, mesh, leaf_size=LEAF_SIZE):
        self.mesh = mesh
        v = mesh.vertices
        t = mesh.triangles
        if len(t) == 0:
            raise ValueError("mesh has no triangles")
        self._a = v[t[:, 0]]
        self._b = v[t[:, 1]]
        self._c = v[t[:, 2]]
        tmin = np.minimum(np.minimum(self._a, self._b), self._c)
        tmax = np.maximum(np.maximum(self._a, self._b), self._c)
        self._tmin = tmin
        self._tmax = tmax
        cent = (tmin + tmax) * 0.5
        order = np.argsort(_morton_codes(cent, cent.min(0), cent.max(0)), kind="stable")

        n_tri = len(t)
        n_leaves = -(-n_tri // leaf_size)
        height = max(0, int(np.ceil(np.log2(n_leaves)))) if n_leaves > 1 else 0
        n_slots = 1 << height
        leaf_tris = np.full(n_slots * leaf_size, -1, dtype=np.int64)
        leaf_tris[:n_tri] = order
        self.leaf_tris = leaf_tris.reshape(n_slots, leaf_size)

        starts = np.arange(0, n_tri, leaf_size)
        lo = np.full((n_slots, 3), np.inf)
        hi = np.full((n_slots, 3), -np.inf)
        lo[:n_leaves] = np.minimum.reduceat(tmin[order], starts, axis=0)
        hi[:n_leaves] = np.maximum.reduceat(tmax[order], starts, axis=0)
        levels_lo = [lo]
        levels_hi = [hi]
        while len(lo) > 1:
            lo = np.minimum(lo[0::2], lo[1::2])
            hi = np.maximum(hi[0::2], hi[1::2])
            levels_lo.append(lo)
            levels_hi.append(hi)
        self.levels_lo = levels_lo[::-1]
        self.levels_hi = levels_hi[::-1]
        self.height = height

        used = np.unique(t)
        self._vert_ids = used
        self._vtree = cKDTree(v[used])
        # triangle fan of every vertex, as CSR
        flat = t.reshape(-1)
        self._fan = np.argsort(flat, kind="stable") // 3
        self._fan_ptr = np.zeros(len(v) + 1, dtype=np.int64)
        np.cumsum(np.bincount(flat, minlength=len(v)), out=self._fan_ptr[1:])

    def nearest_sqdist(self, points):
        """Exact squared distance from each point to the triangle set."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(points))
        for s in range(0, len(points), _QUERY_BLOCK):
            out[s : s + _QUERY_BLOCK] = self._query_block(points[s : s + _QUERY_BLOCK])
        return out

    def _query_block(self, pts):
        m = len(pts)
        # the fan around the nearest vertex gives a tight upper bound
        _, nv = self._vtree.query(pts)
        nv = self._vert_ids[nv]
        start = self._fan_ptr[nv]
        count = self._fan_ptr[nv + 1] - start
        fq = np.repeat(np.arange(m), count)
        ftri = self._fan[np.repeat(start - np.cumsum(count) + count, count) + np.arange(count.sum())]
        fd = point_triangle_sqdist(pts[fq], self._a[ftri], self._b[ftri], self._c[ftri])
        ub = np.minimum.reduceat(fd, np.flatnonzero(np.r_[True, fq[1:] != fq[:-1]]))
        ub = ub * (1.0 + 1e-9) + 1e-300

        qi = np.arange(m)
        node = np.zeros(m, dtype=np.int64)
        for level in range(self.height + 1):
            lo = self.levels_lo[level][node]
            hi = self.levels_hi[level][node]
            p = pts[qi]
            gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
            lb = np.einsum("ij,ij->i", gap, gap)
            keep = lb <= ub[qi]
            qi = qi[keep]
            node = node[keep]
            if level < self.height:
                qi = np.repeat(qi, 2)
                node = np.repeat(node * 2, 2)
                node[1::2] += 1

        tri = self.leaf_tris[node]
        qi = np.repeat(qi, tri.shape[1])
        tri = tri.reshape(-1)
        valid = tri >= 0
        qi = qi[valid]
        tri = tri[valid]
        p = pts[qi]
        gap = np.maximum(np.maximum(self._tmin[tri] - p, p - self._tmax[tri]), 0.0)
        near = np.einsum("ij,ij->i", gap, gap) <= ub[qi]
        qi = qi[near]
        tri = tri[near]
        d2 = point_triangle_sqdist(pts[qi], self._a[tri], self._b[tri], self._c[tri])
        # qi is non-decreasing and every query keeps its nearest fan triangle
        starts = np.flatnonzero(np.r_[True, qi[1:] != qi[:-1]])
        return np.minimum.reduceat(d2, starts)


def distances_exhaustive(points, mesh, block=256):
    """Distance from each point to ``mesh`` by scanning every triangle."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    t = mesh.triangles
    a = mesh.vertices[t[:, 0]]
    b = mesh.vertices[t[:, 1]]
    c = mesh.vertices[t[:, 2]]
    nt = len(t)
    out = np.empty(len(points))
    for s in range(0, len(points), block):
        p = points[s : s + block]
        k = len(p)
        d2 = point_triangle_sqdist(
            np.repeat(p, nt, axis=0), np.tile(a, (k, 1)), np.tile(b, (k, 1)), np.tile(c, (k, 1))
        )
        out[s : s + k] = np.sqrt(d2.reshape(k, nt).min(axis=1))
    return out


def point_to_mesh_distance(p, mesh, bvh=None):
    """Minimum Euclidean distance from point ``p`` to the surface of ``mesh``."""
    return float(points_to_mesh_distance(np.reshape(p, (1, 3)), mesh, bvh)[0])


def points_to_mesh_distance(points, mesh, bvh=None):
    if bvh is None:
        bvh = TriangleBVH(mesh)
    return np.sqrt(bvh.nearest_sqdist(points))


@dataclass(frozen=True, eq=False)
class ErrorStats:
    """Surface and vertex errors over an evaluation region (all in mm)."""

    rms_surface: float
    max_surface: float
    rms_vertex: float
    per_vertex_surface: np.ndarray
    per_vertex_error: np.ndarray
    region: np.ndarray

    def as_dict(self):
        return {
            "rms_surface": self.rms_surface,
            "max_surface": self.max_surface,
            "rms_vertex": self.rms_vertex,
            "n_eval": int(len(self.region)),
        }


def surface_error_stats(truth, estimate, eval_region, bvh=None):
    """Error of ``estimate`` against ``truth`` over the vertices in ``eval_region``.

    Surface deviation runs from each true vertex to the closest point on the
    estimated surface; vertex error compares homologous vertices.
    """
    check_topology(truth, estimate)
    region = np.unique(np.asarray(eval_region, dtype=np.int64))
    if region.size == 0:
        raise ValueError("eval_region is empty")
    pts = truth.vertices[region]
    surf = points_to_mesh_distance(pts, estimate, bvh)
    vert = np.linalg.norm(pts - estimate.vertices[region], axis=1)
    # the homologous vertex lies on the estimate, so surf <= vert up to rounding
    surf = np.minimum(surf, vert)
    return ErrorStats(
        rms_surface=float(np.sqrt(np.mean(surf**2))),
        max_surface=float(surf.max()),
        rms_vertex=float(np.sqrt(np.mean(vert**2))),
        per_vertex_surface=surf,
        per_vertex_error=vert,
        region=region,
    )
