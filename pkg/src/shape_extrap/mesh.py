"""Triangle meshes with fixed topology, vertex adjacency and region partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import MeshError, PartitionError, TopologyMismatchError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class TriMesh:
    """Triangle surface with shared connectivity.

    Parameters
    ----------
    vertices : array_like, shape (V, 3)
        Vertex positions in mm.
    triangles : array_like, shape (T, 3)
        Vertex indices of every triangle.
    validate : bool
        Reject out-of-range indices and degenerate triangles (repeated
        indices or zero area).

    Both arrays are copied and made read-only, so a mesh can be shared
    freely between threads.
    """

    __slots__ = ("vertices", "triangles", "_adjacency")

    def __init__(self, vertices, triangles, validate=True):
        v = _frozen(vertices, np.float64)
        t = _frozen(triangles, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if t.size == 0:
            t = _frozen(np.zeros((0, 3)), np.int64)
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (T, 3), got {t.shape}")
        self.vertices = v
        self.triangles = t
        self._adjacency = None
        if validate:
            self.validate()

    def validate(self):
        v, t = self.vertices, self.triangles
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if t.size == 0:
            return
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise MeshError("degenerate triangle with repeated vertex index")
        if np.any(triangle_areas(v, t) == 0.0):
            raise MeshError("degenerate triangle with zero area")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def flat(self):
        """Vertices as a flattened ``3V`` coordinate vector (x0, y0, z0, x1, ...)."""
        return self.vertices.reshape(-1).copy()

    def with_vertices(self, vertices):
        """New mesh on the same connectivity. Skips re-validation of indices."""
        m = TriMesh.__new__(TriMesh)
        v = _frozen(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.float64)
        if v.shape != self.vertices.shape:
            raise TopologyMismatchError(
                f"expected {self.vertices.shape[0]} vertices, got {v.shape[0]}"
            )
        m.vertices = v
        m.triangles = self.triangles
        m._adjacency = self._adjacency
        return m

    def same_topology(self, other):
        return self.n_vertices == other.n_vertices and np.array_equal(
            self.triangles, other.triangles
        )

    def adjacency(self):
        """Cached CSR vertex adjacency, see :func:`build_adjacency`."""
        if self._adjacency is None:
            self._adjacency = build_adjacency(self)
        return self._adjacency

    def __repr__(self):
        return f"TriMesh(V={self.n_vertices}, T={self.n_triangles})"


def triangle_areas(vertices, triangles):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def check_topology(a, b):
    if not a.same_topology(b):
        raise TopologyMismatchError(
            f"meshes are not topologically consistent: {a!r} vs {b!r}"
        )


@dataclass(frozen=True, eq=False)
class Adjacency:
    """Symmetric vertex adjacency in compressed row form.

    ``indices[indptr[i]:indptr[i + 1]]`` are the sorted neighbours of vertex ``i``.
    """

    indptr: np.ndarray
    indices: np.ndarray

    def neighbors(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def __len__(self):
        return len(self.indptr) - 1

    def as_sparse(self):
        n = len(self)
        data = np.ones(len(self.indices), dtype=np.int8)
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(n, n))


def build_adjacency(mesh):
    """Vertex adjacency: ``a`` and ``b`` are neighbours iff a triangle holds both."""
    t = mesh.triangles
    n = mesh.n_vertices
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    m = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)
    )
    m.sum_duplicates()
    m.sort_indices()
    indptr = m.indptr.astype(np.int64)
    indices = m.indices.astype(np.int64)
    indptr.setflags(write=False)
    indices.setflags(write=False)
    return Adjacency(indptr, indices)


def _gather_neighbors(adj, verts):
    """All neighbour indices of ``verts`` (with repeats)."""
    starts = adj.indptr[verts]
    counts = adj.indptr[verts + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
    return adj.indices[np.arange(total) + offsets]


@dataclass(frozen=True, eq=False)
class RegionPartition:
    """Known/unknown split of a mesh plus the overlap band next to the cut.

    Attributes
    ----------
    unknown, known : ndarray of int
        Sorted vertex index arrays; disjoint and covering every vertex.
    boundary : ndarray of int
        Known vertices with at least one unknown neighbour (depth 0).
    depth : ndarray of int, shape (V,)
        Edge hops from the boundary through known vertices, or -1 for vertices
        that are unknown or deeper than ``max_depth``.
    max_depth : int
    """

    n_vertices: int
    unknown: np.ndarray
    known: np.ndarray
    boundary: np.ndarray
    depth: np.ndarray
    max_depth: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def overlap(self):
        """Known vertices with depth in ``0..max_depth``."""
        return np.flatnonzero(self.depth >= 0)

    def unknown_mask(self):
        m = np.zeros(self.n_vertices, dtype=bool)
        m[self.unknown] = True
        return m


def compute_partition(mesh, unknown_indices, max_depth, allow_empty=False):
    """Split ``mesh`` into known/unknown and grow the overlap band by BFS.

    The traversal starts at the boundary (known vertices touching the unknown
    region, depth 0) and walks edges between known vertices only, stopping
    once ``max_depth`` hops have been reached.

    ``allow_empty`` admits an empty unknown set (the band is then empty too);
    this is used by the extrapolators where "nothing missing" is a no-op.
    """
    n = mesh.n_vertices
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    unknown = np.unique(np.asarray(unknown_indices, dtype=np.int64))
    if unknown.size and (unknown[0] < 0 or unknown[-1] >= n):
        raise PartitionError("unknown index out of range")
    if unknown.size == 0 and not allow_empty:
        raise PartitionError("unknown set is empty: nothing to extrapolate")
    if unknown.size == n:
        raise PartitionError("unknown set covers every vertex: nothing is known")

    is_unknown = np.zeros(n, dtype=bool)
    is_unknown[unknown] = True
    known = np.flatnonzero(~is_unknown)
    adj = mesh.adjacency()

    depth = np.full(n, -1, dtype=np.int64)
    touched = _gather_neighbors(adj, unknown)
    boundary = np.unique(touched[~is_unknown[touched]])
    depth[boundary] = 0
    frontier = boundary
    for level in range(1, max_depth + 1):
        if frontier.size == 0:
            break
        nb = np.unique(_gather_neighbors(adj, frontier))
        nb = nb[(depth[nb] < 0) & ~is_unknown[nb]]
        depth[nb] = level
        frontier = nb

    depth.setflags(write=False)
    for a in (unknown, known, boundary):
        a.setflags(write=False)
    return RegionPartition(n, unknown, known, boundary, depth, int(max_depth))
