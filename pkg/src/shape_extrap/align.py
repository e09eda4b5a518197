"""Similarity alignment: pairwise Procrustes and generalized Procrustes analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import RankDeficiencyError, TopologyMismatchError

logger = logging.getLogger(__name__)

GPA_TOL = 1e-9
GPA_MAX_ITERS = 100


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return SimilarityTransform(
            1.0 / self.scale, rt, -(rt @ self.translation) / self.scale
        )

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


def _optimal_rotation(moving_c, fixed_c):
    """Rotation ``R`` (det +1) maximizing ``tr(R H)`` for centred point sets."""
    h = moving_c.T @ fixed_c
    u, s, vt = np.linalg.svd(h)
    # reflections excluded by flipping the weakest axis
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    corr = np.diag([1.0, 1.0, d])
    r = vt.T @ corr @ u.T
    return r, s, corr


def _check_rank(centred, what):
    sv = np.linalg.svd(centred, compute_uv=False)
    if len(sv) < 2 or sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
        raise RankDeficiencyError(f"{what} is collinear or degenerate")


def procrustes_align(moving, fixed, vertex_subset=None, scaling="lsq"):
    """Similarity transform taking ``moving`` onto ``fixed``.

    Parameters
    ----------
    moving, fixed : TriMesh or array_like (V, 3)
        Homologous point sets.
    vertex_subset : array_like of int, optional
        Restrict the fit to these vertices (default: all).
    scaling : {"lsq", "tangent"}
        ``"lsq"`` minimizes ``sum ||s R m + t - f||^2`` over all similarities.
        ``"tangent"`` keeps the same rotation and translation but chooses the
        scale that places the aligned points in the tangent plane of
        ``fixed`` (``<s R m_c, f_c> = |f_c|^2``), the classical PDM convention.
    """
    m = getattr(moving, "vertices", moving)
    f = getattr(fixed, "vertices", fixed)
    m = np.asarray(m, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(f, dtype=np.float64).reshape(-1, 3)
    if m.shape != f.shape:
        raise TopologyMismatchError(f"point sets differ in shape: {m.shape} vs {f.shape}")
    if vertex_subset is not None:
        idx = np.asarray(vertex_subset, dtype=np.int64)
        m = m[idx]
        f = f[idx]
    if len(m) < 3:
        raise RankDeficiencyError("need at least 3 points for a similarity fit")

    mc = m.mean(axis=0)
    fc = f.mean(axis=0)
    m0 = m - mc
    f0 = f - fc
    _check_rank(m0, "moving point set")
    _check_rank(f0, "fixed point set")

    r, s, corr = _optimal_rotation(m0, f0)
    if scaling == "lsq":
        scale = float(np.sum(s * np.diag(corr)) / np.sum(m0 * m0))
    elif scaling == "tangent":
        scale = float(np.sum(f0 * f0) / np.sum((m0 @ r.T) * f0))
    else:
        raise ValueError(f"unknown scaling {scaling!r}")
    if not scale > 0:
        raise RankDeficiencyError("alignment produced a non-positive scale")
    t = fc - scale * r @ mc
    return SimilarityTransform(scale, r, t)


def normalize_shape(points):
    """Centre at the origin and scale to unit centroid size."""
    p = np.asarray(points, dtype=np.float64) - np.mean(points, axis=0)
    size = np.sqrt(np.sum(p * p))
    if size == 0:
        raise RankDeficiencyError("shape has zero centroid size")
    return p / size


@dataclass
class GPAResult:
    aligned: list
    mean: np.ndarray
    transforms: list
    iterations: int
    converged: bool


def generalized_procrustes(corpus, tol=GPA_TOL, max_iters=GPA_MAX_ITERS, scaling="tangent"):
    """Mutually align a corpus of topologically consistent meshes.

    Each pass aligns every shape to the current mean, averages, and rescales
    the average to unit centroid size at the origin. The rotation gauge is
    pinned by aligning each new mean to the previous one. Iteration stops when
    the RMS vertex movement of the mean drops below ``tol``.

    Returns a :class:`GPAResult` whose ``aligned`` entries are TriMesh objects
    in the normalized frame.
    """
    meshes = list(corpus)
    if len(meshes) < 2:
        raise ValueError("generalized Procrustes needs at least 2 meshes")
    ref = meshes[0]
    for m in meshes[1:]:
        if not ref.same_topology(m):
            raise TopologyMismatchError("corpus meshes are not topologically consistent")

    pts = [m.vertices for m in meshes]
    mean = normalize_shape(pts[0])
    n_vert = len(mean)
    converged = False
    it = 0
    transforms = None
    aligned = None
    for it in range(1, max_iters + 1):
        transforms = [procrustes_align(p, mean, scaling=scaling) for p in pts]
        aligned = [tr.apply(p) for tr, p in zip(transforms, pts)]
        new_mean = normalize_shape(np.mean(aligned, axis=0))
        r, _, _ = _optimal_rotation(new_mean, mean)
        new_mean = new_mean @ r.T
        shift = np.sqrt(np.sum((new_mean - mean) ** 2) / n_vert)
        mean = new_mean
        logger.debug("GPA iteration %d: mean moved %.3e", it, shift)
        if shift < tol:
            converged = True
            break
    # final pass so that the aligned shapes match the returned mean
    transforms = [procrustes_align(p, mean, scaling=scaling) for p in pts]
    aligned = [m.with_vertices(tr.apply(p)) for m, tr, p in zip(meshes, transforms, pts)]
    if not converged:
        logger.warning("GPA did not converge in %d iterations", max_iters)
    return GPAResult(aligned, mean, transforms, it, converged)
