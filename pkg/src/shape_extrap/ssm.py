"""Point distribution model: PCA over aligned shapes, projection, generalization tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import GPA_MAX_ITERS, GPA_TOL, SimilarityTransform, generalized_procrustes, procrustes_align
from .distance import surface_error_stats
from .errors import RankDeficiencyError, TopologyMismatchError
from .mesh import TriMesh

MODE_REL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ShapeModel:
    """Mean shape plus orthonormal modes of variation.

    Attributes
    ----------
    mean : ndarray, shape (3V,)
        Flattened mean shape.
    modes : ndarray, shape (N, 3V)
        Orthonormal principal directions, one per row.
    stddevs : ndarray, shape (N,)
        Standard deviation along each mode, non-increasing.
    triangles : ndarray, shape (T, 3)
    sample_count : int
    """

    mean: np.ndarray
    modes: np.ndarray
    stddevs: np.ndarray
    triangles: np.ndarray
    sample_count: int

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def n_vertices(self):
        return len(self.mean) // 3

    def mean_mesh(self):
        return TriMesh(self.mean.reshape(-1, 3), self.triangles, validate=False)

    def instance(self, coefficients):
        """``mean + sum_i c_i * mode_i`` as a flat vector."""
        c = np.asarray(coefficients, dtype=np.float64)
        return self.mean + c @ self.modes[: len(c)]

    def gram_error(self):
        g = self.modes @ self.modes.T
        return float(np.max(np.abs(g - np.eye(len(g))))) if len(g) else 0.0


def build_ssm(aligned, rel_tol=MODE_REL_TOL):
    """PCA of an aligned corpus.

    Modes come from the SVD of the centred data matrix; modes with
    ``sigma / sigma_1 <= rel_tol`` are dropped. Variances use the
    ``n - 1`` divisor.
    """
    meshes = list(aligned)
    if len(meshes) < 2:
        raise ValueError("need at least 2 aligned shapes to build a model")
    tri = meshes[0].triangles
    for m in meshes[1:]:
        if not meshes[0].same_topology(m):
            raise TopologyMismatchError("aligned corpus is not topologically consistent")
    x = np.stack([m.vertices.reshape(-1) for m in meshes])
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    sigma = s / np.sqrt(len(meshes) - 1)
    keep = s > rel_tol * s[0] if s[0] > 0 else np.zeros(len(s), dtype=bool)
    modes = vt[keep]
    # deterministic sign: largest-magnitude entry positive
    flip = np.sign(modes[np.arange(len(modes)), np.argmax(np.abs(modes), axis=1)])
    modes = modes * flip[:, None]
    return ShapeModel(
        mean=mean,
        modes=np.ascontiguousarray(modes),
        stddevs=sigma[keep],
        triangles=np.array(tri),
        sample_count=len(meshes),
    )


def build_ssm_from_corpus(corpus, tol=GPA_TOL, max_iters=GPA_MAX_ITERS, rel_tol=MODE_REL_TOL):
    """GPA followed by PCA."""
    gpa = generalized_procrustes(corpus, tol=tol, max_iters=max_iters)
    return build_ssm(gpa.aligned, rel_tol=rel_tol)


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    coefficients: np.ndarray
    instance: TriMesh
    transform: SimilarityTransform


def project(partial, known, model, num_modes=None, fill="mean", scaling="tangent"):
    """Best model instance for a (possibly partial) patient mesh.

    The patient is similarity-aligned to the model mean over its known
    vertices. Unknown rows of the residual take the mean's values so they
    add nothing to the mode inner products (``fill="mean"``); ``fill="zero"``
    instead sets the aligned unknown coordinates to zero, for ablation.
    The reconstruction is mapped back to the patient frame.
    """
    n_modes = model.n_modes if num_modes is None else int(num_modes)
    if not 0 <= n_modes <= model.n_modes:
        raise ValueError(f"num_modes must be in [0, {model.n_modes}], got {num_modes}")
    verts = partial.vertices
    if len(verts) != model.n_vertices:
        raise TopologyMismatchError(
            f"mesh has {len(verts)} vertices, model has {model.n_vertices}"
        )
    known = np.unique(np.asarray(known, dtype=np.int64))
    if len(known) < 3:
        raise RankDeficiencyError("need at least 3 known vertices")
    mean3 = model.mean.reshape(-1, 3)
    t = procrustes_align(verts, mean3, known, scaling=scaling)

    aligned = t.apply(verts)
    is_known = np.zeros(len(verts), dtype=bool)
    is_known[known] = True
    if fill == "mean":
        aligned[~is_known] = mean3[~is_known]
    elif fill == "zero":
        aligned[~is_known] = 0.0
    else:
        raise ValueError(f"unknown fill {fill!r}")
    residual = aligned.reshape(-1) - model.mean
    modes = model.modes[:n_modes]
    coeffs = modes @ residual
    recon = (model.mean + coeffs @ modes).reshape(-1, 3)
    inst = partial.with_vertices(t.inverse().apply(recon))
    return ProjectionResult(coeffs, inst, t)


@dataclass
class LooGeneralization:
    mode_counts: list
    trials: list  # per left-out shape: list of ErrorStats, one per mode count

    def summary(self):
        """Mean and standard deviation per mode count for each metric."""
        out = []
        for j, k in enumerate(self.mode_counts):
            row = {"num_modes": k}
            for key in ("rms_surface", "max_surface", "rms_vertex"):
                vals = np.array([getattr(t[j], key) for t in self.trials])
                row[key] = float(vals.mean())
                row[key + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out.append(row)
        return out


def loo_generalization(corpus, mode_counts=None, tol=GPA_TOL, max_iters=GPA_MAX_ITERS):
    """Leave-one-out generalization of the shape model.

    For every shape, a model is built from the others and the left-out shape
    is projected (all vertices known) with each requested mode count.
    ``None`` entries in ``mode_counts`` (or ``mode_counts=None``) mean all
    available modes.
    """
    meshes = list(corpus)
    if len(meshes) < 3:
        raise ValueError("leave-one-out needs at least 3 shapes")
    counts = list(mode_counts) if mode_counts is not None else [None]
    all_idx = np.arange(meshes[0].n_vertices)
    trials = []
    for i, left_out in enumerate(meshes):
        model = build_ssm_from_corpus(meshes[:i] + meshes[i + 1 :], tol, max_iters)
        row = []
        for k in counts:
            kk = model.n_modes if k is None else min(int(k), model.n_modes)
            proj = project(left_out, all_idx, model, kk)
            row.append(surface_error_stats(left_out, proj.instance, all_idx))
        trials.append(row)
    return LooGeneralization(counts, trials)
