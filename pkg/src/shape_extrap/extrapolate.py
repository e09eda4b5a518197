"""Completing a partial patient mesh from a model instance.

Three strategies:

* ``po``      -- copy the instance's unknown vertices into the patient mesh.
* ``feather`` -- as ``po``, plus a depth-weighted blend from instance to
  patient across an overlap band of known vertices.
* ``tps``     -- fit a thin-plate spline to the instance->patient
  displacements in the overlap band and push the instance's unknown vertices
  through it.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import check_topology, compute_partition
from .tps import TpsSingularError, build_tps, evaluate_tps

logger = logging.getLogger(__name__)

METHODS = ("po", "feather", "tps")
D_FEATHER = 20
D_TPS = 3


@dataclass(eq=False)
class ExtrapolationResult:
    mesh: object
    method: str
    partition: object
    eval_region: np.ndarray
    timings: dict = field(default_factory=dict)
    tps: object = None

    @property
    def overlap_count(self):
        return int(len(self.partition.overlap)) if self.partition is not None else 0


def _unknown_from_known(n, known):
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(known, dtype=np.int64)] = False
    return np.flatnonzero(mask)


def _splice(patient, instance, unknown):
    out = np.array(patient.vertices)
    out[unknown] = instance.vertices[unknown]
    return out


def extrapolate_po(patient, known, instance):
    """Copy the instance's unknown vertices into the patient mesh."""
    check_topology(patient, instance)
    t0 = time.perf_counter()
    unknown = _unknown_from_known(patient.n_vertices, known)
    part = compute_partition(patient, unknown, 0, allow_empty=True)
    t1 = time.perf_counter()
    out = patient.with_vertices(_splice(patient, instance, unknown))
    t2 = time.perf_counter()
    return ExtrapolationResult(
        out, "po", part, unknown,
        {"band": t1 - t0, "assembly": t2 - t1, "total": t2 - t0},
    )


def feather_weights(depth, d):
    """Blend weight on the instance value for band depth ``n``: ``(d - n) / d``."""
    return (d - np.asarray(depth, dtype=np.float64)) / d


def extrapolate_feather(patient, known, instance, d=D_FEATHER):
    """Projection plus feathering over a band of depth ``d``.

    A band vertex at depth ``n`` becomes ``(d - n)/d * r + n/d * q`` where
    ``q`` is the patient value and ``r`` the instance value.
    """
    if d < 1:
        raise ValueError("feather depth must be >= 1")
    check_topology(patient, instance)
    t0 = time.perf_counter()
    unknown = _unknown_from_known(patient.n_vertices, known)
    part = compute_partition(patient, unknown, d, allow_empty=True)
    band = part.overlap
    t1 = time.perf_counter()
    out = _splice(patient, instance, unknown)
    n = part.depth[band].astype(np.float64)
    q = patient.vertices[band]
    r = instance.vertices[band]
    out[band] = ((d - n) / d)[:, None] * r + (n / d)[:, None] * q
    mesh = patient.with_vertices(out)
    t2 = time.perf_counter()
    region = np.union1d(unknown, band)
    return ExtrapolationResult(
        mesh, "feather", part, region,
        {"band": t1 - t0, "assembly": t2 - t1, "total": t2 - t0},
    )


def _fallback_regularization(controls):
    if len(controls) < 2:
        return 1e-6
    d, _ = cKDTree(controls).query(controls, k=2)
    spacing = float(np.mean(d[:, 1]))
    return 1e-6 * spacing**2


def extrapolate_tps(patient, known, instance, d=D_TPS, kernel="r", regularization=0.0,
                    independent_solves=False):
    """Projection plus TPS over a band of depth ``d``.

    Control points are all band vertices (depths ``0..d``). If the system is
    singular and no regularization was requested, one retry is made with a
    small ridge scaled to the control spacing.
    """
    check_topology(patient, instance)
    t0 = time.perf_counter()
    unknown = _unknown_from_known(patient.n_vertices, known)
    part = compute_partition(patient, unknown, d, allow_empty=True)
    band = part.overlap
    t1 = time.perf_counter()
    timings = {"band": t1 - t0, "tps_build": 0.0, "tps_evaluate": 0.0}
    if unknown.size == 0:
        timings["assembly"] = 0.0
        timings["total"] = t1 - t0
        return ExtrapolationResult(patient, "tps", part, unknown, timings)

    src = instance.vertices[band]
    dst = patient.vertices[band]
    try:
        model = build_tps(src, dst, regularization, kernel, independent_solves)
    except TpsSingularError:
        if regularization:
            raise
        reg = _fallback_regularization(src)
        logger.warning("singular TPS system with %d controls; retrying with reg=%.3g",
                       len(src), reg)
        model = build_tps(src, dst, reg, kernel, independent_solves)
    t2 = time.perf_counter()
    moved = evaluate_tps(model, instance.vertices[unknown])
    t3 = time.perf_counter()
    out = np.array(patient.vertices)
    out[unknown] = moved
    mesh = patient.with_vertices(out)
    t4 = time.perf_counter()
    timings.update(tps_build=t2 - t1, tps_evaluate=t3 - t2, assembly=t4 - t3, total=t4 - t0)
    return ExtrapolationResult(mesh, "tps", part, unknown, timings, model)


def extrapolate(method, patient, known, instance, depth=None, **kwargs):
    if method == "po":
        return extrapolate_po(patient, known, instance)
    if method == "feather":
        return extrapolate_feather(patient, known, instance, D_FEATHER if depth is None else depth)
    if method == "tps":
        return extrapolate_tps(patient, known, instance, D_TPS if depth is None else depth, **kwargs)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def seam_jumps(truth, output, partition):
    """Cross-boundary displacement error for every known->unknown edge.

    For an edge ``(a, b)`` with ``a`` known and ``b`` unknown the jump is
    ``|(out_b - out_a) - (truth_b - truth_a)|``. Returns ``(max, rms)``
    (zeros when there is no boundary).
    """
    adj = truth.adjacency()
    unk = partition.unknown_mask()
    a_list = []
    b_list = []
    for a in partition.boundary:
        nb = adj.neighbors(a)
        nb = nb[unk[nb]]
        a_list.append(np.full(len(nb), a))
        b_list.append(nb)
    if not a_list:
        return 0.0, 0.0
    a = np.concatenate(a_list)
    b = np.concatenate(b_list)
    j = np.linalg.norm(
        (output.vertices[b] - output.vertices[a]) - (truth.vertices[b] - truth.vertices[a]), axis=1
    )
    return float(j.max()), float(np.sqrt(np.mean(j**2)))
