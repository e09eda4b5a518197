"""Leave-one-out cropping experiments for the three completion strategies."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .align import generalized_procrustes
from .distance import TriangleBVH, surface_error_stats
from .errors import PartitionError, ShapeExtrapError
from .extrapolate import D_FEATHER, D_TPS, METHODS, extrapolate, seam_jumps
from .mesh import TriMesh, compute_partition
from .ssm import build_ssm, project

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = tuple(range(5, 55, 5))
METRICS = ("rms_surface", "max_surface", "rms_vertex")


@dataclass(frozen=True)
class CropSpec:
    """Remove ``fraction`` percent of the mean shape's extent along ``axis``.

    ``direction="max"`` cuts from the upper extent of the bounding box
    (the anterior side for a forward-facing template), ``"min"`` from the lower.
    """

    axis: int = 0
    fraction: float = 20.0
    direction: str = "max"

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")
        if not 0 < self.fraction <= 50:
            raise ValueError("crop fraction must be in (0, 50] percent")
        if self.direction not in ("max", "min"):
            raise ValueError("direction must be 'max' or 'min'")

    def plane(self, mean_vertices):
        x = np.asarray(mean_vertices)[:, self.axis]
        lo, hi = float(x.min()), float(x.max())
        step = self.fraction / 100.0 * (hi - lo)
        return hi - step if self.direction == "max" else lo + step


def crop_unknown(mean_vertices, spec):
    x = np.asarray(mean_vertices)[:, spec.axis]
    plane = spec.plane(mean_vertices)
    return np.flatnonzero(x > plane if spec.direction == "max" else x < plane)


def crop_partition(mean_shape, target, spec, max_depth=0):
    """Partition ``target`` by a plane placed on the mean shape's bounding box.

    Vertices are homologous, so the unknown set depends only on the mean shape
    and is the same for every target.
    """
    mean_v = getattr(mean_shape, "vertices", mean_shape)
    if len(mean_v) != target.n_vertices:
        raise PartitionError("mean shape and target differ in vertex count")
    unknown = crop_unknown(mean_v, spec)
    part = compute_partition(target, unknown, max_depth)
    part.meta.update(axis=spec.axis, fraction=spec.fraction, direction=spec.direction)
    return part


@dataclass
class TrialReport:
    left_out_id: int
    fraction: float
    method: str
    stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    overlap_count: int = 0
    unknown_count: int = 0
    seam_max: float = 0.0
    seam_rms: float = 0.0
    ok: bool = True
    error: str = ""

    def as_record(self):
        rec = {
            "left_out_id": self.left_out_id,
            "fraction": self.fraction,
            "method": self.method,
            "ok": self.ok,
            "overlap_count": self.overlap_count,
            "unknown_count": self.unknown_count,
            "seam_max": self.seam_max,
            "seam_rms": self.seam_rms,
            "timings": dict(self.timings),
        }
        rec.update(self.stats)
        if self.error:
            rec["error"] = self.error
        return rec


class HeatmapAccumulator:
    """Running per-vertex sums of surface distances over trials."""

    def __init__(self, n_vertices):
        self.n_vertices = n_vertices
        self.total = np.zeros(n_vertices)
        self.count = np.zeros(n_vertices, dtype=np.int64)
        self.trials = 0

    def add(self, region, distances):
        """Record one trial: ``distances`` on ``region``, exact (zero) elsewhere."""
        region = np.asarray(region, dtype=np.int64)
        np.add.at(self.total, region, distances)
        self.count += 1
        self.trials += 1

    def add_full(self, distances):
        self.add(np.arange(self.n_vertices), distances)

    def merge(self, other):
        self.total += other.total
        self.count += other.count
        self.trials += other.trials


@dataclass(eq=False)
class Heatmap:
    mesh: TriMesh
    values: np.ndarray
    exact: np.ndarray


def emit_heatmap(mean_shape, accumulator, exact_mask=None):
    """Per-vertex mean surface distance laid on ``mean_shape``.

    ``exact`` marks vertices whose output equalled the true surface in every
    trial (by default, those with zero accumulated distance).
    """
    if accumulator.trials < 1:
        raise ValueError("heatmap needs at least one accumulated trial")
    values = accumulator.total / np.maximum(accumulator.count, 1)
    exact = values == 0 if exact_mask is None else np.asarray(exact_mask, dtype=bool)
    return Heatmap(mean_shape, values, exact)


@dataclass
class LooExtrapolationResult:
    reports: list
    aggregates: list
    improvements: dict
    heatmaps: dict
    mean_shape: TriMesh
    fractions: tuple
    methods: tuple


def _one_left_out(i, meshes, mean_v, fractions, methods, d_feather, d_tps, axis, direction,
                  tps_kwargs):
    rest = meshes[:i] + meshes[i + 1 :]
    model = build_ssm(generalized_procrustes(rest).aligned)
    truth = meshes[i]
    reports = []
    heat = {}
    for frac in fractions:
        spec = CropSpec(axis, frac, direction)
        unknown = crop_unknown(mean_v, spec)
        known = np.setdiff1d(np.arange(truth.n_vertices), unknown)
        t0 = time.perf_counter()
        try:
            proj = project(truth, known, model)
        except ShapeExtrapError as exc:
            for m in methods:
                reports.append(TrialReport(i, frac, m, ok=False, error=f"projection: {exc}"))
            continue
        t_proj = time.perf_counter() - t0
        for m in methods:
            rep = TrialReport(i, frac, m, unknown_count=len(unknown))
            try:
                depth = d_feather if m == "feather" else d_tps if m == "tps" else None
                kw = tps_kwargs if m == "tps" else {}
                res = extrapolate(m, truth, known, proj.instance, depth, **kw)
                rep.timings = {"projection": t_proj, **res.timings}
                rep.timings["with_projection"] = t_proj + res.timings["total"]
                rep.overlap_count = res.overlap_count if m != "po" else 0
                region = res.eval_region
                if len(region):
                    st = surface_error_stats(truth, res.mesh, region, TriangleBVH(res.mesh))
                    rep.stats = {k: getattr(st, k) for k in METRICS}
                    rep.stats["n_eval"] = int(len(region))
                    acc = heat.setdefault((m, frac), HeatmapAccumulator(truth.n_vertices))
                    acc.add(region, st.per_vertex_surface)
                else:
                    rep.stats = {k: 0.0 for k in METRICS}
                    rep.stats["n_eval"] = 0
                rep.seam_max, rep.seam_rms = seam_jumps(truth, res.mesh, res.partition)
            except ShapeExtrapError as exc:
                rep.ok = False
                rep.error = str(exc)
                logger.warning("trial %d/%s/%s failed: %s", i, frac, m, exc)
            reports.append(rep)
    return reports, heat


def _warm_up(meshes, mean_v, methods, d_feather, d_tps, axis, direction, tps_kwargs):
    """One untimed pass so that first-call overheads do not land in a trial."""
    _one_left_out(0, meshes, mean_v, (DEFAULT_FRACTIONS[-1],), methods, d_feather, d_tps, axis,
                  direction, tps_kwargs)


def run_loo_extrapolation(corpus, fractions=DEFAULT_FRACTIONS, methods=METHODS,
                          d_feather=D_FEATHER, d_tps=D_TPS, axis=0, direction="max",
                          workers=1, warm_up=True, tps_kwargs=None, progress=None):
    """Leave-one-out cropping experiment.

    For each left-out shape a model is built from the rest; for each crop
    fraction the left-out shape is cropped, projected with all modes and
    completed by every method. A trial that raises is recorded with
    ``ok=False`` and the run continues.

    ``workers > 1`` runs left-out shapes concurrently; results are merged in
    left-out order so reports do not depend on the worker count (timings
    aside).
    """
    meshes = list(corpus)
    if len(meshes) < 3:
        raise ValueError("leave-one-out needs at least 3 shapes")
    fractions = tuple(fractions)
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    tps_kwargs = dict(tps_kwargs or {})
    gpa = generalized_procrustes(meshes)
    mean_v = gpa.mean
    mean_shape = meshes[0].with_vertices(mean_v)
    if warm_up:
        _warm_up(meshes, mean_v, methods, d_feather, d_tps, axis, direction, tps_kwargs)

    def job(i):
        out = _one_left_out(i, meshes, mean_v, fractions, methods, d_feather, d_tps, axis,
                            direction, tps_kwargs)
        if progress is not None:
            progress(i)
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, range(len(meshes))))
    else:
        results = [job(i) for i in range(len(meshes))]

    reports = []
    heat = {}
    for reps, h in results:
        reports.extend(reps)
        for key, acc in h.items():
            if key in heat:
                heat[key].merge(acc)
            else:
                heat[key] = acc
    heatmaps = {key: emit_heatmap(mean_shape, acc) for key, acc in sorted(heat.items())}
    aggs = aggregate(reports)
    return LooExtrapolationResult(
        reports, aggs, improvements(aggs), heatmaps, mean_shape, fractions, methods
    )


def aggregate(reports):
    """Mean, standard deviation and standard error per (fraction, method)."""
    groups = {}
    for r in reports:
        if r.ok:
            groups.setdefault((r.fraction, r.method), []).append(r)
    out = []
    for (frac, m), reps in sorted(groups.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]))):
        row = {"fraction": frac, "method": m, "n": len(reps)}
        for key in METRICS + ("seam_max",):
            vals = np.array([r.stats[key] if key in r.stats else getattr(r, key) for r in reps])
            row[key] = float(vals.mean())
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            row[key + "_std"] = sd
            row[key + "_sem"] = sd / np.sqrt(len(vals))
        for stage in ("projection", "band", "tps_build", "tps_evaluate", "assembly", "total",
                      "with_projection"):
            vals = [r.timings[stage] for r in reps if stage in r.timings]
            if vals:
                row["time_" + stage] = float(np.mean(vals))
        row["overlap_count"] = int(np.median([r.overlap_count for r in reps]))
        out.append(row)
    return out


def improvements(aggs):
    """Average over fractions of the per-fraction mean gain of ``tps`` over the others."""
    table = {(a["fraction"], a["method"]): a for a in aggs}
    fracs = sorted({a["fraction"] for a in aggs})
    out = {}
    for other in ("feather", "po"):
        for key in METRICS:
            diffs = [
                table[(f, other)][key] - table[(f, "tps")][key]
                for f in fracs
                if (f, other) in table and (f, "tps") in table
            ]
            if diffs:
                out[f"tps_vs_{other}_{key}"] = float(np.mean(diffs))
    return out


@dataclass
class RuntimeFit:
    degree: int
    coefficients: np.ndarray  # highest power first, as np.polyval expects
    r2: float
    residual_rms: float
    build_share_largest: float = float("nan")

    def predict(self, n):
        return np.polyval(self.coefficients, n)


def polyfit_r2(x, y, degree):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    coeffs = np.polyfit(x, y, degree)
    resid = y - np.polyval(coeffs, x)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return coeffs, r2, float(np.sqrt(np.mean(resid**2)))


def fit_runtime_curve(reports, degree=2, stage="tps_build", n_buckets=10):
    """Least-squares polynomial of a TPS stage time against overlap size.

    The fit runs over the mean time of each distinct overlap size. Overlap
    sizes are also split into ``n_buckets`` equal-width buckets; for the
    largest non-empty one the share of TPS build time in the whole P+TPS time
    (projection included) is reported.
    """
    reps = [r for r in reports if r.ok and r.method == "tps" and stage in r.timings]
    sizes = np.array([r.overlap_count for r in reps])
    if len(np.unique(sizes)) < max(3, degree + 1):
        raise ValueError("need at least 3 distinct overlap sizes to fit a runtime curve")
    times = np.array([r.timings[stage] for r in reps])
    levels = np.unique(sizes)
    mean_t = np.array([times[sizes == s].mean() for s in levels])
    coeffs, r2, rms = polyfit_r2(levels, mean_t, degree)
    edges = np.linspace(sizes.min(), sizes.max(), n_buckets + 1)
    top = sizes >= edges[-2]
    build = np.mean([r.timings["tps_build"] for r, m in zip(reps, top) if m])
    total = np.mean([r.timings.get("with_projection", r.timings["total"])
                     for r, m in zip(reps, top) if m])
    return RuntimeFit(degree, coeffs, r2, rms, float(build / total) if total > 0 else float("nan"))
