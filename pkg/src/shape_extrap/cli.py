"""Command-line interface: ``shape-extrap <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .align import GPA_MAX_ITERS, GPA_TOL
from .distance import surface_error_stats
from .errors import ShapeExtrapError
from .extrapolate import D_FEATHER, D_TPS, METHODS, extrapolate
from .harness import DEFAULT_FRACTIONS, fit_runtime_curve, run_loo_extrapolation
from .mesh import compute_partition
from .ssm import build_ssm_from_corpus, project
from .synthetic import TEMPLATES, SyntheticCorpusSpec, generate_synthetic_corpus

logger = logging.getLogger("shape_extrap")


class CliError(Exception):
    pass


def parse_fractions(text):
    """``"5:50:5"`` -> (5, 10, ..., 50); also accepts comma lists."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(5.0)
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError
            start, stop, step = parts
            vals = np.arange(start, stop + step * 1e-9, step)
        else:
            vals = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction range {text!r}; use start:stop:step") from None
    out = tuple(int(v) if float(v).is_integer() else float(v) for v in vals)
    if not out or any(not 0 < v <= 50 for v in out):
        raise argparse.ArgumentTypeError("fractions must lie in (0, 50]")
    return out


def _mesh_paths(items):
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths += sorted(x for x in p.iterdir() if x.suffix.lower() in (".ply", ".obj"))
        else:
            paths.append(p)
    if not paths:
        raise CliError("no mesh files given")
    return paths


def _load_partition(path, n_vertices):
    if path is None:
        return np.zeros(0, dtype=np.int64), None
    n, unknown, crop = io.read_partition(path)
    if n != n_vertices:
        raise CliError(f"partition is for {n} vertices, mesh has {n_vertices}")
    return unknown, crop


def _known_from_unknown(n, unknown):
    mask = np.ones(n, dtype=bool)
    mask[unknown] = False
    return np.flatnonzero(mask)


def cmd_gen_synthetic(args):
    spec = SyntheticCorpusSpec(
        template=args.template, n_vertices=args.vertices, n_shapes=args.shapes,
        n_modes=args.modes, amplitude_mm=args.amplitude_mm, noise_mm=args.noise_mm,
        seed=args.seed,
    )
    corpus = generate_synthetic_corpus(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(corpus):
        io.write_ply(out / f"shape_{i:03d}.ply", m)
    print(f"wrote {len(corpus)} meshes ({corpus[0].n_vertices} vertices) to {out}")


def cmd_build_ssm(args):
    meshes = [io.read_mesh(p) for p in _mesh_paths(args.meshes)]
    model = build_ssm_from_corpus(meshes, tol=args.gpa_tol, max_iters=args.max_iters)
    io.write_model(args.out_model, model)
    print(f"model: {model.n_vertices} vertices, {model.n_modes} modes, "
          f"{model.sample_count} samples -> {args.out_model}")


def cmd_project(args):
    model = io.read_model(args.model)
    mesh = io.read_mesh(args.mesh)
    unknown, _ = _load_partition(args.partition, mesh.n_vertices)
    known = _known_from_unknown(mesh.n_vertices, unknown)
    res = project(mesh, known, model, args.num_modes)
    if args.out_mesh:
        io.write_mesh(args.out_mesh, res.instance)
    if args.out_coeffs:
        t = res.transform
        io.write_summary(args.out_coeffs, {
            "coefficients": res.coefficients,
            "transform": {"scale": t.scale, "rotation": t.rotation, "translation": t.translation},
        })
    print(f"projected onto {len(res.coefficients)} modes")


def cmd_extrapolate(args):
    model = io.read_model(args.model)
    mesh = io.read_mesh(args.mesh)
    unknown, _ = _load_partition(args.partition, mesh.n_vertices)
    known = _known_from_unknown(mesh.n_vertices, unknown)
    t0 = time.perf_counter()
    proj = project(mesh, known, model)
    t_proj = time.perf_counter() - t0
    kw = {}
    if args.method == "tps":
        kw = {"kernel": args.tps_kernel, "regularization": args.tps_reg}
    res = extrapolate(args.method, mesh, known, proj.instance, args.depth, **kw)
    io.write_mesh(args.out_mesh, res.mesh)
    timings = {"projection": t_proj, **res.timings}
    if args.timings_out:
        io.write_summary(args.timings_out, {
            "method": args.method, "overlap_count": res.overlap_count,
            "unknown_count": int(len(unknown)), "timings": timings,
        })
    print(f"{args.method}: {len(unknown)} unknown vertices, overlap {res.overlap_count}, "
          f"total {1000 * timings['total']:.1f} ms")


def _print_summary(result, fit):
    print(f"{'frac':>5} {'method':>8} {'n':>3} {'rms_surf':>9} {'max_surf':>9} "
          f"{'rms_vert':>9} {'seam_max':>9} {'ms':>8}")
    for a in result.aggregates:
        print(f"{a['fraction']:>5} {a['method']:>8} {a['n']:>3} {a['rms_surface']:9.3f} "
              f"{a['max_surface']:9.3f} {a['rms_vertex']:9.3f} {a['seam_max']:9.3f} "
              f"{1000 * a.get('time_with_projection', 0.0):8.1f}")
    for k, v in sorted(result.improvements.items()):
        print(f"{k}: {v:.3f} mm")
    if fit is not None:
        print(f"tps build time fit: r2={fit.r2:.4f}, build share (largest overlap) "
              f"{100 * fit.build_share_largest:.1f}%")


def cmd_loo_eval(args):
    meshes = [io.read_mesh(p) for p in _mesh_paths(args.meshes)]
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    result = run_loo_extrapolation(
        meshes, fractions=args.fractions, methods=methods, d_feather=args.d_feather,
        d_tps=args.d_tps, axis=args.axis, direction=args.direction, workers=args.workers,
    )
    fit = None
    if "tps" in methods:
        try:
            fit = fit_runtime_curve(result.reports)
        except ValueError as exc:
            logger.info("runtime fit skipped: %s", exc)
    if args.report_out:
        io.write_records(args.report_out, [r.as_record() for r in result.reports])
        summary_path = args.summary_out or str(Path(args.report_out).with_suffix(".summary.json"))
        summary = {"aggregates": result.aggregates, "improvements": result.improvements}
        if fit is not None:
            summary["runtime_fit"] = {
                "degree": fit.degree, "coefficients": fit.coefficients, "r2": fit.r2,
                "residual_rms": fit.residual_rms, "build_share_largest": fit.build_share_largest,
            }
        io.write_summary(summary_path, summary)
    if args.heatmaps_out:
        out = Path(args.heatmaps_out)
        out.mkdir(parents=True, exist_ok=True)
        for (m, frac), hm in result.heatmaps.items():
            io.write_ply(out / f"heat_{m}_{frac:02}.ply", hm.mesh, quality=hm.values, exact=hm.exact)
    _print_summary(result, fit)


def cmd_stats(args):
    truth = io.read_mesh(args.truth)
    est = io.read_mesh(args.estimate)
    unknown, _ = _load_partition(args.partition, truth.n_vertices)
    if args.region == "unknown":
        region = unknown
    else:
        part = compute_partition(truth, unknown, args.depth)
        region = np.union1d(unknown, part.overlap)
    if len(region) == 0:
        raise CliError("evaluation region is empty")
    st = surface_error_stats(truth, est, region)
    print(io.dumps_record(st.as_dict()))


def build_parser():
    p = argparse.ArgumentParser(prog="shape-extrap", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a seeded synthetic mesh corpus")
    g.add_argument("--template", choices=TEMPLATES, default="skull")
    g.add_argument("--shapes", type=int, default=20)
    g.add_argument("--modes", type=int, default=8)
    g.add_argument("--vertices", type=int, default=SyntheticCorpusSpec.n_vertices)
    g.add_argument("--amplitude-mm", type=float, default=SyntheticCorpusSpec.amplitude_mm)
    g.add_argument("--noise-mm", type=float, default=SyntheticCorpusSpec.noise_mm)
    g.add_argument("--seed", type=int, default=SyntheticCorpusSpec.seed)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_synthetic)

    b = sub.add_parser("build-ssm", help="GPA + PCA over a mesh corpus")
    b.add_argument("--meshes", nargs="+", required=True, help="mesh files or a directory")
    b.add_argument("--out-model", required=True)
    b.add_argument("--gpa-tol", type=float, default=GPA_TOL)
    b.add_argument("--max-iters", type=int, default=GPA_MAX_ITERS)
    b.set_defaults(func=cmd_build_ssm)

    pr = sub.add_parser("project", help="project a (partial) mesh onto a model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--mesh", required=True)
    pr.add_argument("--partition", help="partition file; omitted means all vertices known")
    pr.add_argument("--num-modes", type=int, default=None)
    pr.add_argument("--out-mesh")
    pr.add_argument("--out-coeffs")
    pr.set_defaults(func=cmd_project)

    e = sub.add_parser("extrapolate", help="complete a partial mesh")
    e.add_argument("--model", required=True)
    e.add_argument("--mesh", required=True)
    e.add_argument("--partition", required=True)
    e.add_argument("--method", choices=METHODS, required=True)
    e.add_argument("--depth", type=int, default=None,
                   help=f"overlap depth (default {D_FEATHER} for feather, {D_TPS} for tps)")
    e.add_argument("--tps-kernel", choices=("r", "r2logr"), default="r")
    e.add_argument("--tps-reg", type=float, default=0.0)
    e.add_argument("--out-mesh", required=True)
    e.add_argument("--timings-out")
    e.set_defaults(func=cmd_extrapolate)

    lo = sub.add_parser("loo-eval", help="leave-one-out cropping experiment")
    lo.add_argument("--meshes", nargs="+", required=True)
    lo.add_argument("--fractions", type=parse_fractions, default=DEFAULT_FRACTIONS)
    lo.add_argument("--axis", type=int, choices=(0, 1, 2), default=0)
    lo.add_argument("--direction", choices=("max", "min"), default="max")
    lo.add_argument("--methods", default=",".join(METHODS))
    lo.add_argument("--d-feather", type=int, default=D_FEATHER)
    lo.add_argument("--d-tps", type=int, default=D_TPS)
    lo.add_argument("--workers", type=int, default=1)
    lo.add_argument("--report-out")
    lo.add_argument("--summary-out")
    lo.add_argument("--heatmaps-out")
    lo.set_defaults(func=cmd_loo_eval)

    s = sub.add_parser("stats", help="error statistics of an estimate against the truth")
    s.add_argument("--truth", required=True)
    s.add_argument("--estimate", required=True)
    s.add_argument("--partition", required=True)
    s.add_argument("--region", choices=("unknown", "unknown+overlap"), default="unknown")
    s.add_argument("--depth", type=int, default=D_FEATHER)
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ShapeExtrapError, CliError, OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
