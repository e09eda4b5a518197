import json
import subprocess
import sys

import numpy as np
import pytest

from shape_extrap import io
from shape_extrap.cli import main, parse_fractions


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-synthetic", "--vertices", "1000", "--shapes", "6", "--modes", "2",
                 "--out-dir", str(d / "corpus")]) == 0
    assert main(["build-ssm", "--meshes", str(d / "corpus"), "--out-model", str(d / "m.ssm")]) == 0
    m = io.read_mesh(d / "corpus" / "shape_000.ply")
    x = m.vertices[:, 0]
    io.write_partition(d / "p.json", m.n_vertices, np.flatnonzero(x > np.percentile(x, 75)))
    return d


def test_parse_fractions():
    assert parse_fractions("5:50:5") == tuple(range(5, 55, 5))
    assert parse_fractions("10,20") == (10, 20)
    import argparse

    for bad in ("0:10:5", "5:60:5", "a:b", "5:10:0"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_fractions(bad)


def test_project(workdir, capsys):
    d = workdir
    assert main(["project", "--model", str(d / "m.ssm"), "--mesh", str(d / "corpus" / "shape_001.ply"),
                 "--num-modes", "3", "--out-mesh", str(d / "p.obj"), "--out-coeffs", str(d / "c.json")]) == 0
    doc = json.loads((d / "c.json").read_text())
    assert len(doc["coefficients"]) == 3
    assert io.read_mesh(d / "p.obj").n_vertices == 1000


@pytest.mark.parametrize("method", ["po", "feather", "tps"])
def test_extrapolate_and_stats(workdir, capsys, method):
    d = workdir
    out = d / f"o_{method}.ply"
    assert main(["extrapolate", "--model", str(d / "m.ssm"), "--mesh", str(d / "corpus" / "shape_002.ply"),
                 "--partition", str(d / "p.json"), "--method", method, "--out-mesh", str(out),
                 "--timings-out", str(d / f"t_{method}.json")]) == 0
    assert "total" in json.loads((d / f"t_{method}.json").read_text())["timings"]
    capsys.readouterr()
    assert main(["stats", "--truth", str(d / "corpus" / "shape_002.ply"), "--estimate", str(out),
                 "--partition", str(d / "p.json")]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["rms_vertex"] >= rec["rms_surface"] >= 0


def test_loo_eval(workdir, capsys):
    d = workdir
    assert main(["loo-eval", "--meshes", str(d / "corpus"), "--fractions", "10:30:10",
                 "--report-out", str(d / "r.jsonl"), "--heatmaps-out", str(d / "heat")]) == 0
    recs = io.read_records(d / "r.jsonl")
    assert len(recs) == 6 * 3 * 3
    summary = json.loads((d / "r.summary.json").read_text())
    assert "tps_vs_po_rms_vertex" in summary["improvements"]
    assert (d / "heat" / "heat_tps_20.ply").exists()
    _, props = io.read_ply(d / "heat" / "heat_po_10.ply")
    assert set(props) >= {"quality", "exact"}


def test_failure_is_one_json_line(workdir, capsys):
    d = workdir
    rc = main(["extrapolate", "--model", str(d / "missing.ssm"), "--mesh", str(d / "corpus" / "shape_000.ply"),
               "--partition", str(d / "p.json"), "--method", "po", "--out-mesh", str(d / "x.ply")])
    err = capsys.readouterr().err.strip().splitlines()
    assert rc != 0 and len(err) == 1
    doc = json.loads(err[0])
    assert doc["error"] == "FileNotFoundError" and doc["command"] == "extrapolate"


def test_partition_size_mismatch(workdir, capsys):
    d = workdir
    io.write_partition(d / "small.json", 10, [1])
    rc = main(["stats", "--truth", str(d / "corpus" / "shape_000.ply"),
               "--estimate", str(d / "corpus" / "shape_001.ply"), "--partition", str(d / "small.json")])
    assert rc == 1
    assert json.loads(capsys.readouterr().err)["error"] == "CliError"


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "shape_extrap", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "loo-eval" in r.stdout
