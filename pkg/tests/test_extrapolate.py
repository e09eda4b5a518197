import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from shape_extrap.extrapolate import (
    extrapolate,
    extrapolate_feather,
    extrapolate_po,
    extrapolate_tps,
    feather_weights,
    seam_jumps,
)
from shape_extrap.errors import TopologyMismatchError

from conftest import strip_mesh


@pytest.fixture(scope="module")
def case(sphere1k):
    """Patient = sphere, instance = bumped copy; unknown cap at z > 25."""
    v = sphere1k.vertices
    instance = sphere1k.with_vertices(v * 1.05 + [0.3, -0.2, 0.1])
    unknown = np.flatnonzero(v[:, 2] > 25)
    known = np.setdiff1d(np.arange(len(v)), unknown)
    return sphere1k, instance, known, unknown


def test_feather_endpoints():
    w = feather_weights(np.arange(5), 4)
    np.testing.assert_array_equal(w, [1.0, 0.75, 0.5, 0.25, 0.0])


def test_feather_strip_example():
    # d=4, depth 1: 3/4 of the instance (4,0,0) plus 1/4 of the patient (0,0,0)
    m = strip_mesh(12)
    patient = m.with_vertices(np.zeros((24, 3)))
    inst = m.with_vertices(np.tile([4.0, 0.0, 0.0], (24, 1)))
    unknown = [10, 11, 22, 23]
    known = np.setdiff1d(np.arange(24), unknown)
    # the zero-vertex patient is degenerate only in geometry, which extrapolation never validates
    res = extrapolate_feather(patient, known, inst, d=4)
    assert res.partition.depth[8] == 1
    np.testing.assert_array_equal(res.mesh.vertices[8], [3.0, 0.0, 0.0])
    np.testing.assert_array_equal(res.mesh.vertices[9], [4.0, 0.0, 0.0])  # depth 0 -> r
    np.testing.assert_array_equal(res.mesh.vertices[5], [0.0, 0.0, 0.0])  # depth 4 -> q
    np.testing.assert_array_equal(res.mesh.vertices[10], [4.0, 0.0, 0.0])


def test_feather_band_exact(case):
    patient, instance, known, unknown = case
    d = 6
    res = extrapolate_feather(patient, known, instance, d)
    depth = res.partition.depth
    out = res.mesh.vertices
    np.testing.assert_array_equal(out[depth == 0], instance.vertices[depth == 0])
    np.testing.assert_array_equal(out[depth == d], patient.vertices[depth == d])
    outside = (depth < 0) & ~np.isin(np.arange(len(out)), unknown)
    np.testing.assert_array_equal(out[outside], patient.vertices[outside])
    band = res.partition.overlap
    assert np.any(np.any(out[band] != patient.vertices[band], axis=1))


def test_po_splice_oracle(case):
    patient, instance, known, unknown = case
    res = extrapolate_po(patient, known, instance)
    expect = patient.vertices.copy()
    for i in unknown:
        expect[i] = instance.vertices[i]
    np.testing.assert_array_equal(res.mesh.vertices, expect)
    np.testing.assert_array_equal(res.eval_region, unknown)


@pytest.mark.parametrize("method", ["po", "tps"])
def test_known_vertices_bit_identical(case, method):
    patient, instance, known, _ = case
    res = extrapolate(method, patient, known, instance)
    np.testing.assert_array_equal(res.mesh.vertices[known], patient.vertices[known])
    assert res.mesh.vertices.tobytes() != patient.vertices.tobytes()


def test_tps_reduces_to_po_when_instance_fits(case):
    patient, _, known, unknown = case
    # instance agrees with the patient on the band: zero displacement field
    instance = patient.with_vertices(patient.vertices.copy())
    inst_v = instance.vertices.copy()
    inst_v[unknown] += [0.0, 0.0, 2.0]
    instance = patient.with_vertices(inst_v)
    a = extrapolate_tps(patient, known, instance)
    b = extrapolate_po(patient, known, instance)
    np.testing.assert_allclose(a.mesh.vertices, b.mesh.vertices, atol=1e-9)


def test_tps_recovers_rigid_offset(case):
    patient, _, known, unknown = case
    # instance = patient moved rigidly; TPS undoes the motion everywhere
    r = Rotation.from_rotvec([0.05, -0.02, 0.03]).as_matrix()
    instance = patient.with_vertices(patient.vertices @ r.T + [1.0, 2.0, -0.5])
    res = extrapolate_tps(patient, known, instance)
    np.testing.assert_allclose(res.mesh.vertices[unknown], patient.vertices[unknown], atol=1e-8)
    po = extrapolate_po(patient, known, instance)
    assert np.abs(po.mesh.vertices[unknown] - patient.vertices[unknown]).max() > 0.5


def test_feather_corrupts_band_po_does_not(case):
    patient, instance, known, _ = case
    f = extrapolate_feather(patient, known, instance, 5)
    band = f.partition.overlap
    err_f = np.linalg.norm(f.mesh.vertices[band] - patient.vertices[band], axis=1)
    assert err_f.max() > 0.5
    po = extrapolate_po(patient, known, instance)
    np.testing.assert_array_equal(po.mesh.vertices[band], patient.vertices[band])


def test_empty_unknown_is_noop(case):
    patient, instance, _, _ = case
    allk = np.arange(patient.n_vertices)
    for m in ("po", "feather", "tps"):
        res = extrapolate(m, patient, allk, instance)
        np.testing.assert_array_equal(res.mesh.vertices, patient.vertices)


def test_seam_metric(case):
    patient, instance, known, _ = case
    po = extrapolate_po(patient, known, instance)
    tps = extrapolate_tps(patient, known, instance)
    jmax_po, rms_po = seam_jumps(patient, po.mesh, po.partition)
    jmax_t, rms_t = seam_jumps(patient, tps.mesh, tps.partition)
    assert jmax_t <= jmax_po and rms_t <= rms_po
    assert seam_jumps(patient, patient, po.partition) == (0.0, 0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 30))
def test_feather_weights_in_unit_interval(seed, d):
    n = np.random.default_rng(seed).integers(0, d + 1, size=50)
    w = feather_weights(n, d)
    assert np.all((0 <= w) & (w <= 1))
    np.testing.assert_array_equal(np.diff(feather_weights(np.arange(d + 1), d)) < 0, True)


def test_timings_and_topology(case):
    patient, instance, known, _ = case
    res = extrapolate_tps(patient, known, instance)
    assert set(res.timings) >= {"band", "tps_build", "tps_evaluate", "assembly", "total"}
    assert res.timings["total"] >= res.timings["tps_build"]
    with pytest.raises(TopologyMismatchError):
        extrapolate_po(patient, known, strip_mesh(5))
    with pytest.raises(ValueError):
        extrapolate("nope", patient, known, instance)
