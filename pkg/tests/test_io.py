import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shape_extrap import io
from shape_extrap.errors import (
    FormatError,
    HeaderError,
    IndexOutOfRangeError,
    NonTriangleFaceError,
    TruncatedPayloadError,
)
from shape_extrap.mesh import TriMesh
from shape_extrap.ssm import build_ssm_from_corpus, project
from shape_extrap.synthetic import sphere_mesh


def random_mesh(rng, n=200):
    v, tri = sphere_mesh(n)
    return TriMesh(v * rng.uniform(10, 100) + rng.normal(size=(n, 3)) * 1e-3 + rng.normal(size=3) * 1e3, tri)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_ply_roundtrip_bit_exact(tmp_path_factory, seed, binary):
    rng = np.random.default_rng(seed)
    m = random_mesh(rng)
    q = rng.normal(size=m.n_vertices)
    ex = rng.random(m.n_vertices) < 0.5
    p = tmp_path_factory.mktemp("ply") / "m.ply"
    io.write_ply(p, m, quality=q, exact=ex, binary=binary)
    back, props = io.read_ply(p)
    assert back.vertices.tobytes() == m.vertices.tobytes()
    np.testing.assert_array_equal(back.triangles, m.triangles)
    assert props["quality"].tobytes() == q.tobytes()
    np.testing.assert_array_equal(props["exact"].astype(bool), ex)


def test_ply_obj_cross_format(tmp_path):
    m = random_mesh(np.random.default_rng(1))
    io.write_mesh(tmp_path / "a.obj", m)
    io.write_mesh(tmp_path / "b.ply", io.read_mesh(tmp_path / "a.obj"))
    back = io.read_mesh(tmp_path / "b.ply")
    np.testing.assert_array_equal(back.triangles, m.triangles)
    assert np.abs(back.vertices - m.vertices).max() < 1e-6 * np.abs(m.vertices).max()


def test_obj_negative_indices_and_quads(tmp_path):
    p = tmp_path / "a.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    np.testing.assert_array_equal(io.read_obj(p).triangles, [[0, 1, 2]])
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n\nf 1 2 3 4\n")
    with pytest.raises(NonTriangleFaceError, match="line 6"):
        io.read_obj(p)
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(IndexOutOfRangeError):
        io.read_obj(p)


def test_ply_errors(tmp_path):
    m = random_mesh(np.random.default_rng(2), 50)
    p = tmp_path / "m.ply"
    io.write_ply(p, m)
    data = p.read_bytes()
    (tmp_path / "t.ply").write_bytes(data[:-7])
    with pytest.raises(TruncatedPayloadError):
        io.read_ply(tmp_path / "t.ply")
    (tmp_path / "h.ply").write_bytes(data.replace(b"element vertex", b"element vertx", 1))
    with pytest.raises(HeaderError):
        io.read_ply(tmp_path / "h.ply")
    (tmp_path / "n.ply").write_bytes(b"plx\n" + data[4:])
    with pytest.raises(FormatError):
        io.read_ply(tmp_path / "n.ply")
    (tmp_path / "x.ply").write_bytes(data + b"\0")
    with pytest.raises(FormatError):
        io.read_ply(tmp_path / "x.ply")
    q = tmp_path / "q.ply"
    q.write_text("ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\nproperty double y\n"
                 "property double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
                 "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    with pytest.raises(NonTriangleFaceError):
        io.read_ply(q)


@pytest.fixture(scope="module")
def model(small_corpus):
    return build_ssm_from_corpus(small_corpus)


def test_model_roundtrip_and_projection(tmp_path, model, small_corpus):
    io.write_model(tmp_path / "m.ssm", model)
    back = io.read_model(tmp_path / "m.ssm")
    for name in ("mean", "modes", "stddevs"):
        assert getattr(back, name).tobytes() == getattr(model, name).tobytes()
    np.testing.assert_array_equal(back.triangles, model.triangles)
    known = np.arange(0, model.n_vertices, 2)
    a = project(small_corpus[0], known, model)
    b = project(small_corpus[0], known, back)
    assert a.instance.vertices.tobytes() == b.instance.vertices.tobytes()


def test_model_corruption(tmp_path, model):
    io.write_model(tmp_path / "m.ssm", model)
    data = (tmp_path / "m.ssm").read_bytes()
    (tmp_path / "t.ssm").write_bytes(data[:-5])
    with pytest.raises(TruncatedPayloadError, match="truncated payload"):
        io.read_model(tmp_path / "t.ssm")
    (tmp_path / "b.ssm").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        io.read_model(tmp_path / "b.ssm")
    (tmp_path / "x.ssm").write_bytes(data + b"1")
    with pytest.raises(FormatError, match="trailing"):
        io.read_model(tmp_path / "x.ssm")
    # scale one mode so the Gram check fails
    bad = model.__class__(model.mean, model.modes * 1.01, model.stddevs, model.triangles, model.sample_count)
    io.write_model(tmp_path / "g.ssm", bad)
    with pytest.raises(FormatError, match="orthonormal"):
        io.read_model(tmp_path / "g.ssm")


def test_partition_roundtrip_and_validation(tmp_path):
    p = tmp_path / "p.json"
    io.write_partition(p, 10, [7, 2, 2, 5], crop={"axis": 0, "fraction": 20})
    n, idx, crop = io.read_partition(p)
    assert n == 10 and idx.tolist() == [2, 5, 7] and crop == {"axis": 0, "fraction": 20}
    p.write_text('{"version": 1, "n_vertices": 5, "unknown_indices": [1, 9]}')
    with pytest.raises(IndexOutOfRangeError, match=r"unknown_indices\[1\]"):
        io.read_partition(p)
    p.write_text('{"version": 1, "n_vertices": 5, "unknown_indices": [3, 1]}')
    with pytest.raises(FormatError):
        io.read_partition(p)
    p.write_text('{"version": 1, "n_vertices": 5')
    with pytest.raises(FormatError, match="line 1"):
        io.read_partition(p)


def test_records_roundtrip(tmp_path):
    recs = [{"a": np.float64(1.5), "b": np.arange(3)}, {"c": {"d": np.int64(2)}}]
    io.write_records(tmp_path / "r.jsonl", recs)
    assert io.read_records(tmp_path / "r.jsonl") == [{"a": 1.5, "b": [0, 1, 2]}, {"c": {"d": 2}}]
    (tmp_path / "bad.jsonl").write_text('{"a": 1}\n{oops\n')
    with pytest.raises(FormatError, match="line 2"):
        io.read_records(tmp_path / "bad.jsonl")


def test_unknown_extension(tmp_path):
    with pytest.raises(FormatError):
        io.read_mesh(tmp_path / "m.stl")
