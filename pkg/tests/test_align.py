import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from shape_extrap.align import SimilarityTransform, generalized_procrustes, procrustes_align
from shape_extrap.errors import RankDeficiencyError


def random_similarity(rng):
    return SimilarityTransform(
        float(rng.uniform(0.5, 2.0)),
        Rotation.from_rotvec(rng.normal(size=3)).as_matrix(),
        rng.normal(scale=30, size=3),
    )


def test_identity():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(30, 3))
    t = procrustes_align(p, p)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t.translation, 0, atol=1e-12)


def test_recovers_scale_and_rotation():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(25, 3))
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    q = 2.0 * p @ rz.T + [1, 2, 3]
    for scaling in ("lsq", "tangent"):
        t = procrustes_align(p, q, scaling=scaling)
        assert t.scale == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(t.rotation, rz, atol=1e-12)
        np.testing.assert_allclose(t.apply(p), q, atol=1e-12)


def test_noisy_fit_matches_numerical_oracle():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(20, 3)) * 10
    true = random_similarity(rng)
    q = true.apply(p) + rng.normal(scale=0.5, size=p.shape)

    def resid(x):
        r = Rotation.from_rotvec(x[1:4]).as_matrix()
        return (np.exp(x[0]) * p @ r.T + x[4:] - q).ravel()

    x0 = np.concatenate([[np.log(true.scale)], Rotation.from_matrix(true.rotation).as_rotvec(), true.translation])
    sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    t = procrustes_align(p, q)
    assert t.scale == pytest.approx(np.exp(sol.x[0]), abs=1e-6)
    np.testing.assert_allclose(t.rotation, Rotation.from_rotvec(sol.x[1:4]).as_matrix(), atol=1e-6)
    np.testing.assert_allclose(t.translation, sol.x[4:], atol=1e-6)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0)


def test_reflection_excluded():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(15, 3))
    mirrored = p * [-1, 1, 1]
    t = procrustes_align(p, mirrored)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0)


def test_collinear_rejected():
    p = np.outer(np.arange(10.0), [1, 2, 3])
    with pytest.raises(RankDeficiencyError):
        procrustes_align(p, p)
    with pytest.raises(RankDeficiencyError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))


def test_subset_fit():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(40, 3))
    true = random_similarity(rng)
    q = true.apply(p)
    q[30:] += 100.0  # garbage outside the subset
    t = procrustes_align(p, q, vertex_subset=np.arange(30))
    np.testing.assert_allclose(t.as_matrix(), true.as_matrix(), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_transform_algebra(seed):
    rng = np.random.default_rng(seed)
    a, b = random_similarity(rng), random_similarity(rng)
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.inverse().apply(a.apply(p)), p, atol=1e-9)
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-9)
    np.testing.assert_allclose(a.as_matrix() @ np.append(p[0], 1), np.append(a.apply(p[0]), 1), atol=1e-9)


def oracle_gpa(shapes, tol=1e-12, iters=500):
    """Independent GPA loop: scipy's vector alignment for rotations, tangent scale."""

    def norm(x):
        x = x - x.mean(0)
        return x / np.linalg.norm(x)

    def align(x, target):
        xc = x - x.mean(0)
        rot, _ = Rotation.align_vectors(target, xc)
        y = rot.apply(xc)
        s = np.sum(target * target) / np.sum(y * target)
        return s * y

    mean = norm(shapes[0])
    for _ in range(iters):
        new = norm(np.mean([align(x, mean) for x in shapes], axis=0))
        rot, _ = Rotation.align_vectors(mean, new)
        new = rot.apply(new)
        done = np.sqrt(np.sum((new - mean) ** 2) / len(mean)) < tol
        mean = new
        if done:
            break
    return mean, [align(x, mean) for x in shapes]


def test_gpa_matches_oracle(small_corpus):
    shapes = [m.vertices[::5] for m in small_corpus]

    class P:  # bare point clouds carrying only the attributes GPA reads
        def __init__(self, v):
            self.vertices = v

        def same_topology(self, other):
            return True

        def with_vertices(self, v):
            return P(v)

    res = generalized_procrustes([P(s) for s in shapes], tol=1e-12, max_iters=500)
    mean, aligned = oracle_gpa(shapes)
    assert res.converged
    np.testing.assert_allclose(res.mean, mean, atol=1e-8)
    for a, b in zip(res.aligned, aligned):
        np.testing.assert_allclose(a.vertices, b, atol=1e-8)


def test_gpa_fixed_point(small_corpus):
    res = generalized_procrustes(small_corpus)
    assert res.converged
    assert np.allclose(res.mean.mean(0), 0, atol=1e-12)
    assert np.linalg.norm(res.mean) == pytest.approx(1.0)
    avg = np.mean([m.vertices for m in res.aligned], axis=0)
    # tangent-space alignment makes the average exactly the unit mean at convergence
    np.testing.assert_allclose(avg, res.mean, atol=1e-8)
    for m in res.aligned:
        again = procrustes_align(m.vertices, res.mean, scaling="tangent")
        assert again.scale == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_allclose(again.rotation, np.eye(3), atol=1e-8)


def test_gpa_similarity_invariance(small_corpus):
    rng = np.random.default_rng(5)
    base = generalized_procrustes(small_corpus)
    moved = [m.with_vertices(random_similarity(rng).apply(m.vertices)) for m in small_corpus]
    res = generalized_procrustes(moved)
    # identical up to one global rotation (the gauge)
    r = procrustes_align(res.mean, base.mean).rotation
    for a, b in zip(res.aligned, base.aligned):
        np.testing.assert_allclose(a.vertices @ r.T, b.vertices, atol=1e-7)
