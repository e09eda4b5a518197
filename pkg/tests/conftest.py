import numpy as np
import pytest

from shape_extrap.mesh import TriMesh
from shape_extrap.synthetic import SyntheticCorpusSpec, generate_synthetic_corpus, sphere_mesh


def strip_mesh(n):
    """A triangulated 2 x n ladder; vertex i and i+n share column i."""
    v = np.array([[i, j, 0.0] for j in range(2) for i in range(n)], dtype=float)
    tri = []
    for i in range(n - 1):
        a, b, c, d = i, i + 1, n + i, n + i + 1
        tri += [[a, b, c], [b, d, c]]
    return TriMesh(v, np.array(tri))


@pytest.fixture(scope="session")
def sphere1k():
    v, tri = sphere_mesh(1000)
    return TriMesh(v * 50.0, tri)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SyntheticCorpusSpec(n_vertices=1500, n_shapes=10, n_modes=4, noise_mm=0.05, seed=3)
    return generate_synthetic_corpus(spec)
