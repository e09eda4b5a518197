"""Seeded synthetic corpora of topologically consistent closed surfaces.

Every shape is ``S_i(template + sum_k c_ik D_k + noise_i)`` where ``D_k`` are
fixed smooth displacement fields, ``c_ik`` random latent coefficients
(centred over the corpus) and ``S_i`` a random similarity transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from .mesh import TriMesh

TEMPLATES = ("ellipsoid", "skull")


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    template: str = "skull"
    n_vertices: int = 20000
    n_shapes: int = 20
    n_modes: int = 8
    amplitude_mm: float = 4.0
    noise_mm: float = 0.1
    seed: int = 7
    mode_decay: float = 0.8
    pose_rotation_deg: float = 10.0
    pose_translation_mm: float = 20.0
    pose_scale_range: tuple = (0.9, 1.1)


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.column_stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
    )


def sphere_mesh(n_vertices):
    """Unit-sphere triangulation with outward-facing triangles."""
    u = fibonacci_sphere(n_vertices)
    tri = ConvexHull(u).simplices.astype(np.int64)
    a, b, c = u[tri[:, 0]], u[tri[:, 1]], u[tri[:, 2]]
    inward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    tri[inward] = tri[inward][:, [0, 2, 1]]
    # canonical order keeps the triangle list independent of qhull internals
    tri = tri[np.lexsort(tri.T[::-1])]
    return u, tri


def _skull_radius(u):
    """Smooth radial profile: an egg with a flattened front and a few ridges."""
    x, y, z = u[:, 0], u[:, 1], u[:, 2]
    r = 1.0 + 0.06 * np.exp(-((x - 0.6) ** 2 + (z - 0.55) ** 2) / 0.08)  # brow
    r -= 0.05 * np.exp(-((x - 0.9) ** 2 + y**2 + (z + 0.1) ** 2) / 0.15)  # face plane
    r += 0.04 * np.exp(-((x - 0.75) ** 2 + (z + 0.45) ** 2 + y**2) / 0.05)  # jaw
    r += 0.03 * np.exp(-(np.abs(y) - 0.85) ** 2 / 0.02 - z**2 / 0.3)  # cheekbones
    return r


def template_mesh(template="skull", n_vertices=6000):
    u, tri = sphere_mesh(n_vertices)
    if template == "ellipsoid":
        v = u * np.array([90.0, 70.0, 80.0])
    elif template == "skull":
        v = u * _skull_radius(u)[:, None] * np.array([95.0, 72.0, 82.0])
    else:
        raise ValueError(f"unknown template {template!r}; expected one of {TEMPLATES}")
    return TriMesh(v, tri)


def similarity_generators(vertices):
    """Flattened infinitesimal translation, rotation and scale fields at ``vertices``."""
    p = vertices - vertices.mean(axis=0)
    gens = []
    for k in range(3):
        t = np.zeros_like(p)
        t[:, k] = 1.0
        gens.append(t.reshape(-1))
    for k in range(3):
        axis = np.zeros(3)
        axis[k] = 1.0
        gens.append(np.cross(axis, p).reshape(-1))
    gens.append(p.reshape(-1))
    return np.array(gens)


def deformation_fields(template, n_modes, rng):
    """Smooth unit-RMS displacement fields orthogonal to similarity motions."""
    v = template.vertices
    u = (v - v.mean(0)) / np.abs(v - v.mean(0)).max()
    n = len(v)
    raw = []
    for _ in range(n_modes):
        field = np.zeros((n, 3))
        for comp in range(3):
            for _ in range(3):
                w = rng.normal(size=3) * 2.0
                field[:, comp] += rng.normal() * np.cos(u @ w + rng.uniform(0, 2 * np.pi))
        raw.append(field.reshape(-1))
    basis = np.vstack([similarity_generators(v), np.array(raw)])
    q, _ = np.linalg.qr(basis.T)
    fields = q[:, 7:].T
    # unit RMS vertex displacement
    return fields * np.sqrt(n)


def generate_synthetic_corpus(spec):
    """List of ``spec.n_shapes`` meshes sharing the template's triangles."""
    if spec.n_modes < 1:
        raise ValueError("need at least one latent mode")
    if spec.n_shapes < spec.n_modes + 2:
        raise ValueError("n_shapes must be at least n_modes + 2")
    rng = np.random.default_rng(spec.seed)
    tmpl = template_mesh(spec.template, spec.n_vertices)
    fields = deformation_fields(tmpl, spec.n_modes, rng)
    scales = spec.amplitude_mm * spec.mode_decay ** np.arange(spec.n_modes)
    coeffs = rng.normal(size=(spec.n_shapes, spec.n_modes)) * scales
    coeffs -= coeffs.mean(axis=0)
    base = tmpl.vertices.reshape(-1)
    center = tmpl.vertices.mean(axis=0)
    lo, hi = spec.pose_scale_range
    out = []
    for i in range(spec.n_shapes):
        shape = (base + coeffs[i] @ fields).reshape(-1, 3)
        if spec.noise_mm > 0:
            shape = shape + rng.normal(scale=spec.noise_mm, size=shape.shape)
        rot = Rotation.from_rotvec(rng.normal(scale=np.radians(spec.pose_rotation_deg), size=3)).as_matrix()
        s = rng.uniform(lo, hi)
        t = rng.normal(scale=spec.pose_translation_mm, size=3)
        posed = s * (shape - center) @ rot.T + center + t
        out.append(tmpl.with_vertices(posed))
    return out
