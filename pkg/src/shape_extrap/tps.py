"""Three-dimensional thin-plate-spline displacement fields.

The map is ``f(x) = b + A x + sum_i w_i U(|x - c_i|)`` with control points
``c_i``. Weights and affine part solve the bordered system::

    [ K + reg I   P ] [ W ]   [ Y ]
    [ P^T         0 ] [ a ] = [ 0 ]

with ``K_ij = U(|c_i - c_j|)`` and rows of ``P`` equal to ``(1, x, y, z)``.
The three output coordinates share one matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, qr, solve_triangular
from scipy.spatial.distance import cdist

from ._threads import worker_count
from .errors import RankDeficiencyError

RANK_TOL = 1e-12
EVAL_CHUNK = 1024


class TpsSingularError(RankDeficiencyError):
    """The TPS system is singular: duplicate or coplanar control points."""


def kernel_r(r):
    return r


def kernel_r2logr(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r * r * np.log(r)
    out[r == 0] = 0.0
    return out


KERNELS = {"r": kernel_r, "r2logr": kernel_r2logr}


@dataclass(frozen=True, eq=False)
class TpsModel:
    """A fitted displacement field.

    ``linear`` holds the affine part as a (4, 3) coefficient block acting on
    ``(1, x, y, z)``; ``weights`` has one row per control point.
    """

    control_points: np.ndarray
    linear: np.ndarray
    weights: np.ndarray
    kernel: str = "r"
    regularization: float = 0.0

    @property
    def translation(self):
        return self.linear[0]

    @property
    def affine_matrix(self):
        """3x3 matrix ``A`` with ``f(x) = A x + b + ...``."""
        return self.linear[1:].T

    def side_condition_residual(self):
        """``max |P^T W|``: zero sum and zero first moment of the weights."""
        p = np.hstack([np.ones((len(self.control_points), 1)), self.control_points])
        return float(np.max(np.abs(p.T @ self.weights)))

    def __call__(self, queries):
        return evaluate_tps(self, queries)


def _system_matrix(sources, kernel, regularization):
    n = len(sources)
    k = KERNELS[kernel](cdist(sources, sources))
    if regularization:
        k[np.diag_indices(n)] += regularization
    p = np.hstack([np.ones((n, 1)), sources])
    l = np.zeros((n + 4, n + 4))
    l[:n, :n] = k
    l[:n, n:] = p
    l[n:, :n] = p.T
    return l


def _pivoted_qr_solve(a, b, rank_tol):
    """Solve ``a x = b`` by Householder QR with column pivoting.

    ``b`` may hold several right-hand sides (columns); the factorization is
    computed once.
    """
    (qr_raw, tau), r, perm = qr(a, pivoting=True, mode="raw", check_finite=False)
    diag = np.abs(np.diag(r))
    if diag[0] == 0 or np.any(diag < rank_tol * diag[0]):
        rank = int(np.sum(diag >= rank_tol * diag[0])) if diag[0] else 0
        raise TpsSingularError(
            f"TPS system is rank deficient (rank {rank} of {len(diag)}); "
            "control points may be duplicated or coplanar"
        )
    b2 = np.asfortranarray(b.reshape(len(b), -1))
    qtb, _, info = lapack.dormqr("L", "T", qr_raw, tau, b2, lwork=max(1, 64 * b2.shape[1] * 2))
    if info != 0:
        raise RuntimeError(f"dormqr failed with info={info}")
    z = solve_triangular(r, qtb, check_finite=False)
    x = np.empty_like(z)
    x[perm] = z
    return x


def build_tps(sources, targets, regularization=0.0, kernel="r", independent_solves=False,
              rank_tol=RANK_TOL):
    """Fit a TPS taking ``sources`` to ``targets``.

    Parameters
    ----------
    sources, targets : array_like, shape (N, 3)
    regularization : float
        Added to the kernel diagonal; 0 gives exact interpolation.
    kernel : {"r", "r2logr"}
        Radial basis. ``"r"`` is the biharmonic kernel in three dimensions.
    independent_solves : bool
        Factor the matrix separately for each output coordinate (three
        factorizations run on worker threads) instead of once for all three.

    Raises
    ------
    TpsSingularError
        If the pivoted QR factorization detects rank deficiency.
    """
    src = np.asarray(sources, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError(f"sources {src.shape} and targets {dst.shape} differ")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    n = len(src)
    if n < 5:
        raise TpsSingularError(f"need at least 5 control points, got {n}")
    l = _system_matrix(src, kernel, regularization)
    rhs = np.zeros((n + 4, 3))
    rhs[:n] = dst
    if independent_solves:
        with ThreadPoolExecutor(max_workers=min(3, worker_count())) as ex:
            cols = list(ex.map(lambda j: _pivoted_qr_solve(l, rhs[:, j], rank_tol)[:, 0], range(3)))
        sol = np.stack(cols, axis=1)
    else:
        sol = _pivoted_qr_solve(l, rhs, rank_tol)
    return TpsModel(
        control_points=src.copy(),
        linear=sol[n:].copy(),
        weights=sol[:n].copy(),
        kernel=kernel,
        regularization=float(regularization),
    )


def _eval_chunk(model, q):
    u = KERNELS[model.kernel](cdist(q, model.control_points))
    return model.linear[0] + q @ model.linear[1:] + u @ model.weights


def evaluate_tps(model, queries, workers=None):
    """Apply the TPS map to every query point.

    Queries are processed in fixed-size chunks, so the result does not depend
    on the number of worker threads.
    """
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(q) == 0:
        return np.zeros((0, 3))
    chunks = [q[s : s + EVAL_CHUNK] for s in range(0, len(q), EVAL_CHUNK)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda c: _eval_chunk(model, c), chunks))
    else:
        parts = [_eval_chunk(model, c) for c in chunks]
    return np.vstack(parts)


def identity_tps(control_points, kernel="r"):
    c = np.asarray(control_points, dtype=np.float64).reshape(-1, 3)
    linear = np.zeros((4, 3))
    linear[1:] = np.eye(3)
    return TpsModel(c.copy(), linear, np.zeros_like(c), kernel)
