"""Non-learned point-cloud and rigid-body kernels.

All functions are pure and operate on float64 numpy arrays. Points are
meters in the camera frame unless stated otherwise. Quaternions follow the
component order (q0, q1, q2, q3) with vector part (q0, q1, q2) and scalar
part q3, i.e. q = q3 + q0*i + q1*j + q2*k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 1.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.depth_scale <= 0:
            raise GeometryError("depth_scale must be positive")


@dataclass
class RigidTransform:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def compose(self, other):
        """self after other: (self @ other)(x) = self(other(x))."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def invert(self):
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def validate(self, tol=1e-9):
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > tol:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > tol:
            raise GeometryError("rotation determinant is not +1")


def backproject(depth, mask, K):
    """Pinhole backprojection of masked valid-depth pixels to camera-frame points."""
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise GeometryError("depth and mask dimensions differ")
    v, u = np.nonzero(mask & (depth > 0))
    if v.size == 0:
        raise GeometryError("no masked pixel with valid depth")
    z = depth[v, u] * K.depth_scale
    x = (u - K.cx) * z / K.fx
    y = (v - K.cy) * z / K.fy
    return np.column_stack([x, y, z])


def project(points, K):
    """Inverse of backproject, returning float (u, v) pixel coordinates."""
    points = np.asarray(points, dtype=np.float64)
    u = points[:, 0] / points[:, 2] * K.fx + K.cx
    v = points[:, 1] / points[:, 2] * K.fy + K.cy
    return np.column_stack([u, v])


def knn(reference, queries, k):
    """Indices of the k nearest reference points per query, ascending distance,
    ties broken by lowest index. A query that coincides with a reference point
    includes it (distance 0)."""
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if k > reference.shape[0]:
        raise GeometryError(f"k={k} exceeds reference size {reference.shape[0]}")
    d2 = ((queries[:, None, :] - reference[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def fps(points, n, seed=0):
    """Greedy farthest-point sampling. Start index = seed mod M; each next
    index maximizes the minimum distance to the chosen set (ties: lowest index)."""
    points = np.asarray(points, dtype=np.float64)
    m = points.shape[0]
    if not 1 <= n <= m:
        raise GeometryError(f"cannot sample {n} of {m} points")
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = seed % m
    mind2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(mind2))
        chosen[i] = nxt
        d2 = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(mind2, d2, out=mind2)
    return chosen


def estimate_normals(points, k, viewpoint):
    """Per-point unit normals from local PCA over the k nearest neighbors
    (the point itself included), oriented toward ``viewpoint``.

    Returns (normals, degenerate_count); degenerate neighborhoods (rank < 2)
    get the flagged normal (0, 0, 1).
    """
    points = np.asarray(points, dtype=np.float64)
    viewpoint = np.asarray(viewpoint, dtype=np.float64)
    m = points.shape[0]
    if not 3 <= k < m:
        raise GeometryError(f"need M > k >= 3, got M={m}, k={k}")
    idx = knn(points, points, k)
    nbrs = points[idx]                      # (M, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)      # ascending eigenvalues
    normals = evecs[:, :, 0].copy()
    degenerate = evals[:, 1] < 1e-18
    normals[degenerate] = (0.0, 0.0, 1.0)
    flip = np.einsum("mi,mi->m", normals, viewpoint - points) < 0
    normals[flip] *= -1.0
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals /= norms
    return normals, int(degenerate.sum())


def ppf(p_i, n_i, p_j, n_j):
    """Point Pair Feature: (angle(n_i, dx), angle(n_j, dx), angle(n_i, n_j),
    ||dx||) with dx = p_j - p_i. Coincident points get the first two angles 0."""
    p_i = np.asarray(p_i, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    n_i = np.asarray(n_i, dtype=np.float64)
    n_j = np.asarray(n_j, dtype=np.float64)
    dx = p_j - p_i
    d = np.linalg.norm(dx)
    if d > 0:
        a1 = _angle(n_i @ dx / d)
        a2 = _angle(n_j @ dx / d)
    else:
        a1 = a2 = 0.0
    a3 = _angle(n_i @ n_j)
    return np.array([a1, a2, a3, d])


def _angle(c):
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def ppf_batch(centers, center_normals, nbrs, nbr_normals):
    """Vectorized PPF for every (center, neighbor) pair.

    centers: (N,3), center_normals: (N,3), nbrs/nbr_normals: (N,k,3).
    Returns (N, k, 4).
    """
    dx = nbrs - centers[:, None, :]
    d = np.linalg.norm(dx, axis=2)
    safe = np.where(d > 0, d, 1.0)
    unit = dx / safe[:, :, None]
    a1 = np.arccos(np.clip(np.einsum("ni,nki->nk", center_normals, unit), -1, 1))
    a2 = np.arccos(np.clip(np.einsum("nki,nki->nk", nbr_normals, unit), -1, 1))
    zero = d == 0
    a1[zero] = 0.0
    a2[zero] = 0.0
    a3 = np.arccos(np.clip(np.einsum("ni,nki->nk", center_normals, nbr_normals), -1, 1))
    return np.stack([a1, a2, a3, d], axis=2)


def barycenter(points):
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 1:
        raise GeometryError("empty point cloud")
    return points.mean(axis=0)


def normalize_quat(raw, eps=1e-8):
    raw = np.asarray(raw, dtype=np.float64).reshape(4)
    n = np.linalg.norm(raw)
    if n <= eps:
        raise GeometryError("degenerate quaternion: norm below threshold")
    return raw / n


def quat_to_rot(q):
    """Rotation matrix for a unit quaternion (vector part q0..q2, scalar q3)."""
    x, y, z, w = np.asarray(q, dtype=np.float64).reshape(4)
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * z * w, 2 * x * z + 2 * y * w],
        [2 * x * y + 2 * z * w, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * x * w],
        [2 * x * z - 2 * y * w, 2 * y * z + 2 * x * w, 1 - 2 * x * x - 2 * y * y],
    ])


def rot_to_quat(R):
    """Unit quaternion (q0..q2 vector, q3 scalar) for a rotation matrix,
    scalar part chosen non-negative."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return normalize_quat(q)


def random_quat(rng):
    """Uniform random unit quaternion (4 standard normals, normalized)."""
    return normalize_quat(rng.standard_normal(4))
