"""Decoupled translation / rotation prediction head and the training loss.

The translation branch predicts an offset from the cloud barycenter; the
rotation branch predicts a raw 4-vector that is normalized to a unit
quaternion (vector part q0..q2, scalar q3) and turned into a rotation
matrix, all inside the tape so gradients reach both branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import GeometryError, quat_to_rot
from .tensor import Tensor


@dataclass
class PoseEstimate:
    q: np.ndarray   # unit quaternion (q0, q1, q2, q3)
    t: np.ndarray   # translation, meters

    @property
    def R(self):
        return quat_to_rot(self.q)


class PoseHead:
    def __init__(self, d_in, widths, params):
        self.d_in = d_in
        self.widths = list(widths)
        self.params = params
        for branch, out in (("trans", 3), ("rot", 4)):
            dims = [d_in] + self.widths + [out]
            for i in range(len(dims) - 1):
                params.get(f"head.{branch}.w{i}", (dims[i], dims[i + 1]))
                params.get(f"head.{branch}.b{i}", (dims[i + 1],))

    def _mlp(self, branch, x):
        n = len(self.widths) + 1
        h = x
        for i in range(n):
            h = h @ self.params[f"head.{branch}.w{i}"] + self.params[f"head.{branch}.b{i}"]
            if i < n - 1:
                h = T.relu(h)
        return h

    def forward(self, global_feat, bary):
        """Returns (q_unit Tensor[4], t_hat Tensor[3]); inputs stay on the tape."""
        feat = T.reshape(global_feat, (1, self.d_in))
        delta = T.reshape(self._mlp("trans", feat), (3,))
        t_hat = Tensor(np.asarray(bary, dtype=np.float64)) + delta
        raw_q = T.reshape(self._mlp("rot", feat), (4,))
        q = normalize_quat_t(raw_q)
        return q, t_hat

    def predict(self, global_feat, bary):
        q, t_hat = self.forward(global_feat, bary)
        return PoseEstimate(q.data.copy(), t_hat.data.copy())


def normalize_quat_t(raw, eps=1e-8):
    """Differentiable quaternion normalization."""
    n2 = T.tsum(raw * raw)
    if float(np.sqrt(n2.data)) <= eps:
        raise GeometryError("degenerate quaternion: norm below threshold")
    return raw / T.reshape(T.sqrt(n2), (1,))


def rotate_points_t(q, points):
    """Rotate constant points (P, 3) by a unit-quaternion Tensor, differentiably.

    Uses R(q) assembled from quaternion components; equals geometry.quat_to_rot
    on the forward values.
    """
    x, y, z, w = q[0:1], q[1:2], q[2:3], q[3:4]
    two = Tensor(2.0)
    one = Tensor(1.0)
    r00 = one - two * (y * y + z * z)
    r01 = two * (x * y - z * w)
    r02 = two * (x * z + y * w)
    r10 = two * (x * y + z * w)
    r11 = one - two * (x * x + z * z)
    r12 = two * (y * z - x * w)
    r20 = two * (x * z - y * w)
    r21 = two * (y * z + x * w)
    r22 = one - two * (x * x + y * y)
    # columns of R^T are the rows of R, so rotated = points @ R^T
    rt = T.concat([
        T.reshape(T.concat([r00, r01, r02], axis=0), (3, 1)),
        T.reshape(T.concat([r10, r11, r12], axis=0), (3, 1)),
        T.reshape(T.concat([r20, r21, r22], axis=0), (3, 1)),
    ], axis=1)
    return Tensor(np.asarray(points, dtype=np.float64)) @ rt


def _row_norms(d):
    """Per-row Euclidean norms of a (P, 3) Tensor (subgradient 0 at zero)."""
    return T.sqrt(T.tsum(d * d, axis=1))


def subsample_vertices(vertices, n):
    """Deterministic uniform subsample: evenly spaced indices."""
    p = vertices.shape[0]
    if n >= p:
        return vertices
    idx = np.linspace(0, p - 1, n).round().astype(np.int64)
    return vertices[idx]


def pose_loss(q, t_hat, gt, model_points, symmetric, n_loss_points=64):
    """Differentiable mean vertex distance between predicted- and ground-truth-
    transformed model points; symmetric objects use closest-point pairing
    (argmin recomputed from the current forward values)."""
    pts = subsample_vertices(np.asarray(model_points, dtype=np.float64), n_loss_points)
    gt_pts = gt.apply(pts)
    pred = rotate_points_t(q, pts) + T.reshape(t_hat, (1, 3))
    if not symmetric:
        return T.tmean(_row_norms(pred - Tensor(gt_pts)))
    # pair each predicted vertex with its currently-closest gt vertex
    d2 = ((pred.data[:, None, :] - gt_pts[None, :, :]) ** 2).sum(axis=2)
    pairing = np.argmin(d2, axis=1)
    return T.tmean(_row_norms(pred - Tensor(gt_pts[pairing])))
