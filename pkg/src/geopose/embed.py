"""Local feature extractor: graph-convolution blocks over point-pair-feature
edges interleaved with farthest-point-sampling downsampling, plus a learnable
positional encoding. Produces per-center embeddings F_emb = F_geo + F_pos.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import fps, knn, ppf_batch
from .tensor import Tensor


@dataclass
class FeatureEmbedding:
    centers: np.ndarray      # (N, 3)
    features: "Tensor"       # (N, d_in)

    def __post_init__(self):
        if self.centers.shape[0] != self.features.data.shape[0]:
            raise ValueError("feature rows must match center rows")


@dataclass
class _Stage:
    nbr_idx: np.ndarray      # (n, k) indices into the reference set
    edge_const: np.ndarray   # (n, k, 7) PPF + offset per edge
    centers: np.ndarray      # (n, 3) centers this block runs at
    down_idx: np.ndarray     # indices surviving the FPS downsample


@dataclass
class EmbedPlan:
    """Geometry-only precompute for one cloud; reusable across training steps."""
    stages: list
    final_centers: np.ndarray


class _TensorBNState:
    """Batch-norm running stats backed by (non-trainable) ParamStore tensors,
    so they travel with checkpoints."""

    def __init__(self, mean_t, var_t, momentum=0.1, eps=1e-5):
        self._mean = mean_t
        self._var = var_t
        self.momentum = momentum
        self.eps = eps

    @property
    def running_mean(self):
        return self._mean.data

    @running_mean.setter
    def running_mean(self, v):
        self._mean.data = np.asarray(v, dtype=np.float64)

    @property
    def running_var(self):
        return self._var.data

    @running_var.setter
    def running_var(self, v):
        self._var.data = np.asarray(v, dtype=np.float64)


def _neighbor_indices(reference, queries, k, self_idx=None, include_self=False):
    """K-NN indices with optional self-exclusion (when queries sit inside the
    reference set, ``self_idx`` gives each query's own reference index)."""
    if include_self or self_idx is None:
        return knn(reference, queries, k)
    idx = knn(reference, queries, min(k + 1, reference.shape[0]))
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for i in range(queries.shape[0]):
        row = idx[i][idx[i] != self_idx[i]]
        out[i] = row[:k]
    return out


class EmbedNet:
    """Owns the embedding parameters and runs plan/forward."""

    def __init__(self, cfg, params, gcn=True):
        self.cfg = cfg
        self.params = params
        self.gcn = gcn
        self._bn_states = {}
        self._init_params()

    def _init_params(self):
        cfg = self.cfg
        prev = None
        for i, (k, w) in enumerate(zip(cfg.k_neighbors, cfg.widths)):
            if self.gcn:
                e = 7 + (prev or 0)  # PPF(4) + offset(3) + neighbor features
                self.params.get(f"embed.block{i}.w1", (e, w))
                self.params.get(f"embed.block{i}.b1", (w,))
                self.params.get(f"embed.block{i}.w2", (w, w))
                self.params.get(f"embed.block{i}.b2", (w,))
            else:
                e = prev or 3
                self.params.get(f"embed.block{i}.w1", (e, w))
                self.params.get(f"embed.block{i}.b1", (w,))
                gain = self.params.get(f"embed.block{i}.bn_gain", (w,), fill=1.0)
                bias = self.params.get(f"embed.block{i}.bn_bias", (w,), fill=0.0)
                mean = self.params.get(f"embed.block{i}.bn_mean", (w,), trainable=False, fill=0.0)
                var = self.params.get(f"embed.block{i}.bn_var", (w,), trainable=False, fill=1.0)
                self._bn_states[i] = _TensorBNState(mean, var)
                del gain, bias
            prev = w
        d = cfg.d_in
        self.params.get("pos_enc.w1", (3, d))
        self.params.get("pos_enc.b1", (d,))
        self.params.get("pos_enc.w2", (d, d))
        self.params.get("pos_enc.b2", (d,))

    # -- geometry precompute ----------------------------------------------

    def plan(self, points, normals, seed=0):
        cfg = self.cfg
        if points.shape[0] < cfg.n_initial_centers:
            raise ValueError(
                f"cloud has {points.shape[0]} points, need >= {cfg.n_initial_centers}")
        center_idx = fps(points, cfg.n_initial_centers, seed)
        ref_pts, ref_nrm = points, normals
        self_idx = center_idx
        centers = points[center_idx]
        center_nrm = normals[center_idx]
        stages = []
        for i, (k, factor) in enumerate(zip(cfg.k_neighbors, cfg.downsample_factors)):
            nbr_idx = _neighbor_indices(ref_pts, centers, k, self_idx, cfg.include_self)
            edge = np.concatenate([
                ppf_batch(centers, center_nrm, ref_pts[nbr_idx], ref_nrm[nbr_idx]),
                ref_pts[nbr_idx] - centers[:, None, :],
            ], axis=2)
            n_next = -(-centers.shape[0] // factor)
            down_idx = fps(centers, n_next, seed)
            stages.append(_Stage(nbr_idx, edge, centers, down_idx))
            # next block runs at (and references) the downsampled centers
            centers = centers[down_idx]
            center_nrm = center_nrm[down_idx]
            ref_pts, ref_nrm = centers, center_nrm
            self_idx = np.arange(centers.shape[0])
        return EmbedPlan(stages, centers)

    # -- learned forward ---------------------------------------------------

    def forward(self, plan, train=False):
        feats = None
        for i, stage in enumerate(plan.stages):
            if self.gcn:
                feats = self._graph_conv(i, stage, feats)
            else:
                feats = self._plain_conv(i, stage, feats, train)
            feats = T.gather_rows(feats, stage.down_idx)
        f_geo = feats
        f_pos = self.positional_encoding(plan.final_centers)
        return FeatureEmbedding(plan.final_centers, f_geo + f_pos)

    def _graph_conv(self, i, stage, in_feats):
        n, k, _ = stage.edge_const.shape
        edge = Tensor(stage.edge_const)
        if in_feats is not None:
            edge = T.concat([edge, T.gather_rows(in_feats, stage.nbr_idx)], axis=2)
        e = edge.data.shape[2]
        w1 = self.params[f"embed.block{i}.w1"]
        b1 = self.params[f"embed.block{i}.b1"]
        w2 = self.params[f"embed.block{i}.w2"]
        b2 = self.params[f"embed.block{i}.b2"]
        h = T.relu(edge.reshape(n * k, e) @ w1 + b1)
        h = (h @ w2 + b2).reshape(n, k, w2.data.shape[1])
        return T.pool(h, kind=self.cfg.pool, axis=1)

    def _plain_conv(self, i, stage, in_feats, train):
        # ablation block: Linear -> BatchNorm -> ReLU on per-center inputs
        x = Tensor(stage.centers) if in_feats is None else in_feats
        w1 = self.params[f"embed.block{i}.w1"]
        b1 = self.params[f"embed.block{i}.b1"]
        gain = self.params[f"embed.block{i}.bn_gain"]
        bias = self.params[f"embed.block{i}.bn_bias"]
        h = x @ w1 + b1
        h = T.batch_norm(h, gain, bias, self._bn_states[i], train)
        return T.relu(h)

    def positional_encoding(self, centers):
        """Learnable position code: two-layer MLP of the raw center coordinates."""
        c = Tensor(np.asarray(centers, dtype=np.float64))
        h = T.relu(c @ self.params["pos_enc.w1"] + self.params["pos_enc.b1"])
        return h @ self.params["pos_enc.w2"] + self.params["pos_enc.b2"]

    def embed(self, points, normals, seed=0, train=False):
        return self.forward(self.plan(points, normals, seed), train=train)
