"""Transformer encoder fusing multi-head self-attention with a feature-space
graph-convolution branch (the geometric inductive bias) inside each block.

Block layout (pre-norm): y = x + W_r . concat(MHA(LN(x)), GEO(LN(x))), then a
position-wise feedforward sub-block with its own norm and residual. With the
geometry branch ablated, W_r maps d -> d over the attention output alone.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class EncoderError(ValueError):
    pass


def feature_knn(x, k_f):
    """Euclidean K-NN over feature rows, self excluded; ties by lowest index."""
    n = x.shape[0]
    if k_f >= n:
        raise EncoderError(f"k_f={k_f} must be < token count {n}")
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k_f]


class EncoderNet:
    def __init__(self, cfg, params, geometry_aware=True):
        self.cfg = cfg
        self.params = params
        self.geometry_aware = geometry_aware
        self._init_params()

    def _init_params(self):
        d, ff = self.cfg.d_in, self.cfg.ff_width
        fused = 2 * d if self.geometry_aware else d
        for layer in range(self.cfg.layers):
            p = f"encoder.layer{layer}"
            self.params.get(f"{p}.ln1_gain", (d,), fill=1.0)
            self.params.get(f"{p}.ln1_bias", (d,), fill=0.0)
            for w in ("wq", "wk", "wv", "wo"):
                self.params.get(f"{p}.attn.{w}", (d, d))
                self.params.get(f"{p}.attn.{w}_b", (d,))
            if self.geometry_aware:
                self.params.get(f"{p}.geo.w1", (2 * d, d))
                self.params.get(f"{p}.geo.b1", (d,))
                self.params.get(f"{p}.geo.w2", (d, d))
                self.params.get(f"{p}.geo.b2", (d,))
            self.params.get(f"{p}.reduce.w", (fused, d))
            self.params.get(f"{p}.reduce.b", (d,))
            self.params.get(f"{p}.ln2_gain", (d,), fill=1.0)
            self.params.get(f"{p}.ln2_bias", (d,), fill=0.0)
            self.params.get(f"{p}.ff.w1", (d, ff))
            self.params.get(f"{p}.ff.b1", (ff,))
            self.params.get(f"{p}.ff.w2", (ff, d))
            self.params.get(f"{p}.ff.b2", (d,))

    def multi_head_attention(self, x, layer, collect=None):
        """Standard scaled dot-product self-attention over token rows."""
        d = self.cfg.d_in
        h = self.cfg.heads
        if d % h != 0:
            raise EncoderError(f"d_in={d} not divisible by heads={h}")
        dh = d // h
        p = f"encoder.layer{layer}.attn"
        q = x @ self.params[f"{p}.wq"] + self.params[f"{p}.wq_b"]
        k = x @ self.params[f"{p}.wk"] + self.params[f"{p}.wk_b"]
        v = x @ self.params[f"{p}.wv"] + self.params[f"{p}.wv_b"]
        scale = 1.0 / np.sqrt(dh)
        outs = []
        for i in range(h):
            sl = slice(i * dh, (i + 1) * dh)
            qi, ki, vi = q[:, sl], k[:, sl], v[:, sl]
            attn = T.softmax((qi @ ki.T) * scale)
            if collect is not None:
                collect.append(attn.data.copy())
            outs.append(attn @ vi)
        return T.concat(outs, axis=1) @ self.params[f"{p}.wo"] + self.params[f"{p}.wo_b"]

    def geometry_aware_module(self, x, layer):
        """Graph convolution over K-NN in feature space: edge = (x_i, x_j - x_i),
        shared two-layer MLP, max-pool over neighbors."""
        n, d = x.data.shape
        k_f = self.cfg.k_f
        idx = feature_knn(x.data, k_f)
        nbr = T.gather_rows(x, idx)                                   # (n, k, d)
        center = T.reshape(x, (n, 1, d)) + Tensor(np.zeros((n, k_f, d)))
        edge = T.concat([center, nbr - center], axis=2)
        p = f"encoder.layer{layer}.geo"
        h = T.relu(edge.reshape(n * k_f, 2 * d) @ self.params[f"{p}.w1"] + self.params[f"{p}.b1"])
        h = (h @ self.params[f"{p}.w2"] + self.params[f"{p}.b2"]).reshape(n, k_f, d)
        return T.pool(h, kind="max", axis=1)

    def block(self, x, layer, collect_attn=None):
        p = f"encoder.layer{layer}"
        ln = T.layer_norm(x, self.params[f"{p}.ln1_gain"], self.params[f"{p}.ln1_bias"])
        branches = [self.multi_head_attention(ln, layer, collect_attn)]
        if self.geometry_aware:
            branches.append(self.geometry_aware_module(ln, layer))
        fused = T.concat(branches, axis=1) if len(branches) > 1 else branches[0]
        h = x + (fused @ self.params[f"{p}.reduce.w"] + self.params[f"{p}.reduce.b"])
        ln2 = T.layer_norm(h, self.params[f"{p}.ln2_gain"], self.params[f"{p}.ln2_bias"])
        ff = T.relu(ln2 @ self.params[f"{p}.ff.w1"] + self.params[f"{p}.ff.b1"])
        ff = ff @ self.params[f"{p}.ff.w2"] + self.params[f"{p}.ff.b2"]
        return h + ff

    def encode(self, features, collect_attn=None):
        x = features
        if x.data.shape[0] < 2:
            raise EncoderError("need at least 2 tokens")
        for layer in range(self.cfg.layers):
            x = self.block(x, layer, collect_attn)
        return x


def global_pool(x):
    """Max over tokens; gradient flows to the argmax row per channel."""
    return T.amax(x, axis=0)
