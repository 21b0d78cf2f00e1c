"""Named trainable parameters, deterministic initialization, Adam, checkpoints.

Checkpoint format ("GPCK"): magic bytes b"GPCK", u32 version, then one record
per parameter: u32 name length, utf-8 name, u32 rank, u64 extents, f64
payload. Everything little-endian.
"""

from __future__ import annotations

import hashlib
import math
import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"GPCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _param_rng(seed, name):
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))


class ParamStore:
    """Unique-named map of Tensors. Weight values are a pure function of
    (seed, name, shape): matrices get uniform +-sqrt(6/(fan_in+fan_out)),
    vectors (biases, norm gains/offsets) get their ``fill`` value."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._params = {}

    def get(self, name, shape, trainable=True, fill=None):
        if name in self._params:
            t = self._params[name]
            if t.data.shape != tuple(shape):
                raise ValueError(f"shape mismatch for {name}: {t.data.shape} vs {tuple(shape)}")
            return t
        shape = tuple(shape)
        if fill is not None:
            data = np.full(shape, float(fill))
        elif len(shape) >= 2:
            fan_in, fan_out = shape[0], shape[-1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = _param_rng(self.seed, name).uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
        t = Tensor(data, requires_grad=trainable)
        self._params[name] = t
        return t

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def trainable(self):
        return [(n, t) for n, t in self.items() if t.requires_grad]

    def zero_grad(self):
        for _, t in self.items():
            t.grad = None

    # -- serialization -----------------------------------------------------

    def save(self, path):
        chunks = [MAGIC, struct.pack("<I", VERSION)]
        for name, t in self.items():
            raw = name.encode()
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<I", t.data.ndim))
            chunks.append(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
            chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        with open(path, "wb") as f:
            f.write(b"".join(chunks))

    def load(self, path):
        """Load values into this store. Existing params must shape-match;
        unknown names are created as trainable tensors."""
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != MAGIC:
            raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 8
        while off < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            if name in self._params:
                t = self._params[name]
                if t.data.shape != tuple(shape):
                    raise CheckpointError(f"{path}: shape mismatch for {name}")
                t.data = data.astype(np.float64).copy()
            else:
                self._params[name] = Tensor(data.copy(), requires_grad=True)


class Adam:
    """Adam with optional cosine learning-rate decay over ``total_steps``."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, total_steps=None,
                 warmup_steps=0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.total_steps = total_steps
        self.warmup_steps = warmup_steps
        self.t = 0
        self._m = {}
        self._v = {}

    def current_lr(self):
        if self.warmup_steps and self.t < self.warmup_steps:
            return self.lr * (self.t + 1) / self.warmup_steps
        if not self.total_steps:
            return self.lr
        frac = min(self.t / self.total_steps, 1.0)
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def step(self, store):
        """Apply one update to every trainable parameter; grads are zeroed after."""
        lr = self.current_lr()
        self.t += 1
        for name, p in store.trainable():
            if p.grad is None:
                raise RuntimeError(f"parameter {name} has no gradient")
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad * p.grad
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)
        store.zero_grad()
