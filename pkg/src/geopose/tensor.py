"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

All values are float64 numpy arrays. Gradients are recorded via per-op
closures and replayed in reverse topological order. Tensors that never
touch an op with ``requires_grad=True`` carry no tape and are plain values.
"""

from __future__ import annotations

import numpy as np

# When True, every newly created Tensor is checked for NaN/Inf.
DEBUG_CHECK_FINITE = False


class ShapeError(ValueError):
    pass


class Tensor:
    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()
        self._visits = 0
        if DEBUG_CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite value in tensor")

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g, own=False):
        # own=True promises g is freshly allocated with matching shape, so the
        # first accumulation can take the buffer instead of copying
        if self.grad is None:
            if own and g.shape == self.data.shape:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=np.float64, copy=True)
                if self.grad.shape != self.data.shape:
                    self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def detach(self):
        return Tensor(self.data.copy())

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        return backward(self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward_fn):
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._prev = tuple(parents)
        out._backward = backward_fn
    return out


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = _bop(a, b, np.add)

    def back(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    return _make(data, (a, b), back)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    data = _bop(a, b, np.subtract)

    def back(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    return _make(data, (a, b), back)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = _bop(a, b, np.multiply)

    def back(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape), own=True)

    return _make(data, (a, b), back)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    data = _bop(a, b, np.divide)

    def back(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data),
                                       b.data.shape))

    return _make(data, (a, b), back)


def _bop(a, b, ufunc):
    try:
        return ufunc(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"non-broadcastable shapes {a.data.shape} vs {b.data.shape}") from e


def relu(x):
    x = _wrap(x)
    mask = x.data > 0.0

    def back(out):
        if x.requires_grad:
            x._accumulate(out.grad * mask, own=True)

    return _make(np.where(mask, x.data, 0.0), (x,), back)


def exp(x):
    x = _wrap(x)
    data = np.exp(x.data)

    def back(out):
        if x.requires_grad:
            x._accumulate(out.grad * data)

    return _make(data, (x,), back)


def sqrt(x):
    """Square root with subgradient 0 at exactly 0 (keeps loss(gt,gt)==0 clean)."""
    x = _wrap(x)
    data = np.sqrt(x.data)

    def back(out):
        if x.requires_grad:
            g = np.zeros_like(data)
            nz = data > 0.0
            g[nz] = 0.5 / data[nz]
            x._accumulate(out.grad * g)

    return _make(data, (x,), back)


# -- shape / structure -----------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects rank-2 operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"inner extents differ: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def back(out):
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T, own=True)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad, own=True)

    return _make(data, (a, b), back)


def transpose(x):
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError("transpose expects rank-2 operand")

    def back(out):
        if x.requires_grad:
            x._accumulate(out.grad.T)

    return _make(x.data.T.copy(), (x,), back)


def reshape(x, shape):
    x = _wrap(x)
    old = x.data.shape
    data = x.data.reshape(shape)

    def back(out):
        if x.requires_grad:
            x._accumulate(out.grad.reshape(old))

    return _make(data, (x,), back)


def getitem(x, idx):
    x = _wrap(x)
    data = x.data[idx]

    def back(out):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            x._accumulate(g)

    return _make(np.array(data, copy=True), (x,), back)


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    shapes = [t.data.shape for t in tensors]
    ref = list(shapes[0])
    ax = axis if axis >= 0 else len(ref) + axis
    for s in shapes[1:]:
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat shape mismatch along non-concat axes: {shapes}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([s[ax] for s in shapes])[:-1]

    def back(out):
        pieces = np.split(out.grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(g)

    return _make(data, tuple(tensors), back)


def gather_rows(x, idx):
    """out[i, j, :] = x[idx[i, j], :]; backward scatter-adds (repeats accumulate)."""
    x = _wrap(x)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(f"gather index out of range for {x.data.shape[0]} rows")
    data = x.data[idx]

    def back(out):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, idx.ravel(), out.grad.reshape(-1, x.data.shape[1]))
            x._accumulate(g)

    return _make(data, (x,), back)


# -- reductions ------------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    x = _wrap(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def back(out):
        if x.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())

    return _make(data, (x,), back)


def tmean(x, axis=None, keepdims=False):
    x = _wrap(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def amax(x, axis, keepdims=False):
    """Max reduction; gradient routes to the first (lowest-index) argmax."""
    x = _wrap(x)
    if x.data.shape[axis] == 0:
        raise ShapeError("max over empty axis")
    idx = np.argmax(x.data, axis=axis)
    data = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def back(out):
        if x.requires_grad:
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(x.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
            x._accumulate(full)

    return _make(data, (x,), back)


def pool(x, kind="max", axis=1):
    """Reduce a neighborhood axis; ``kind`` is "max" or "mean"."""
    if kind == "max":
        return amax(x, axis=axis)
    if kind == "mean":
        return tmean(x, axis=axis)
    raise ValueError(f"unknown pool kind {kind!r}")


# -- composite layers ------------------------------------------------------

def softmax(x):
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    x = _wrap(x)
    shift = Tensor(x.data.max(axis=-1, keepdims=True))  # detached: softmax is shift-invariant
    e = exp(sub(x, shift))
    return div(e, tsum(e, axis=-1, keepdims=True))


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize each trailing-axis token to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    xhat = div(xc, sqrt(add(var, Tensor(eps))))
    return add(mul(xhat, gain), bias)


class BatchNormState:
    """Running statistics for batch normalization (not part of the tape)."""

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gain, bias, state, train):
    x = _wrap(x)
    if train:
        if x.data.shape[0] < 2:
            raise ShapeError("batch_norm train mode needs batch size >= 2")
        mu = tmean(x, axis=0, keepdims=True)
        xc = sub(x, mu)
        var = tmean(mul(xc, xc), axis=0, keepdims=True)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.data.ravel()
        state.running_var = (1 - m) * state.running_var + m * var.data.ravel()
        xhat = div(xc, sqrt(add(var, Tensor(state.eps))))
    else:
        xhat = div(sub(x, Tensor(state.running_mean)),
                   Tensor(np.sqrt(state.running_var + state.eps)))
    return add(mul(xhat, gain), bias)


# -- backward --------------------------------------------------------------

def backward(loss):
    """Populate .grad for every requires_grad tensor reachable from ``loss``.

    Returns the number of tape nodes visited. The tape is consumed: closures
    and parent links are dropped so a second backward on the same graph is
    a no-op beyond the seed.
    """
    loss = _wrap(loss)
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack = [(loss, iter(loss._prev))]
    seen_on_stack = {id(loss)}
    while stack:
        node, it = stack[-1]
        advanced = False
        for child in it:
            if id(child) not in visited and id(child) not in seen_on_stack:
                if child._prev or child.requires_grad:
                    seen_on_stack.add(id(child))
                    stack.append((child, iter(child._prev)))
                    advanced = True
                    break
        if not advanced:
            stack.pop()
            visited.add(id(node))
            topo.append(node)

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        node._visits += 1
        if node._backward is not None:
            node._backward(node)
        node._backward = None
        node._prev = ()
    return len(topo)
