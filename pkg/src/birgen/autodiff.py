"""Minimal reverse-mode differentiation over numpy arrays (float64).

Only the operations the scene encoder and the adversarial networks need are
provided. Each op records its parents and a closure that maps the output
gradient to parent gradients; ``Tensor.backward`` walks the tape in reverse
topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True
_MASK_LOG = None  # list collecting activation patterns while a recorder is active


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the active/inactive pattern of every ReLU and clip evaluated inside.

    Two evaluations with different patterns lie on different linear pieces,
    which is what a finite-difference checker needs to know.
    """
    global _MASK_LOG
    prev, _MASK_LOG = _MASK_LOG, []
    try:
        yield _MASK_LOG
    finally:
        _MASK_LOG = prev


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- plumbing
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar needs an explicit gradient")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(as_tensor(o)))

    def __rsub__(self, o):
        return add(as_tensor(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = as_tensor(o)
        return mul(self, power(o, -1.0))

    def __rtruediv__(self, o):
        return mul(as_tensor(o), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def max(self, axis=None):
        return tmax(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def power(a, k: float):
    ad = a.data
    return _make(ad ** k, (a,), lambda g: (g * k * ad ** (k - 1),))


def relu(a):
    out = np.maximum(a.data, 0.0)
    if _MASK_LOG is not None:
        _MASK_LOG.append(a.data > 0)
    return _make(out, (a,), lambda g: (g * (out > 0),))


def tanh(a):
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a):
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a):
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def exp(a):
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def clip(a, lo, hi):
    """Clamp with zero gradient outside ``[lo, hi]``."""
    inside = (a.data >= lo) & (a.data <= hi)
    if _MASK_LOG is not None:
        _MASK_LOG.append(inside)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def tmax(a, axis=None):
    """Max with the gradient routed to the first maximal entry."""
    ad = a.data
    if axis is None:
        flat = int(np.argmax(ad))

        def back(g):
            out = np.zeros_like(ad)
            out.flat[flat] = g
            return (out,)
        return _make(ad.flat[flat], (a,), back)
    arg = np.argmax(ad, axis=axis)
    val = np.take_along_axis(ad, np.expand_dims(arg, axis), axis).squeeze(axis)

    def back(g):
        out = np.zeros_like(ad)
        np.put_along_axis(out, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
        return (out,)
    return _make(val, (a,), back)


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


def getitem(a, idx):
    shape = a.shape
    basic = _is_basic(idx)

    def back(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)
    return _make(a.data[idx], (a,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def broadcast_to(a, shape):
    old = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, old),))


def reverse_cumsum(a, axis):
    """``out[..., t, ...] = sum_{u >= t} a[..., u, ...]`` along ``axis``."""
    def rc(x):
        return np.flip(np.cumsum(np.flip(x, axis), axis), axis)
    # adjoint of a reverse cumsum is a forward cumsum
    return _make(rc(a.data), (a,), lambda g: (np.cumsum(g, axis=axis),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)
    return _make(ad @ bd, (a, b), back)


def spmm(S, x):
    """Constant sparse (scipy) matrix times a dense tensor."""
    x = as_tensor(x)
    St = S.T.tocsr()
    return _make(np.asarray(S @ x.data), (x,), lambda g: (np.asarray(St @ g),))


# ---------------------------------------------------------------- 1-D convolutions
# x: (B, C_in, L). Kernels are small, so both directions loop over taps and
# hand each tap to a BLAS matmul.

def conv1d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation; ``w`` has shape (C_out, C_in, K)."""
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    B, C, L = xd.shape
    O, _, K = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    Lout = (L + 2 * padding - K) // stride + 1
    taps = [xp[:, :, k:k + stride * (Lout - 1) + 1:stride] for k in range(K)]  # (B, C, Lout)
    out = np.zeros((B, O, Lout))
    for k in range(K):
        out += np.einsum("oc,bcl->bol", wd[:, :, k], taps[k], optimize=True)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out += b.data[None, :, None]
        parents = (x, w, b)

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for k in range(K):
            gw[:, :, k] = np.einsum("bol,bcl->oc", g, taps[k], optimize=True)
            gxp[:, :, k:k + stride * (Lout - 1) + 1:stride] += np.einsum(
                "oc,bol->bcl", wd[:, :, k], g, optimize=True)
        gx = gxp[:, :, padding:padding + L]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)
    return _make(out, parents, back)


def conv_transpose1d(x, w, b=None, stride=2, padding=1):
    """Transposed convolution; ``w`` has shape (C_in, C_out, K).

    Output length is ``(L - 1) * stride - 2 * padding + K``. All taps come
    from one matmul, then overlap-add into a channel-last buffer.
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    B, C, L = xd.shape
    _, O, K = wd.shape
    full_len = (L - 1) * stride + K
    Lout = full_len - 2 * padding
    span = stride * (L - 1) + 1
    xt = np.ascontiguousarray(xd.transpose(0, 2, 1))          # (B, L, C)
    wm = np.ascontiguousarray(wd.transpose(0, 2, 1)).reshape(C, K * O)
    Y = (xt @ wm).reshape(B, L, K, O)
    full = np.zeros((B, full_len, O))
    for k in range(K):
        full[:, k:k + span:stride] += Y[:, :, k]
    out = full[:, padding:padding + Lout].transpose(0, 2, 1)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
        parents = (x, w, b)

    def back(g):
        gfull = np.zeros((B, full_len, O))
        gfull[:, padding:padding + Lout] = g.transpose(0, 2, 1)
        gY = np.empty((B, L, K, O))
        for k in range(K):
            gY[:, :, k] = gfull[:, k:k + span:stride]
        gY = gY.reshape(B * L, K * O)
        gx = (gY @ wm.T).reshape(B, L, C).transpose(0, 2, 1)
        gw = (xt.reshape(B * L, C).T @ gY).reshape(C, K, O).transpose(0, 2, 1)
        grads = [gx, np.ascontiguousarray(gw)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)
    return _make(np.ascontiguousarray(out), parents, back)


# ---------------------------------------------------------------- optimizer

class RMSprop:
    """RMSprop with squared-gradient smoothing ``alpha`` (no momentum)."""

    def __init__(self, params, lr=8e-5, alpha=0.99, eps=1e-8):
        self.params = list(params)
        self.lr, self.alpha, self.eps = lr, alpha, eps
        self.sq = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        a = self.alpha
        for p, s in zip(self.params, self.sq):
            if p.grad is None:
                continue
            s *= a
            s += (1 - a) * p.grad * p.grad
            p.data -= self.lr * p.grad / (np.sqrt(s) + self.eps)

    def state(self):
        return {"lr": self.lr, "sq": [s.copy() for s in self.sq]}
