"""Minimal reverse-mode autodiff over dense numpy arrays.

A Tensor wraps an ndarray and remembers the op that produced it as a
closure mapping the output gradient to the parents' gradients.  Calling
``backward()`` on a scalar walks the graph in reverse topological order
and accumulates gradients into leaf tensors additively, so a second
backward call without zeroing doubles leaf gradients exactly.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` to undo numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=None):
        if isinstance(data, (np.ndarray, np.generic)):
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.parents = tuple(parents)
        self._backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad = None

    # -- basic protocol ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        gmap: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(topo):
            g = gmap.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node._backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in gmap:
                    gmap[id(p)] = gmap[id(p)] + pg
                else:
                    gmap[id(p)] = pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)


class Parameter(Tensor):
    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name
        self.frozen = frozen


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


# ---------------------------------------------------------------------------
# primitive ops

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return Tensor(out, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int) -> Tensor:
    arrs = [t.data for t in tensors]
    out = np.concatenate(arrs, axis=axis)
    sizes = [a.shape[axis] for a in arrs]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor(out, tuple(tensors), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape),)

    return Tensor(out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in ax]))
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, _wrap(1.0 / count, a.dtype))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(a.data * mask, (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along `axis`."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, (a,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes})")
    z = logits.data.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    nll = lse - z[np.arange(n), labels]
    out = np.asarray(nll.mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        return ((g * p / n).astype(logits.dtype),)

    return Tensor(out, (logits,), backward)


def conv2d_temporal(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1) -> Tensor:
    """2D convolution with a (kt, 1) kernel over (N, C, T, V) input.

    Same-padding along time: pad = (kt - 1) // 2, output T' = ceil(T / stride)
    for odd kt.  The joint axis is untouched (kernel width 1).
    """
    n, c, t, v = x.shape
    c_out, c_in, kt, kw = w.shape
    if kw != 1 or c_in != c:
        raise ValueError(f"conv2d: kernel {w.shape} incompatible with input {x.shape}")
    pad = (kt - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    t_out = (t + 2 * pad - kt) // stride + 1
    # gather windows: (N, C, T_out, kt, V)
    idx = (np.arange(t_out) * stride)[:, None] + np.arange(kt)[None, :]
    cols = xp[:, :, idx, :]
    # (N, T_out, V, C*kt) @ (C*kt, C_out)
    cols2 = cols.transpose(0, 2, 4, 1, 3).reshape(n, t_out, v, c * kt)
    wmat = w.data.reshape(c_out, c * kt).T
    out = cols2 @ wmat
    if b is not None:
        out = out + b.data
    out = out.transpose(0, 3, 1, 2)     # (N, C_out, T_out, V)

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)                      # (N, T_out, V, C_out)
        gw = np.einsum("ntvk,ntvc->kc", gt, cols2).reshape(c_out, c, kt, 1)
        gb = gt.sum(axis=(0, 1, 2)) if b is not None else None
        gcols2 = gt @ wmat.T                              # (N, T_out, V, C*kt)
        gcols = gcols2.reshape(n, t_out, v, c, kt).transpose(0, 3, 1, 4, 2)
        gxp = np.zeros_like(xp)
        np.add.at(gxp, (slice(None), slice(None), idx, slice(None)), gcols)
        gx = gxp[:, :, pad : pad + t, :] if pad else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    if b is None:
        return Tensor(out, parents, lambda g: backward(g)[:2])
    return Tensor(out, parents, backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, train: bool, momentum: float = 0.9,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over (N, T, V) of an (N, C, T, V) input.

    Train mode normalizes with batch statistics and updates the running
    arrays in place (keep `momentum` of the old value); eval mode uses the
    running statistics as-is.
    """
    n, c, t, v = x.shape
    axes = (0, 2, 3)
    if train:
        if n * t * v < 2:
            raise ValueError("batchnorm train mode needs at least 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        scale = (gamma.data * inv_std)[None, :, None, None]
        if train:
            gmean = g.mean(axis=axes)[None, :, None, None]
            gdot = (g * xhat).mean(axis=axes)[None, :, None, None]
            gx = scale * (g - gmean - xhat * gdot)
        else:
            gx = scale * g
        return gx, ggamma, gbeta

    return Tensor(out, (x, gamma, beta), backward)
