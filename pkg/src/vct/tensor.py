"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: numpy arrays as storage, one closure per op
for the backward rule, and an iterative topological sort for the backward
pass (each node visited exactly once). It covers exactly the operations the
segmentation pipeline needs; general broadcasting exists only for the
elementwise ops, and matmul supports 2-D operands plus stacked (batched)
operands with identical leading dims.

Precision is per-tensor (float32 for training, float64 for the
finite-difference harness). Binary ops require both operands to share a
dtype; python scalars are wrapped at the peer's dtype.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .rng import Rng

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (forward-only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.floating):
            self.data = np.asarray(data)  # keep numpy scalar dtype (reduction outputs)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._backward = None
        self._parents = _parents if self.requires_grad else ()
        self._op = _op

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def node_id(self):
        return id(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self._op!r})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- autodiff -----------------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse-mode pass from this node. `grad` defaults to ones (scalar loss)."""
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))

        # Iterative topological order; recursion would overflow on deep graphs.
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_dtypes(a: Tensor, b: Tensor, op: str):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, op, backward):
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=tuple(p for p in parents if p.requires_grad), _op=op)
    if req:
        out._backward = backward
    return out


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_dtypes(a, b, "add")
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), "add", backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_dtypes(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), "sub", backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_dtypes(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), "mul", backward)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_dtypes(a, b, "div")
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), "div", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), "neg", backward)


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _make(data, (a,), "relu", backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid(a.data)

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), "sigmoid", backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * data)

    return _make(data, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(data, (a,), "log", backward)


def clip(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clamp values to [lo, hi]. Gradient passes through the interior and the
    boundary values themselves, and is zero where the input was clipped."""
    data = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi

    def backward(g):
        a._accumulate(g * mask)

    return _make(data, (a,), "clip", backward)


# -- reductions ---------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None or keepdims:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    g = np.expand_dims(g, tuple(sorted(axes)))
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims).astype(a.data.dtype, copy=False))

    return _make(data, (a,), "sum", backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / data.size

    def backward(g):
        a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims).astype(a.data.dtype, copy=False) / count)

    return _make(data, (a,), "mean", backward)


# -- shape manipulation ---------------------------------------------------------


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    orig = a.data.shape

    def backward(g):
        a._accumulate(g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), "reshape", backward)


def transpose(a: Tensor, *axes) -> Tensor:
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), "transpose", backward)


def index_select(a: Tensor, indices, axis=0) -> Tensor:
    """Gather rows along `axis`; backward scatter-adds."""
    if axis != 0:
        raise ShapeError("index_select supports axis=0 only")
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        a._accumulate(acc)

    return _make(data, (a,), "index_select", backward)


# -- linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree for {a.data.shape} @ {b.data.shape}")
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul: batch dims disagree for {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _make(data, (a, b), "matmul", backward)


# -- fused softmax family ---------------------------------------------------------


def softmax(a: Tensor, axis: int) -> Tensor:
    """Numerically stabilized softmax along `axis`. -inf inputs produce exact
    zeros (used for masked attention)."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - inner))

    return _make(data, (a,), "softmax", backward)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    data = z - lse
    sm = np.exp(data)

    def backward(g):
        a._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), "log_softmax", backward)


def gumbel_softmax_hard(logits: Tensor, rng: Rng = None, tau: float = 1.0,
                        noise: np.ndarray = None, hard: bool = True, axis: int = 0) -> Tensor:
    """Gumbel-softmax with hard assignment and a straight-through gradient.

    Forward (hard=True): one-hot along `axis` at the argmax of
    softmax((logits + G)/tau); ties go to the lowest index. Backward: the
    gradient is routed to the soft softmax node unchanged, so the hard node's
    backward is bit-for-bit the soft path's backward.

    Pass `noise` to fix the Gumbel draws (tests), or `rng` to sample them.
    With both omitted the noise is zero (plain argmax).
    """
    if tau <= 0:
        raise ValueError(f"gumbel_softmax_hard: tau must be positive, got {tau}")
    if noise is None:
        if rng is not None:
            noise = rng.gumbel(logits.data.shape, dtype=logits.data.dtype)
        else:
            noise = np.zeros_like(logits.data)
    noisy = add(logits, Tensor(np.asarray(noise, dtype=logits.data.dtype)))
    if tau != 1.0:
        noisy = mul(noisy, 1.0 / tau)
    soft = softmax(noisy, axis=axis)
    if not hard:
        return soft

    idx = np.argmax(soft.data, axis=axis)
    onehot = np.zeros_like(soft.data)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis)

    def backward(g):
        soft._accumulate(g)  # straight-through: identity into the soft node

    return _make(onehot, (soft,), "gumbel_hard", backward)


# -- normalization ---------------------------------------------------------------


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer norm over the last axis with learned scale/shift."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if a.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (dxhat - m1 - xhat * m2))

    return _make(data, (a, gamma, beta), "layer_norm", backward)


# -- convolution -----------------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    # (H+2p, W+2p, Cin) -> (H, W, k, k, Cin)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2))


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padding stride-1 cross-correlation. x: (H, W, Cin), w: (k, k, Cin, Cout),
    b: (Cout,). Kernel size must be 1 or 3."""
    from .errors import ConfigError

    k = w.data.shape[0]
    if k not in (1, 3) or w.data.shape[1] != k:
        raise ConfigError(f"conv2d: unsupported kernel {w.data.shape[:2]}, expected 1x1 or 3x3")
    h, wd, cin = x.data.shape
    if w.data.shape[2] != cin:
        raise ShapeError(f"conv2d: input channels {cin} do not match weight {w.data.shape}")
    cout = w.data.shape[3]
    p = (k - 1) // 2
    wmat = w.data.reshape(k * k * cin, cout)

    if k == 1:
        cols2 = x.data.reshape(h * wd, cin)
    else:
        xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
        cols2 = _im2col(xp, k, h, wd).reshape(h * wd, k * k * cin)
    data = (cols2 @ wmat + b.data).reshape(h, wd, cout)

    def backward(g):
        gmat = g.reshape(h * wd, cout)
        if b.requires_grad:
            b._accumulate(gmat.sum(axis=0))
        if w.requires_grad:
            w._accumulate((cols2.T @ gmat).reshape(w.data.shape))
        if x.requires_grad:
            dcols = (gmat @ wmat.T).reshape(h, wd, k, k, cin)
            if k == 1:
                x._accumulate(dcols.reshape(h, wd, cin))
            else:
                dxp = np.zeros((h + 2 * p, wd + 2 * p, cin), dtype=x.data.dtype)
                for ky in range(k):
                    for kx in range(k):
                        dxp[ky:ky + h, kx:kx + wd, :] += dcols[:, :, ky, kx, :]
                x._accumulate(dxp[p:p + h, p:p + wd, :])

    return _make(data, (x, w, b), "conv2d", backward)


# -- composite losses -------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits, stable in both tails.
    Targets are treated as constants."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=logits.data.dtype)
    x = logits.data
    data = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        logits._accumulate(g * (_sigmoid(x) - t))

    return _make(data, (logits,), "bce_with_logits", backward)
