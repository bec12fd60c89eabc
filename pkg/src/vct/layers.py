"""Shared building blocks: parameter bank, attention block, positions."""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import Tensor, layer_norm, matmul, relu, reshape, softmax, transpose


class ParamBank:
    """Flat name -> Tensor registry for everything learnable.

    Creation order is fixed by construction order, so a single rng stream
    yields identical initializations for identical configs.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.tensors = {}

    def _register(self, name: str, arr: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(arr.astype(self.dtype, copy=False), requires_grad=True)
        self.tensors[name] = t
        return t

    def gauss(self, name: str, rng: Rng, shape, std: float = 0.02) -> Tensor:
        return self._register(name, rng.normal(shape, std, dtype=self.dtype))

    def xavier(self, name: str, rng: Rng, shape) -> Tensor:
        """Glorot-scaled Gaussian for linear (in, out) and conv (k, k, in, out)
        weights."""
        if len(shape) == 2:
            fan_in, fan_out = shape
        elif len(shape) == 4:
            k = shape[0] * shape[1]
            fan_in, fan_out = k * shape[2], k * shape[3]
        else:
            raise ValueError(f"xavier expects a 2-D or 4-D shape, got {shape}")
        std = float(np.sqrt(2.0 / (fan_in + fan_out)))
        return self._register(name, rng.normal(shape, std, dtype=self.dtype))

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape, dtype=self.dtype))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape, dtype=self.dtype))

    def items(self):
        return self.tensors.items()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def zero_grads(self):
        for t in self.tensors.values():
            t.grad = None


def linear(x: Tensor, w: Tensor, b: Tensor = None) -> Tensor:
    y = matmul(x, w)
    return y + b if b is not None else y


def sinusoidal_positions(h: int, w: int, dim: int, dtype=np.float32) -> np.ndarray:
    """(h*w, dim) fixed 2-D sine/cosine position encoding; half the channels
    encode the row index, half the column index."""
    if dim % 4:
        raise ValueError(f"position dim {dim} must be divisible by 4")
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half // 2) / (half // 2)))
    ys, xs = np.mgrid[0:h, 0:w]

    def enc(coord):
        ang = coord.reshape(-1, 1) * freqs
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    return np.concatenate([enc(ys), enc(xs)], axis=1).astype(dtype)


class MultiHeadAttention:
    """Projection weights plus the scaled-dot-product forward."""

    def __init__(self, bank: ParamBank, prefix: str, rng: Rng, dim: int, kv_dim: int, heads: int):
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        g, z = bank.gauss, bank.zeros
        self.wq = bank.xavier(f"{prefix}.wq", rng, (dim, dim))
        self.bq = z(f"{prefix}.bq", (dim,))
        self.wk = bank.xavier(f"{prefix}.wk", rng, (kv_dim, dim))
        self.bk = z(f"{prefix}.bk", (dim,))
        self.wv = bank.xavier(f"{prefix}.wv", rng, (kv_dim, dim))
        self.bv = z(f"{prefix}.bv", (dim,))
        self.wo = bank.xavier(f"{prefix}.wo", rng, (dim, dim))
        self.bo = z(f"{prefix}.bo", (dim,))

    def __call__(self, q_in: Tensor, kv: Tensor, pe: Tensor = None, attn_bias: np.ndarray = None) -> Tensor:
        n, m = q_in.shape[0], kv.shape[0]
        h, d = self.heads, self.head_dim
        q = linear(q_in, self.wq, self.bq)
        k = linear(kv + pe if pe is not None else kv, self.wk, self.bk)
        v = linear(kv, self.wv, self.bv)
        qh = transpose(reshape(q, (n, h, d)), (1, 0, 2))
        kh = transpose(reshape(k, (m, h, d)), (1, 0, 2))
        vh = transpose(reshape(v, (m, h, d)), (1, 0, 2))
        scores = matmul(qh, transpose(kh, (0, 2, 1))) * (1.0 / np.sqrt(d))
        if attn_bias is not None:
            scores = scores + Tensor(attn_bias)  # (1, n, m), 0 or -inf
        attn = softmax(scores, axis=2)
        out = reshape(transpose(matmul(attn, vh), (1, 0, 2)), (n, self.dim))
        return linear(out, self.wo, self.bo)


class TransformerBlock:
    """Cross-attention -> self-attention -> FFN, each with residual + post-norm."""

    def __init__(self, bank: ParamBank, prefix: str, rng: Rng, dim: int, kv_dim: int,
                 heads: int, ffn_dim: int):
        self.cross = MultiHeadAttention(bank, f"{prefix}.cross", rng, dim, kv_dim, heads)
        self.self_attn = MultiHeadAttention(bank, f"{prefix}.self", rng, dim, dim, heads)
        g, z, o = bank.gauss, bank.zeros, bank.ones
        self.fw1 = bank.xavier(f"{prefix}.ffn.w1", rng, (dim, ffn_dim))
        self.fb1 = z(f"{prefix}.ffn.b1", (ffn_dim,))
        self.fw2 = bank.xavier(f"{prefix}.ffn.w2", rng, (ffn_dim, dim))
        self.fb2 = z(f"{prefix}.ffn.b2", (dim,))
        self.norms = [(o(f"{prefix}.ln{i}.g", (dim,)), z(f"{prefix}.ln{i}.b", (dim,))) for i in (1, 2, 3)]

    def __call__(self, q: Tensor, kv: Tensor, pe: Tensor = None, attn_bias: np.ndarray = None) -> Tensor:
        x = layer_norm(q + self.cross(q, kv, pe, attn_bias), *self.norms[0])
        x = layer_norm(x + self.self_attn(x, x), *self.norms[1])
        f = linear(relu(linear(x, self.fw1, self.fb1)), self.fw2, self.fb2)
        return layer_norm(x + f, *self.norms[2])
