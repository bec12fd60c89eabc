"""Bilinear resizing and block pooling on plain numpy arrays.

Resizing uses half-pixel centers with edge clamping, so an exact 2x
downsample equals the 2x2 block average.
"""

from __future__ import annotations

import numpy as np


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last two axes of `arr` to (out_h, out_w)."""
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(src).astype(np.int64)
        frac = src - lo
        lo0 = np.clip(lo, 0, n_in - 1)
        lo1 = np.clip(lo + 1, 0, n_in - 1)
        return lo0, lo1, frac

    y0, y1, wy = axis_weights(h, out_h)
    x0, x1, wx = axis_weights(w, out_w)

    r0 = np.take(arr, y0, axis=-2)
    r1 = np.take(arr, y1, axis=-2)
    c00 = np.take(r0, x0, axis=-1)
    c01 = np.take(r0, x1, axis=-1)
    c10 = np.take(r1, x0, axis=-1)
    c11 = np.take(r1, x1, axis=-1)

    wy = wy.reshape(-1, 1)
    top = c00 * (1 - wx) + c01 * wx
    bot = c10 * (1 - wx) + c11 * wx
    return (top * (1 - wy) + bot * wy).astype(arr.dtype, copy=False)


def block_mean(arr: np.ndarray, factor: int) -> np.ndarray:
    """Average over non-overlapping factor x factor blocks of the last two axes."""
    h, w = arr.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"block_mean: {h}x{w} not divisible by {factor}")
    shape = arr.shape[:-2] + (h // factor, factor, w // factor, factor)
    return arr.reshape(shape).mean(axis=(-3, -1))
