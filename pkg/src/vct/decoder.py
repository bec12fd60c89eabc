"""Iterative audio-visual decoder over the generated queries.

One interaction unit = an audio-fetch block (queries cross-attend to the
frame's audio feature) followed by three visual-enhancement blocks over the
coarse-to-fine features (V5, V4, V3). The unit repeats D times and a final
audio block closes the stack, so the block count is always 4*D + 1.

Visual cross-attention is masked: positions where the previous block's
predicted mask (sigmoid, bilinearly downsampled to the level's resolution)
falls below 0.5 are excluded by an additive -inf bias; a query whose mask
would exclude everything falls back to full attention. Visual keys carry
fixed 2-D sinusoidal positions plus a learned per-level embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interp import bilinear_resize
from .layers import ParamBank, TransformerBlock, linear, sinusoidal_positions
from .rng import Rng
from .tensor import Tensor, index_select, reshape, _sigmoid

VISUAL_ORDER = ("v5", "v4", "v3")


@dataclass
class LayerOutput:
    """Per-block snapshot: refined queries plus that block's predictions."""

    queries: "Tensor"
    class_logits: "Tensor"   # (N, K+1)
    mask_logits: "Tensor"    # (N, H2, W2)


def block_schedule(num_unit_repeats: int) -> list:
    """Sources attended by each block, in execution order."""
    return ["audio", *VISUAL_ORDER] * num_unit_repeats + ["audio"]


def compute_attention_mask(mask_logits: np.ndarray, target_hw: tuple) -> np.ndarray:
    """Boolean (N, h*w) allowed-position mask from (N, H2, W2) mask logits.

    Sigmoid probabilities are bilinearly resized to the target level and
    thresholded at 0.5; an all-disallowed row falls back to all-allowed.
    """
    th, tw = target_hw
    probs = _sigmoid(np.asarray(mask_logits, dtype=np.float64))
    down = bilinear_resize(probs, th, tw).reshape(probs.shape[0], th * tw)
    allowed = down >= 0.5
    empty = ~allowed.any(axis=1)
    allowed[empty] = True
    return allowed


def attention_bias(allowed: np.ndarray, dtype) -> np.ndarray:
    """(1, N, M) additive bias: 0 where allowed, -inf where masked."""
    bias = np.where(allowed, 0.0, -np.inf).astype(dtype)
    return bias[None]


class Decoder:
    """The block stack plus per-level input projections and positions."""

    def __init__(self, bank: ParamBank, rng: Rng, *, hidden_dim: int, num_heads: int,
                 ffn_dim: int, num_unit_repeats: int, level_channels: dict,
                 level_hw: dict, audio_dim: int):
        self.hidden = hidden_dim
        self.level_hw = dict(level_hw)
        self.schedule = block_schedule(num_unit_repeats)

        g, z = bank.gauss, bank.zeros
        self.in_proj = {}
        for name in VISUAL_ORDER:
            self.in_proj[name] = (bank.xavier(f"dec.in_proj.{name}.w", rng, (level_channels[name], hidden_dim)),
                                  z(f"dec.in_proj.{name}.b", (hidden_dim,)))
        self.in_proj["audio"] = (bank.xavier("dec.in_proj.audio.w", rng, (audio_dim, hidden_dim)),
                                 z("dec.in_proj.audio.b", (hidden_dim,)))
        self.level_embed = g("dec.level_embed", rng, (len(VISUAL_ORDER), hidden_dim))

        self._pe = {name: sinusoidal_positions(*level_hw[name], hidden_dim, dtype=bank.dtype)
                    for name in VISUAL_ORDER}

        self.blocks = [TransformerBlock(bank, f"dec.block{i:02d}", rng, hidden_dim,
                                        hidden_dim, num_heads, ffn_dim)
                       for i in range(len(self.schedule))]

    def project_sources(self, features: dict, audio: Tensor) -> dict:
        """Per-level flattened key/value sources in the hidden width.
        Computed once per forward; the level embedding is added per block."""
        out = {}
        for name in VISUAL_ORDER:
            feat = features[name]
            h, w = feat.shape[:2]
            flat = reshape(feat, (h * w, feat.shape[2]))
            w_, b_ = self.in_proj[name]
            out[name] = linear(flat, w_, b_)
        aw, ab = self.in_proj["audio"]
        out["audio"] = linear(audio, aw, ab)
        return out

    def forward(self, queries: Tensor, sources: dict, predict_fn) -> list:
        """Run the block stack; `predict_fn(queries) -> LayerOutput` supplies
        per-block predictions (and the mask chain). Returns the initial output
        plus one output per block (4D + 2 total)."""
        outputs = [predict_fn(queries)]
        q = queries
        for i, (block, src) in enumerate(zip(self.blocks, self.schedule)):
            if src == "audio":
                q = block(q, sources["audio"])
            else:
                hw = self.level_hw[src]
                allowed = compute_attention_mask(outputs[-1].mask_logits.data, hw)
                bias = attention_bias(allowed, sources[src].data.dtype)
                lvl_idx = VISUAL_ORDER.index(src)
                kv = sources[src] + index_select(self.level_embed, [lvl_idx], axis=0)
                pe = Tensor(self._pe[src])
                q = block(q, kv, pe=pe, attn_bias=bias)
            outputs.append(predict_fn(q))
        return outputs
