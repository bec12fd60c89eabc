"""Vision-derived query generation.

Queries are built from the highest-resolution visual feature in three steps:

1. aggregation — project V2 into the hidden width with a 1x1/3x3/1x1 conv
   stack, then squeeze the flattened spatial axis down to N embeddings with a
   three-layer MLP;
2. prototype prompting — cross-attend the embeddings to a bank of learnable
   per-category audio prototypes (plus post-norm LN/FFN), and train the bank
   against the audio feature with a presence BCE loss;
3. pixel grouping — assign every V2 pixel to exactly one query with a hard
   Gumbel-softmax over queries (straight-through gradient) and add each
   query's mean assigned context back onto it.

Soft cross-attention grouping and no grouping are available as ablation
modes.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .layers import ParamBank, linear
from .rng import Rng
from .tensor import (Tensor, clip, conv2d, gumbel_softmax_hard, layer_norm, log, matmul,
                     relu, reshape, sigmoid, softmax, tmean, transpose, tsum)


class QueryGenerator:
    """Owns the aggregation convs/MLP, the prototype bank, and the grouping
    projections. Bound to a fixed V2 spatial shape (the squeeze MLP's input
    axis is H2*W2)."""

    def __init__(self, bank: ParamBank, rng: Rng, *, c2: int, h2: int, w2: int,
                 hidden_dim: int, num_queries: int, num_categories: int,
                 audio_dim: int, ffn_dim: int):
        self.h2, self.w2 = h2, w2
        self.hidden = hidden_dim
        self.n = num_queries
        hw = h2 * w2
        squeeze_hidden = max(num_queries, hw // 4)
        g, x, z, o = bank.gauss, bank.xavier, bank.zeros, bank.ones

        self.conv1_w = x("qgen.embed.conv1.w", rng, (1, 1, c2, hidden_dim))
        self.conv1_b = z("qgen.embed.conv1.b", (hidden_dim,))
        self.conv2_w = x("qgen.embed.conv2.w", rng, (3, 3, hidden_dim, hidden_dim))
        self.conv2_b = z("qgen.embed.conv2.b", (hidden_dim,))
        self.conv3_w = x("qgen.embed.conv3.w", rng, (1, 1, hidden_dim, hidden_dim))
        self.conv3_b = z("qgen.embed.conv3.b", (hidden_dim,))

        self.sq_w1 = x("qgen.squeeze.w1", rng, (hw, squeeze_hidden))
        self.sq_b1 = z("qgen.squeeze.b1", (squeeze_hidden,))
        self.sq_w2 = x("qgen.squeeze.w2", rng, (squeeze_hidden, squeeze_hidden))
        self.sq_b2 = z("qgen.squeeze.b2", (squeeze_hidden,))
        self.sq_w3 = x("qgen.squeeze.w3", rng, (squeeze_hidden, num_queries))
        self.sq_b3 = z("qgen.squeeze.b3", (num_queries,))

        self.prototypes = g("qgen.prototypes", rng, (num_categories, hidden_dim))
        self.pr_wq = x("qgen.prompt.wq", rng, (hidden_dim, hidden_dim))
        self.pr_wk = x("qgen.prompt.wk", rng, (hidden_dim, hidden_dim))
        self.pr_wv = x("qgen.prompt.wv", rng, (hidden_dim, hidden_dim))
        self.pr_ln1 = (o("qgen.prompt.ln1.g", (hidden_dim,)), z("qgen.prompt.ln1.b", (hidden_dim,)))
        self.pr_fw1 = x("qgen.prompt.ffn.w1", rng, (hidden_dim, ffn_dim))
        self.pr_fb1 = z("qgen.prompt.ffn.b1", (ffn_dim,))
        self.pr_fw2 = x("qgen.prompt.ffn.w2", rng, (ffn_dim, hidden_dim))
        self.pr_fb2 = z("qgen.prompt.ffn.b2", (hidden_dim,))
        self.pr_ln2 = (o("qgen.prompt.ln2.g", (hidden_dim,)), z("qgen.prompt.ln2.b", (hidden_dim,)))

        self.audio_w = x("qgen.audio_embed.w", rng, (audio_dim, hidden_dim))
        self.audio_b = z("qgen.audio_embed.b", (hidden_dim,))

        self.gr_wq = x("qgen.group.wq", rng, (hidden_dim, hidden_dim))
        self.gr_wk = x("qgen.group.wk", rng, (hidden_dim, hidden_dim))
        self.gr_wv = x("qgen.group.wv", rng, (hidden_dim, hidden_dim))
        self.gr_wo = x("qgen.group.wo", rng, (hidden_dim, hidden_dim))

    # -- step 1: visual embedding aggregation --------------------------------

    def aggregate(self, v2: Tensor):
        """(V2) -> (hidden map at V2 resolution, N aggregated embeddings)."""
        if v2.shape[:2] != (self.h2, self.w2):
            raise ShapeError(f"V2 spatial dims {v2.shape[:2]} do not match the bound "
                             f"shape {(self.h2, self.w2)}")
        x = relu(conv2d(v2, self.conv1_w, self.conv1_b))
        x = relu(conv2d(x, self.conv2_w, self.conv2_b))
        vh = conv2d(x, self.conv3_w, self.conv3_b)

        t = transpose(reshape(vh, (self.h2 * self.w2, self.hidden)))  # (C^h, H2W2)
        t = relu(linear(t, self.sq_w1, self.sq_b1))
        t = relu(linear(t, self.sq_w2, self.sq_b2))
        t = linear(t, self.sq_w3, self.sq_b3)                          # (C^h, N)
        return vh, transpose(t)

    # -- step 2: audio prototype prompting ------------------------------------

    def prompt(self, ve: Tensor) -> Tensor:
        """Cross-attention from embeddings to the prototype bank, then the
        (post-norm) LN/FFN the attention shorthand leaves implicit."""
        q = matmul(ve, self.pr_wq)
        k = matmul(self.prototypes, self.pr_wk)
        v = matmul(self.prototypes, self.pr_wv)
        attn = softmax(matmul(q, transpose(k)) * (1.0 / np.sqrt(self.hidden)), axis=1)
        x = layer_norm(ve + matmul(attn, v), *self.pr_ln1)
        f = linear(relu(linear(x, self.pr_fw1, self.pr_fb1)), self.pr_fw2, self.pr_fb2)
        return layer_norm(x + f, *self.pr_ln2)

    def presence_logits(self, audio: Tensor) -> Tensor:
        """(1, K) inner products between the pooled projected audio feature
        and each prototype."""
        pooled = tmean(linear(audio, self.audio_w, self.audio_b), axis=0, keepdims=True)
        return matmul(pooled, transpose(self.prototypes))

    def presence_loss(self, audio: Tensor, presence: np.ndarray) -> Tensor:
        """Mean BCE between sigmoid presence likelihoods and the 0/1 ground
        truth; likelihoods are clamped away from {0, 1}."""
        lik = clip(sigmoid(self.presence_logits(audio)), 1e-7, 1.0 - 1e-7)
        t = Tensor(np.asarray(presence, dtype=lik.data.dtype).reshape(1, -1))
        ce = t * log(lik) + (1.0 - t) * log(1.0 - lik)
        return -tmean(ce)

    # -- step 3: pixel context grouping ----------------------------------------

    def group(self, queries: Tensor, vh: Tensor, *, mode: str = "gumbel-hard",
              rng: Rng = None, noise: np.ndarray = None, tau: float = 1.0,
              hard: bool = True) -> Tensor:
        """Attach pixel context from the hidden map to each query.

        gumbel-hard: every pixel column is one-hot assigned to a query
        (straight-through); each query adds the mean of its assigned pixel
        values. Queries with no pixels keep their value (guarded divide).
        soft-cross-attn: ordinary softmax attention over pixels.
        none: identity.
        """
        if mode == "none":
            return queries
        flat = reshape(vh, (self.h2 * self.w2, self.hidden))
        logits = matmul(matmul(queries, self.gr_wq), transpose(matmul(flat, self.gr_wk)))
        values = matmul(flat, self.gr_wv)
        if mode == "gumbel-hard":
            assign = gumbel_softmax_hard(logits, rng=rng, noise=noise, tau=tau, hard=hard, axis=0)
            rowsum = tsum(assign, axis=1, keepdims=True)
            normed = assign / clip(rowsum, lo=1.0)
            ctx = matmul(matmul(normed, values), self.gr_wo)
        elif mode == "soft-cross-attn":
            attn = softmax(logits * (1.0 / np.sqrt(self.hidden)), axis=1)
            ctx = matmul(matmul(attn, values), self.gr_wo)
        else:
            raise ValueError(f"unknown grouping mode {mode!r}")
        return queries + ctx

    # -- composed ---------------------------------------------------------------

    def forward(self, v2: Tensor, audio: Tensor, presence: np.ndarray, *,
                use_prototypes: bool, use_presence_loss: bool, grouping: str,
                tau: float, rng: Rng = None, noise: np.ndarray = None,
                hard: bool = True):
        """Full query generation; returns (queries, presence loss or None)."""
        vh, ve = self.aggregate(v2)
        x = self.prompt(ve) if use_prototypes else ve
        out = self.group(x, vh, mode=grouping, rng=rng, noise=noise, tau=tau, hard=hard)
        loss = None
        if use_prototypes and use_presence_loss:
            loss = self.presence_loss(audio, presence)
        return out, loss
