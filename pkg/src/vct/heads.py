"""Prediction heads, bipartite matching, and the training loss.

Each query predicts a class distribution over the K categories plus a
"no object" slot, and a mask at V2 resolution via an inner product between
its embedded vector and a shared pixel embedding. Predictions are matched to
ground-truth sounding objects with the Hungarian algorithm; the total loss is
a weighted sum of classification CE, mask BCE + Dice over matched pairs, and
the prototype presence loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .decoder import LayerOutput
from .errors import ValidationError
from .interp import bilinear_resize
from .layers import ParamBank, linear
from .rng import Rng
from .tensor import (Tensor, bce_with_logits, conv2d, index_select, log_softmax, matmul,
                     relu, reshape, sigmoid, tmean, transpose, tsum, _sigmoid)


@dataclass
class MatchResult:
    """Assignment between queries and ground-truth objects."""

    pairs: list          # (query_index, object_index), sorted by object index
    total_cost: float


class PredictionHeads:
    """Class head, mask-embedding MLP, and the shared pixel-embedding conv."""

    def __init__(self, bank: ParamBank, rng: Rng, *, hidden_dim: int, num_categories: int,
                 c2: int, h2: int, w2: int):
        self.h2, self.w2 = h2, w2
        self.hidden = hidden_dim
        g, x, z = bank.gauss, bank.xavier, bank.zeros
        self.pixel_w = x("heads.pixel.w", rng, (3, 3, c2, hidden_dim))
        self.pixel_b = z("heads.pixel.b", (hidden_dim,))
        self.class_w = x("heads.class.w", rng, (hidden_dim, num_categories + 1))
        self.class_b = z("heads.class.b", (num_categories + 1,))
        self.mask_w1 = x("heads.mask.w1", rng, (hidden_dim, hidden_dim))
        self.mask_b1 = z("heads.mask.b1", (hidden_dim,))
        self.mask_w2 = x("heads.mask.w2", rng, (hidden_dim, hidden_dim))
        self.mask_b2 = z("heads.mask.b2", (hidden_dim,))
        self.mask_w3 = x("heads.mask.w3", rng, (hidden_dim, hidden_dim))
        self.mask_b3 = z("heads.mask.b3", (hidden_dim,))

    def pixel_embedding(self, v2: Tensor) -> Tensor:
        """(H2*W2, hidden) shared pixel embedding; one conv projection of V2."""
        emb = conv2d(v2, self.pixel_w, self.pixel_b)
        return reshape(emb, (self.h2 * self.w2, self.hidden))

    def predict(self, queries: Tensor, pixel_embed: Tensor) -> LayerOutput:
        cls = linear(queries, self.class_w, self.class_b)
        e = relu(linear(queries, self.mask_w1, self.mask_b1))
        e = relu(linear(e, self.mask_w2, self.mask_b2))
        e = linear(e, self.mask_w3, self.mask_b3)
        masks = reshape(matmul(e, transpose(pixel_embed)), (queries.shape[0], self.h2, self.w2))
        return LayerOutput(queries=queries, class_logits=cls, mask_logits=masks)


# -- matching --------------------------------------------------------------------


def _np_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def match_cost_matrix(class_logits: np.ndarray, mask_logits: np.ndarray,
                      gt_categories: np.ndarray, gt_masks: np.ndarray,
                      lambda_cls: float, lambda_mask: float) -> np.ndarray:
    """(N, O) assignment costs: -class probability of the object's category
    plus mask BCE + Dice, with the same weights the loss uses."""
    n = class_logits.shape[0]
    x = mask_logits.reshape(n, -1).astype(np.float64)
    t = gt_masks.reshape(gt_masks.shape[0], -1).astype(np.float64)
    hw = x.shape[1]

    probs = _np_softmax(class_logits.astype(np.float64), axis=1)
    cost_cls = -probs[:, gt_categories]

    # mean_p BCE(q, o) = mean_p[relu(x) + log1p(exp(-|x|))] - (x @ t^T)/HW
    base = (np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))).mean(axis=1)
    bce = base[:, None] - (x @ t.T) / hw

    s = _sigmoid(x)
    inter = s @ t.T
    dice = 1.0 - (2.0 * inter + 1.0) / (s.sum(axis=1)[:, None] + t.sum(axis=1)[None, :] + 1.0)

    return lambda_cls * cost_cls + lambda_mask * (bce + dice)


def match_from_cost(cost: np.ndarray) -> MatchResult:
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(cols)
    pairs = [(int(rows[i]), int(cols[i])) for i in order]
    total = float(sum(cost[q, o] for q, o in pairs))
    return MatchResult(pairs=pairs, total_cost=total)


def hungarian_match(class_logits: np.ndarray, mask_logits: np.ndarray,
                    gt_categories: np.ndarray, gt_masks: np.ndarray,
                    lambda_cls: float = 2.0, lambda_mask: float = 5.0) -> MatchResult:
    """Optimal query/object assignment under the matching cost."""
    n, o = class_logits.shape[0], len(gt_categories)
    if o > n:
        raise ValidationError(f"{o} ground-truth objects exceed {n} queries")
    if o == 0:
        return MatchResult(pairs=[], total_cost=0.0)
    cost = match_cost_matrix(class_logits, mask_logits, np.asarray(gt_categories),
                             gt_masks, lambda_cls, lambda_mask)
    return match_from_cost(cost)


# -- losses ----------------------------------------------------------------------


def dice_loss(pred_prob: Tensor, gt) -> Tensor:
    """Soft Dice loss with +1 smoothing on a single mask."""
    t = Tensor(np.asarray(gt, dtype=pred_prob.data.dtype))
    inter = tsum(pred_prob * t)
    return 1.0 - (2.0 * inter + 1.0) / (tsum(pred_prob) + float(t.data.sum()) + 1.0)


def _dice_batch(pred_prob: Tensor, gt: np.ndarray) -> Tensor:
    """(n,) Dice losses for row-aligned flat masks."""
    t = Tensor(np.asarray(gt, dtype=pred_prob.data.dtype))
    inter = tsum(pred_prob * t, axis=1)
    denom = tsum(pred_prob, axis=1) + Tensor(gt.sum(axis=1).astype(pred_prob.data.dtype))
    return 1.0 - (2.0 * inter + 1.0) / (denom + 1.0)


def output_loss(output: LayerOutput, gt_categories: np.ndarray, gt_masks: np.ndarray,
                match: MatchResult, num_categories: int, no_object_weight: float):
    """(cls, bce, dice) loss Tensors for one block's predictions.

    CE runs over all queries (unmatched ones target "no object" at reduced
    weight); mask losses run over matched pairs only.
    """
    n = output.class_logits.shape[0]
    dtype = output.class_logits.data.dtype

    targets = np.full(n, num_categories, dtype=np.int64)
    weights = np.full(n, no_object_weight, dtype=dtype)
    for q, o in match.pairs:
        targets[q] = gt_categories[o]
        weights[q] = 1.0
    onehot = np.zeros((n, num_categories + 1), dtype=dtype)
    onehot[np.arange(n), targets] = 1.0

    logp = log_softmax(output.class_logits, axis=1)
    per_query = -tsum(logp * Tensor(onehot), axis=1)
    cls = tsum(per_query * Tensor(weights)) / float(weights.sum())

    if match.pairs:
        qidx = [q for q, _ in match.pairs]
        oidx = [o for _, o in match.pairs]
        flat = reshape(output.mask_logits, (n, output.mask_logits.data.shape[1] *
                                            output.mask_logits.data.shape[2]))
        sel = index_select(flat, qidx)
        t = gt_masks.reshape(gt_masks.shape[0], -1)[oidx].astype(dtype)
        bce = tmean(bce_with_logits(sel, t))
        dice = tmean(_dice_batch(sigmoid(sel), t))
    else:
        zero = Tensor(np.zeros((), dtype=dtype))
        bce, dice = zero, zero
    return cls, bce, dice


def total_loss(outputs: list, gt_categories: np.ndarray, gt_masks: np.ndarray,
               presence_loss, *, num_categories: int, lambda_cls: float,
               lambda_mask: float, lambda_pac: float, no_object_weight: float,
               aux_losses: bool, matches: list = None):
    """Weighted total over the supervised outputs (all of them with auxiliary
    supervision, else the final one). Matching is recomputed per supervised
    output unless `matches` pins it (used by the finite-difference checks).

    Returns (total Tensor, components dict of floats).
    """
    supervised = outputs if aux_losses else [outputs[-1]]
    if matches is None:
        matches = [hungarian_match(o.class_logits.data, o.mask_logits.data,
                                   gt_categories, gt_masks, lambda_cls, lambda_mask)
                   for o in supervised]

    dtype = supervised[0].class_logits.data.dtype
    cls_sum = bce_sum = dice_sum = Tensor(np.zeros((), dtype=dtype))
    for out, match in zip(supervised, matches):
        cls, bce, dice = output_loss(out, gt_categories, gt_masks, match,
                                     num_categories, no_object_weight)
        cls_sum = cls_sum + cls
        bce_sum = bce_sum + bce
        dice_sum = dice_sum + dice
    scale = 1.0 / len(supervised)
    cls_avg = cls_sum * scale
    mask_avg = (bce_sum + dice_sum) * scale
    pac = presence_loss if presence_loss is not None else Tensor(np.zeros((), dtype=dtype))

    total = lambda_cls * cls_avg + lambda_mask * mask_avg + lambda_pac * pac
    components = {
        "loss_cls": float(cls_avg.data),
        "loss_mask": float(mask_avg.data),
        "loss_pac": float(pac.data),
        "loss_total": float(total.data),
    }
    return total, components


# -- inference assembly ------------------------------------------------------------


def assemble_semantic_map(class_logits: np.ndarray, mask_logits: np.ndarray,
                          num_categories: int, out_hw: tuple = None) -> np.ndarray:
    """Per-pixel category map (background = num_categories).

    Each query votes for category k with (class prob of k) * (mask sigmoid);
    a pixel is background when the best category's vote is below half the
    total query mass there, with the mass floored at one query's worth.
    Without the floor the rule is self-referential when a single query
    dominates a pixel (vote ~ sigma vs 0.5 * sigma), which turns the whole
    sigmoid skirt into foreground; the floor makes sub-unit evidence compete
    against half of one full query instead. Vote maps are bilinearly
    upsampled to `out_hw` before the argmax when given.
    """
    probs = _np_softmax(class_logits.astype(np.float64), axis=1)[:, :num_categories]
    sig = _sigmoid(mask_logits.astype(np.float64))
    votes = np.einsum("qk,qhw->khw", probs, sig)
    mass = sig.sum(axis=0)
    if out_hw is not None:
        votes = bilinear_resize(votes, *out_hw)
        mass = bilinear_resize(mass, *out_hw)
    best = votes.argmax(axis=0)
    background = votes.max(axis=0) < 0.5 * np.maximum(mass, 1.0)
    out = best.astype(np.int64)
    out[background] = num_categories
    return out
