"""Experiment driver: training loop, checkpointing, evaluation, logit dumps.

Everything is deterministic given (config, seed, dataset): batch indices and
Gumbel draws come from counter-based streams keyed by the iteration index, so
resuming from a checkpoint continues bit-for-bit, and two identical runs
produce byte-identical checkpoints and reports.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .container import read_archive, write_archive, write_pgm
from .data import Sample, make_dataset, read_dataset, semantic_map, write_dataset
from .encoders import STREAM_BATCH, STREAM_GUMBEL, StubEncoders
from .errors import TrainingDiverged, ValidationError
from .heads import assemble_semantic_map, total_loss
from .interp import block_mean
from .metrics import EvalReport, SegmentationScorer
from .model import VCTModel
from .rng import Rng
from .tensor import no_grad, _sigmoid

STREAM_GUMBEL_EVAL = 6
CHECKPOINT_FORMAT = "vct-checkpoint-v1"


class AdamW:
    """Adam with decoupled weight decay. Parameters whose grad is None are
    skipped entirely (no moment update, no decay)."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = params
        self.lr, self.b1, self.b2 = lr, beta1, beta2
        self.eps, self.wd = eps, weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.b1 ** self.step_count
        bc2 = 1.0 - self.b2 ** self.step_count
        for k, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            t.data -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * t.data)

    def state_tensors(self) -> dict:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict, step_count: int):
        self.step_count = int(step_count)
        for k in self.params:
            self.m[k] = tensors[f"adam.m.{k}"].astype(self.m[k].dtype, copy=True)
            self.v[k] = tensors[f"adam.v.{k}"].astype(self.v[k].dtype, copy=True)


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, cfg: ExperimentConfig, iteration: int, model: VCTModel,
                    optimizer: AdamW = None, best_m_j: float = None) -> None:
    tensors = {f"param.{k}": t.data for k, t in model.params.items()}
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "iteration": int(iteration),
        "adam_step": optimizer.step_count if optimizer else 0,
        "has_optimizer": optimizer is not None,
        "best_m_j": best_m_j,
    }
    write_archive(path, meta, tensors)


def load_checkpoint(path):
    meta, tensors = read_archive(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a checkpoint (format {meta.get('format')!r})")
    cfg = ExperimentConfig.from_dict(meta["config"])
    return meta, cfg, tensors


def restore_model(model: VCTModel, tensors: dict) -> None:
    for name, t in model.params.items():
        key = f"param.{name}"
        if key not in tensors:
            raise ValidationError(f"checkpoint missing parameter {name!r}")
        arr = tensors[key]
        if arr.shape != t.data.shape:
            raise ValidationError(f"checkpoint parameter {name!r} has shape {arr.shape}, "
                                  f"expected {t.data.shape}")
        t.data = arr.astype(model.dtype, copy=True)


def model_from_checkpoint(path, dtype=np.float32):
    meta, cfg, tensors = load_checkpoint(path)
    model = VCTModel(cfg, dtype=dtype)
    restore_model(model, tensors)
    return model, cfg, meta, tensors


# -- data plumbing ----------------------------------------------------------------


def check_dataset_compatible(cfg: ExperimentConfig, data_cfg) -> None:
    """The dataset must agree with the experiment on K and the image size."""
    if data_cfg.num_categories != cfg.scene.num_categories:
        raise ValidationError(f"dataset has K={data_cfg.num_categories}, "
                              f"config expects {cfg.scene.num_categories}")
    if (data_cfg.height, data_cfg.width) != (cfg.scene.height, cfg.scene.width):
        raise ValidationError(f"dataset images are {data_cfg.height}x{data_cfg.width}, "
                              f"config expects {cfg.scene.height}x{cfg.scene.width}")


def training_targets(sample: Sample):
    """(categories, masks at V2 resolution) for the sounding objects.

    Masks keep the soft block-mean coverage of each V2 cell: the BCE optimum
    then reproduces the coverage fraction, and the upsampled 0.5 level set
    tracks the true boundary much closer than a binarized target would.
    """
    cats, masks = sample.sounding_targets()
    if masks.shape[0]:
        masks16 = block_mean(masks, 4).astype(np.float32)
    else:
        masks16 = np.zeros((0, masks.shape[1] // 4, masks.shape[2] // 4), np.float32)
    return cats, masks16


def generate_dataset(cfg: ExperimentConfig, out_dir, seed: int, count: int,
                     overwrite: bool = False) -> dict:
    """Write a dataset directory; returns a summary dict."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"{out} exists and is not empty (pass overwrite to replace)")
    samples = make_dataset(seed, cfg.scene, count)
    write_dataset(samples, cfg.scene, out, seed=seed)

    k = cfg.scene.num_categories
    sounding_counts = np.zeros(k, dtype=np.int64)
    off_screen = 0
    for s in samples:
        cats, _ = s.sounding_targets()
        for c in cats:
            sounding_counts[c] += 1
        visible = set(int(c) for c in cats)
        if any(s.audio_presence[j] and j not in visible for j in range(k)):
            off_screen += 1
    return {
        "count": count,
        "sounding_per_category": [int(c) for c in sounding_counts],
        "off_screen_fraction": (off_screen / count) if count else 0.0,
        "out_dir": str(out),
    }


# -- training ---------------------------------------------------------------------


def _batch_indices(seed: int, iteration: int, n: int, batch: int) -> np.ndarray:
    rng = Rng(seed).split(STREAM_BATCH).split(iteration)
    if n >= batch:
        return rng.choice(n, size=batch, replace=False)
    return rng.integers(0, n, shape=batch)


def train_model(cfg: ExperimentConfig, data_dir, out_dir, resume=None, force=False,
                log_fn=None):
    """Train per config on a dataset directory; writes line-delimited JSON logs
    plus final and best checkpoints. Returns paths and the last metrics."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_cfg, samples = read_dataset(data_dir)
    check_dataset_compatible(cfg, data_cfg)
    if not samples:
        raise ValidationError(f"dataset {data_dir} is empty")

    encoders = StubEncoders(cfg)
    model = VCTModel(cfg)
    opt = AdamW(model.params, lr=cfg.train.learning_rate, beta1=cfg.train.beta1,
                beta2=cfg.train.beta2, eps=cfg.train.adam_eps,
                weight_decay=cfg.train.weight_decay)

    start_iter = 0
    resumed_best = -1.0
    if resume is not None:
        meta, ck_cfg, tensors = load_checkpoint(resume)
        if ck_cfg.to_dict() != cfg.to_dict() and not force:
            raise ValidationError(f"{resume}: checkpoint config differs from the current "
                                  f"config (pass force to override)")
        restore_model(model, tensors)
        if meta.get("has_optimizer"):
            opt.load_state(tensors, meta.get("adam_step", 0))
        start_iter = int(meta["iteration"])
        if meta.get("best_m_j") is not None:
            resumed_best = float(meta["best_m_j"])

    bundles = [encoders.encode(s) for s in samples]
    targets = [training_targets(s) for s in samples]
    n = len(samples)

    log_path = out / "train_log.jsonl"
    log_file = open(log_path, "a" if resume else "w", encoding="utf-8")

    def emit(record):
        line = json.dumps(record, sort_keys=True)
        log_file.write(line + "\n")
        log_file.flush()
        if log_fn:
            log_fn(record)

    final_path = out / "checkpoint_final.vcta"
    best_path = out / "checkpoint_best.vcta"
    best_mj = resumed_best
    last_mj = None

    def eval_train_mj(iteration):
        nonlocal best_mj, last_mj
        report = evaluate_model(model, encoders, samples, cfg)
        last_mj = report.m_j
        emit({"iter": iteration, "train_m_j": report.m_j, "train_m_f": report.m_f})
        if report.m_j > best_mj:
            best_mj = report.m_j
            save_checkpoint(best_path, cfg, iteration, model, opt, best_m_j=best_mj)
        return report

    try:
        for it in range(start_iter, cfg.train.iterations):
            idx = _batch_indices(cfg.seed, it, n, cfg.train.batch_size)
            opt.zero_grad()
            comp_sums = {}
            for pos, si in enumerate(idx):
                g_rng = Rng(cfg.seed).split(STREAM_GUMBEL).split(it).split(pos)
                outputs, pac = model.forward(bundles[si], samples[si].audio_presence,
                                             train=True, gumbel_rng=g_rng)
                cats, masks16 = targets[si]
                loss, comps = total_loss(
                    outputs, cats, masks16, pac,
                    num_categories=cfg.scene.num_categories,
                    lambda_cls=cfg.train.lambda_cls,
                    lambda_mask=cfg.train.lambda_mask,
                    lambda_pac=cfg.train.lambda_pac,
                    no_object_weight=cfg.train.no_object_weight,
                    aux_losses=cfg.model.aux_losses,
                )
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(it, comps)
                (loss * (1.0 / len(idx))).backward()
                for key, val in comps.items():
                    comp_sums[key] = comp_sums.get(key, 0.0) + val / len(idx)
            opt.step()

            step = it + 1
            if step % cfg.train.log_every == 0 or step == cfg.train.iterations:
                emit({"iter": step, **{k: round(v, 6) for k, v in comp_sums.items()}})
            if step % cfg.train.eval_every == 0 or step == cfg.train.iterations:
                eval_train_mj(step)
            if cfg.train.checkpoint_every and step % cfg.train.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_iter{step:06d}.vcta", cfg, step,
                                model, opt, best_m_j=best_mj)

        if last_mj is None:
            # zero-iteration (or fully resumed) runs still get an eval + best
            eval_train_mj(cfg.train.iterations)
        save_checkpoint(final_path, cfg, cfg.train.iterations, model, opt, best_m_j=best_mj)
    finally:
        log_file.close()

    return {"final": str(final_path), "best": str(best_path), "log": str(log_path),
            "train_m_j": last_mj}


# -- evaluation ---------------------------------------------------------------------


def predict_semantic_map(model: VCTModel, bundle, presence, *, gumbel_rng=None) -> np.ndarray:
    """Full-resolution predicted category map for one frame."""
    scene = model.cfg.scene
    with no_grad():
        outputs, _ = model.forward(bundle, presence, train=False, gumbel_rng=gumbel_rng)
    final = outputs[-1]
    return assemble_semantic_map(final.class_logits.data, final.mask_logits.data,
                                 scene.num_categories, out_hw=(scene.height, scene.width))


def evaluate_model(model: VCTModel, encoders: StubEncoders, samples, cfg: ExperimentConfig) -> EvalReport:
    scorer = SegmentationScorer(cfg.scene.num_categories)
    for s in samples:
        bundle = encoders.encode(s)
        g_rng = None
        if cfg.model.gumbel_at_eval:
            g_rng = Rng(cfg.seed).split(STREAM_GUMBEL_EVAL).split(s.frame_index)
        pred = predict_semantic_map(model, bundle, s.audio_presence, gumbel_rng=g_rng)
        scorer.add(pred, semantic_map(s, cfg.scene.num_categories), index=s.frame_index)
    return scorer.report()


def evaluate_checkpoint(ckpt_path, data_dir, report_path=None) -> EvalReport:
    model, cfg, _, _ = model_from_checkpoint(ckpt_path)
    data_cfg, samples = read_dataset(data_dir)
    check_dataset_compatible(cfg, data_cfg)
    encoders = StubEncoders(cfg)
    report = evaluate_model(model, encoders, samples, cfg)
    if report_path is not None:
        Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")
    return report


# -- logit-map dumps ----------------------------------------------------------------


def dump_logit_maps(ckpt_path, data_dir, sample_index: int, out_dir, stride: int = 5) -> list:
    """Write per-query sigmoid mask maps (stride-`stride` query subsample,
    blank maps dropped) as 8-bit binary PGM files named q{idx}.pgm."""
    model, cfg, _, _ = model_from_checkpoint(ckpt_path)
    data_cfg, samples = read_dataset(data_dir)
    check_dataset_compatible(cfg, data_cfg)
    by_index = {s.frame_index: s for s in samples}
    if sample_index not in by_index:
        raise ValidationError(f"sample {sample_index} not in dataset (have "
                              f"{sorted(by_index)[:8]}...)")
    sample = by_index[sample_index]
    encoders = StubEncoders(cfg)
    with no_grad():
        outputs, _ = model.forward(encoders.encode(sample), sample.audio_presence, train=False)
    masks = outputs[-1].mask_logits.data

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for q in range(0, masks.shape[0], stride):
        sig = _sigmoid(masks[q].astype(np.float64))
        if sig.max() < 0.5:        # blank map: nothing reaches threshold
            continue
        gray = np.rint(sig * 255.0).astype(np.uint8)
        path = out / f"q{q}.pgm"
        write_pgm(path, gray)
        written.append(str(path))
    return written
