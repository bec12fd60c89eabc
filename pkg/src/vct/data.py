"""Synthetic audio-visual scenes: mixed sound sources, silent distractors,
and off-screen noise categories.

A sample is one frame: an RGB image of disjoint colored shapes (color encodes
the audio category), per-object masks/categories/sounding flags, and the
audio-presence vector over the K categories. Sounding objects are the
segmentation targets; a silent object must not be segmented, and an
off-screen category sounds without any visible emitter (noise robustness
stressor). On-screen objects get distinct categories so that presence plus
appearance determines the ground truth unambiguously.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SceneConfig
from .container import read_tensor, write_tensor
from .errors import ValidationError
from .rng import Rng

_PLACEMENT_RETRIES = 30


@dataclass
class Sample:
    """One synthetic frame with its annotations."""

    image: np.ndarray            # (H, W, 3) float32 in [0, 1]
    masks: np.ndarray            # (n_objects, H, W) float32, binary, pairwise disjoint
    categories: np.ndarray       # (n_objects,) int64 in [0, K)
    sounding: np.ndarray         # (n_objects,) bool
    audio_presence: np.ndarray   # (K,) int64 in {0, 1}
    frame_index: int = 0

    @property
    def n_objects(self) -> int:
        return self.masks.shape[0]

    def sounding_targets(self):
        """(categories, masks) of the sounding on-screen objects only."""
        keep = self.sounding
        return self.categories[keep], self.masks[keep]


def category_color(k: int, num_categories: int) -> np.ndarray:
    """Fixed palette; distinct saturated hues per category."""
    hue = (k / max(num_categories, 1)) * 6.0
    c, x = 0.85, 0.85 * (1 - abs(hue % 2 - 1))
    segments = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)]
    r, g, b = segments[int(hue) % 6]
    return np.array([0.1 + r, 0.1 + g, 0.1 + b], dtype=np.float32)


def _raster_shape(kind: int, cy: float, cx: float, ext: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # circle
        return ((yy - cy) ** 2 + (xx - cx) ** 2 <= ext * ext)
    if kind == 1:  # rectangle, slightly anisotropic
        return (np.abs(yy - cy) <= ext) & (np.abs(xx - cx) <= 0.8 * ext)
    # upward triangle inscribed in a 2*ext box
    rel = (yy - (cy - ext)) / (2.0 * ext)
    halfwidth = np.clip(rel, 0.0, 1.0) * ext
    return (rel >= 0) & (rel <= 1) & (np.abs(xx - cx) <= halfwidth)


def generate_scene(rng: Rng, cfg: SceneConfig, frame_index: int = 0) -> Sample:
    """Deterministic scene draw: shapes, sounding flags, off-screen audio, noise."""
    h, w, k = cfg.height, cfg.width, cfg.num_categories
    n_wanted = int(rng.integers(1, cfg.max_objects + 1))
    cats = rng.choice(k, size=n_wanted, replace=False).astype(np.int64)

    masks, placed_cats = [], []
    occupied = np.zeros((h, w), dtype=bool)
    for cat in cats:
        for _ in range(_PLACEMENT_RETRIES):
            kind = int(rng.integers(0, 3))
            ext = int(rng.integers(cfg.min_extent, cfg.max_extent + 1))
            cy = float(rng.integers(ext + 1, h - ext - 1))
            cx = float(rng.integers(ext + 1, w - ext - 1))
            m = _raster_shape(kind, cy, cx, ext, h, w)
            if not (m & occupied).any():
                occupied |= m
                masks.append(m)
                placed_cats.append(cat)
                break
        # bounded retries exhausted: drop this object, scene has fewer

    n = len(masks)
    categories = np.asarray(placed_cats, dtype=np.int64)
    sounding = np.array([rng.uniform() >= cfg.silent_prob for _ in range(n)], dtype=bool)

    presence = np.zeros(k, dtype=np.int64)
    presence[categories[sounding]] = 1

    if rng.uniform() < cfg.off_screen_prob:
        free = np.setdiff1d(np.arange(k), categories)
        if free.size:
            presence[free[int(rng.integers(0, free.size))]] = 1

    image = np.full((h, w, 3), 0.12, dtype=np.float32)
    for m, cat in zip(masks, categories):
        image[m] = category_color(int(cat), k)
    if cfg.image_noise > 0:
        image = image + rng.normal((h, w, 3), cfg.image_noise, dtype=np.float32)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    return Sample(
        image=image,
        masks=np.stack(masks).astype(np.float32) if n else np.zeros((0, h, w), np.float32),
        categories=categories,
        sounding=sounding,
        audio_presence=presence,
        frame_index=frame_index,
    )


def make_dataset(seed: int, cfg: SceneConfig, count: int) -> list:
    """`count` independent scenes; per-sample stream = split(seed, index)."""
    base = Rng(seed)
    return [generate_scene(base.split(i), cfg, frame_index=i) for i in range(count)]


def semantic_map(sample: Sample, num_categories: int) -> np.ndarray:
    """(H, W) int64 ground-truth category map; background = num_categories."""
    out = np.full(sample.image.shape[:2], num_categories, dtype=np.int64)
    for cat, mask in zip(*sample.sounding_targets()):
        out[mask > 0.5] = cat
    return out


# -- dataset directory I/O -----------------------------------------------------


def write_dataset(samples, cfg: SceneConfig, out_dir, seed=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        tag = f"s{s.frame_index:05d}"
        image_name = f"{tag}_image.vct"
        write_tensor(out / image_name, s.image)
        mask_names = []
        for j in range(s.n_objects):
            name = f"{tag}_mask{j:02d}.vct"
            write_tensor(out / name, s.masks[j])
            mask_names.append(name)
        entries.append({
            "frame_index": s.frame_index,
            "image": image_name,
            "masks": mask_names,
            "categories": [int(c) for c in s.categories],
            "sounding": [bool(b) for b in s.sounding],
            "audio_presence": [int(v) for v in s.audio_presence],
        })
    manifest = {
        "format": "vct-dataset-v1",
        "sample_count": len(samples),
        "seed": seed,
        "scene": {
            "height": cfg.height, "width": cfg.width,
            "num_categories": cfg.num_categories, "max_objects": cfg.max_objects,
            "off_screen_prob": cfg.off_screen_prob, "silent_prob": cfg.silent_prob,
            "image_noise": cfg.image_noise, "audio_noise": cfg.audio_noise,
            "min_extent": cfg.min_extent, "max_extent": cfg.max_extent,
        },
        "samples": entries,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: manifest is not valid JSON ({e})") from e
    if manifest.get("format") != "vct-dataset-v1":
        raise ValidationError(f"{path}: unknown dataset format {manifest.get('format')!r}")
    for key in ("sample_count", "scene", "samples"):
        if key not in manifest:
            raise ValidationError(f"{path}: manifest missing {key!r}")
    if manifest["sample_count"] != len(manifest["samples"]):
        raise ValidationError(f"{path}: sample_count {manifest['sample_count']} != "
                              f"{len(manifest['samples'])} listed samples")
    return manifest


def scene_config_from_manifest(manifest: dict) -> SceneConfig:
    sc = manifest["scene"]
    cfg = SceneConfig(**{k: sc[k] for k in sc})
    cfg.validate()
    return cfg


def read_dataset(data_dir):
    """Load (scene_config, samples) from a dataset directory, validating shapes."""
    ddir = Path(data_dir)
    manifest = read_manifest(ddir)
    cfg = scene_config_from_manifest(manifest)
    h, w, k = cfg.height, cfg.width, cfg.num_categories
    samples = []
    for e in manifest["samples"]:
        image = read_tensor(ddir / e["image"])
        if image.shape != (h, w, 3):
            raise ValidationError(f"{e['image']}: image shape {image.shape} != {(h, w, 3)}")
        n = len(e["masks"])
        if not (len(e["categories"]) == len(e["sounding"]) == n):
            raise ValidationError(f"sample {e['frame_index']}: masks/categories/sounding lengths disagree")
        if len(e["audio_presence"]) != k:
            raise ValidationError(f"sample {e['frame_index']}: audio_presence length != {k}")
        masks = np.zeros((n, h, w), dtype=np.float32)
        for j, name in enumerate(e["masks"]):
            m = read_tensor(ddir / name)
            if m.shape != (h, w):
                raise ValidationError(f"{name}: mask shape {m.shape} != {(h, w)}")
            masks[j] = m
        samples.append(Sample(
            image=image.astype(np.float32),
            masks=masks,
            categories=np.asarray(e["categories"], dtype=np.int64),
            sounding=np.asarray(e["sounding"], dtype=bool),
            audio_presence=np.asarray(e["audio_presence"], dtype=np.int64),
            frame_index=int(e["frame_index"]),
        ))
    return cfg, samples
