"""Frozen stand-in encoders for the pretrained visual/audio backbones.

The visual stub is a seed-fixed stack of stride-2 convolutions (a stem plus
four stages) emitting features at strides 4/8/16/32 of the input; the audio
stub sums one fixed random unit signature per present category over the
feature rows and adds Gaussian noise. Weights are drawn once per experiment
seed and never trained, so encoding is a pure function of (seed, sample).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .data import Sample
from .errors import ConfigError
from .rng import Rng

# substream tags under the experiment seed
STREAM_PARAMS = 1
STREAM_ENCODER = 2
STREAM_AUDIO_NOISE = 3
STREAM_BATCH = 4
STREAM_GUMBEL = 5


@dataclass
class FeatureBundle:
    """Per-frame multi-scale visual features plus the frame's audio feature."""

    v2: np.ndarray   # (H/4,  W/4,  C2)
    v3: np.ndarray   # (H/8,  W/8,  C3)
    v4: np.ndarray   # (H/16, W/16, C4)
    v5: np.ndarray   # (H/32, W/32, C5)
    audio: np.ndarray  # (S, C_a)

    def levels(self):
        return {"v2": self.v2, "v3": self.v3, "v4": self.v4, "v5": self.v5}


def conv2d_strided(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 2) -> np.ndarray:
    """Plain (no-grad) 3x3 cross-correlation with padding 1 and the given stride."""
    k = w.shape[0]
    p = (k - 1) // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    win = win[::stride, ::stride]                      # (Ho, Wo, Cin, k, k)
    ho, wo = win.shape[:2]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, k * k * x.shape[2])
    out = cols @ w.reshape(k * k * x.shape[2], -1) + b
    return out.reshape(ho, wo, -1)


class StubEncoders:
    """Seed-fixed feature extractors shared by training and evaluation."""

    def __init__(self, cfg: ExperimentConfig):
        scene, model = cfg.scene, cfg.model
        if scene.height % 32 or scene.width % 32:
            raise ConfigError(f"image size {scene.height}x{scene.width} not divisible by 32")
        self.cfg = cfg
        self.seed = cfg.seed
        rng = Rng(cfg.seed).split(STREAM_ENCODER)

        widths = (3, model.stem_channels) + tuple(model.encoder_channels)
        self.convs = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            std = np.sqrt(2.0 / (9 * cin))
            w = rng.normal((3, 3, cin, cout), std, dtype=np.float32)
            b = np.zeros(cout, dtype=np.float32)
            self.convs.append((w, b))

        sig = rng.normal((scene.num_categories, model.audio_dim), 1.0, dtype=np.float32)
        self.signatures = sig / np.linalg.norm(sig, axis=1, keepdims=True)

    def encode_visual(self, image: np.ndarray) -> tuple:
        """(V2, V3, V4, V5) from an (H, W, 3) image."""
        if image.shape[0] % 32 or image.shape[1] % 32:
            raise ConfigError(f"image shape {image.shape[:2]} not divisible by 32")
        x = image.astype(np.float32)
        feats = []
        for i, (w, b) in enumerate(self.convs):
            x = np.maximum(conv2d_strided(x, w, b), 0.0)
            if i >= 1:  # stem output (stride 2) is not part of the bundle
                feats.append(x)
        return tuple(feats)

    def encode_audio(self, sample: Sample) -> np.ndarray:
        """(S, C_a) feature: sum of present-category signatures plus noise.

        Noise is keyed by (seed, frame_index), so re-encoding a sample is
        bit-identical.
        """
        s, ca = self.cfg.model.audio_len, self.cfg.model.audio_dim
        mix = (sample.audio_presence[:, None] * self.signatures).sum(axis=0)
        feat = np.broadcast_to(mix, (s, ca)).astype(np.float32).copy()
        sigma = self.cfg.scene.audio_noise
        if sigma > 0:
            noise_rng = Rng(self.seed).split(STREAM_AUDIO_NOISE).split(sample.frame_index)
            feat += noise_rng.normal((s, ca), sigma, dtype=np.float32)
        return feat

    def encode(self, sample: Sample) -> FeatureBundle:
        v2, v3, v4, v5 = self.encode_visual(sample.image)
        return FeatureBundle(v2=v2, v3=v3, v4=v4, v5=v5, audio=self.encode_audio(sample))
