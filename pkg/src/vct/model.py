"""Full segmentation model: query generation, decoder, and heads wired to a
single parameter bank so checkpoints see every learnable tensor by name.

Two query sources exist: the vision-derived generator (default) and the
audio-derived baseline (`use_act_baseline`), where learnable query embeddings
are shifted by a projection of the pooled audio feature and everything
downstream is identical. The baseline exists for directional comparisons.
"""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .decoder import Decoder
from .encoders import FeatureBundle, STREAM_PARAMS
from .heads import PredictionHeads
from .layers import ParamBank, linear
from .queries import QueryGenerator
from .rng import Rng
from .tensor import Tensor, tmean


class VCTModel:
    def __init__(self, cfg: ExperimentConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        scene, mc = cfg.scene, cfg.model
        self.dtype = np.dtype(dtype)
        self.h2, self.w2 = scene.height // 4, scene.width // 4
        c2, c3, c4, c5 = mc.encoder_channels
        level_hw = {
            "v3": (scene.height // 8, scene.width // 8),
            "v4": (scene.height // 16, scene.width // 16),
            "v5": (scene.height // 32, scene.width // 32),
        }

        self.bank = ParamBank(dtype)
        rng = Rng(cfg.seed).split(STREAM_PARAMS)

        if mc.use_act_baseline:
            self.qgen = None
            self.act_embed = self.bank.gauss("act.query_embed", rng, (mc.num_queries, mc.hidden_dim))
            self.act_w = self.bank.xavier("act.audio.w", rng, (mc.audio_dim, mc.hidden_dim))
            self.act_b = self.bank.zeros("act.audio.b", (mc.hidden_dim,))
        else:
            self.qgen = QueryGenerator(
                self.bank, rng, c2=c2, h2=self.h2, w2=self.w2,
                hidden_dim=mc.hidden_dim, num_queries=mc.num_queries,
                num_categories=scene.num_categories, audio_dim=mc.audio_dim,
                ffn_dim=mc.ffn_dim,
            )

        self.decoder = Decoder(
            self.bank, rng, hidden_dim=mc.hidden_dim, num_heads=mc.num_heads,
            ffn_dim=mc.ffn_dim, num_unit_repeats=mc.num_unit_repeats,
            level_channels={"v3": c3, "v4": c4, "v5": c5},
            level_hw=level_hw, audio_dim=mc.audio_dim,
        )
        self.heads = PredictionHeads(
            self.bank, rng, hidden_dim=mc.hidden_dim,
            num_categories=scene.num_categories, c2=c2, h2=self.h2, w2=self.w2,
        )

    @property
    def params(self) -> dict:
        return self.bank.tensors

    def _wrap(self, arr: np.ndarray) -> Tensor:
        return Tensor(np.asarray(arr, dtype=self.dtype))

    def forward(self, bundle: FeatureBundle, presence: np.ndarray, *, train: bool,
                gumbel_rng: Rng = None, gumbel_noise: np.ndarray = None,
                grouping_hard: bool = True):
        """Run the pipeline on one frame.

        Returns (per-block LayerOutputs, presence loss or None). Gumbel noise
        is drawn from `gumbel_rng` when given (training, or eval with
        gumbel_at_eval); with neither rng nor explicit noise the hard
        assignment is a plain argmax.
        """
        mc = self.cfg.model
        v2 = self._wrap(bundle.v2)
        audio = self._wrap(bundle.audio)

        pixel = self.heads.pixel_embedding(v2)
        predict_fn = lambda q: self.heads.predict(q, pixel)  # noqa: E731

        if mc.use_act_baseline:
            pooled = tmean(audio, axis=0, keepdims=True)
            queries = self.act_embed + linear(pooled, self.act_w, self.act_b)
            pac = None
        else:
            queries, pac = self.qgen.forward(
                v2, audio, presence,
                use_prototypes=mc.use_prototypes,
                use_presence_loss=mc.use_pac_loss and train,
                grouping=mc.grouping,
                tau=mc.gumbel_tau,
                rng=gumbel_rng,
                noise=gumbel_noise,
                hard=grouping_hard,
            )

        sources = self.decoder.project_sources(
            {k: self._wrap(v) for k, v in (("v3", bundle.v3), ("v4", bundle.v4), ("v5", bundle.v5))},
            audio,
        )
        outputs = self.decoder.forward(queries, sources, predict_fn)
        return outputs, pac
