"""Audio-visual segmentation with vision-derived queries, on a small numpy
autodiff engine.

The public surface re-exports the pieces most scripts need: the tensor
engine, the synthetic data generator and stub encoders, the model, the
training/evaluation drivers, and the metrics.
"""

from .config import ExperimentConfig, ModelConfig, SceneConfig, TrainConfig, desk_preset, paper_scale_preset
from .container import read_archive, read_pgm, read_tensor, write_archive, write_pgm, write_tensor
from .data import Sample, generate_scene, make_dataset, read_dataset, semantic_map, write_dataset
from .decoder import LayerOutput, block_schedule, compute_attention_mask
from .encoders import FeatureBundle, StubEncoders
from .errors import ConfigError, GradCheckError, ShapeError, TrainingDiverged, ValidationError
from .gradcheck import grad_check
from .heads import MatchResult, assemble_semantic_map, dice_loss, hungarian_match, total_loss
from .metrics import EvalReport, SegmentationScorer, fscore, jaccard
from .model import VCTModel
from .rng import Rng
from .tensor import Tensor, no_grad
from .train import (AdamW, dump_logit_maps, evaluate_checkpoint, evaluate_model,
                    generate_dataset, load_checkpoint, model_from_checkpoint,
                    restore_model, save_checkpoint, train_model)

__version__ = "0.1.0"

__all__ = [
    "AdamW", "ConfigError", "EvalReport", "ExperimentConfig", "FeatureBundle",
    "GradCheckError", "LayerOutput", "MatchResult", "ModelConfig", "Rng", "Sample",
    "SceneConfig", "SegmentationScorer", "ShapeError", "StubEncoders", "Tensor",
    "TrainConfig", "TrainingDiverged", "VCTModel", "ValidationError",
    "assemble_semantic_map", "block_schedule", "compute_attention_mask", "desk_preset",
    "dice_loss", "dump_logit_maps", "evaluate_checkpoint", "evaluate_model", "fscore",
    "generate_dataset", "generate_scene", "grad_check", "hungarian_match", "jaccard",
    "load_checkpoint", "make_dataset", "model_from_checkpoint", "no_grad",
    "paper_scale_preset", "read_archive", "read_dataset", "read_pgm", "read_tensor",
    "restore_model", "save_checkpoint", "semantic_map", "total_loss", "train_model",
    "write_archive", "write_dataset", "write_pgm", "write_tensor",
]
