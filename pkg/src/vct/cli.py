"""Command-line driver: dataset generation, training, evaluation, logit dumps.

All subcommands read a single JSON config document; every field has a
default and unknown fields are rejected.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExperimentConfig
from .errors import ConfigError, TrainingDiverged, ValidationError
from .train import dump_logit_maps, evaluate_checkpoint, generate_dataset, train_model


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    return ExperimentConfig.from_file(path)


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    summary = generate_dataset(cfg, args.out, args.seed, args.count, overwrite=args.overwrite)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    result = train_model(cfg, args.data, args.out, resume=args.resume, force=args.force,
                         log_fn=lambda rec: print(json.dumps(rec, sort_keys=True)))
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.ckpt, args.data, report_path=args.report)
    print(report.to_json())
    return 0


def _cmd_dump_logits(args) -> int:
    written = dump_logit_maps(args.ckpt, args.data, args.sample, args.out)
    print(json.dumps({"written": written}, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vct",
                                     description="audio-visual segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--config", help="experiment config JSON (defaults apply if omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, required=True, help="dataset seed")
    p.add_argument("--count", type=int, default=32, help="number of scenes")
    p.add_argument("--overwrite", action="store_true", help="replace a non-empty directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory (logs + checkpoints)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--force", action="store_true", help="ignore config mismatch on resume")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("dump-logits", help="write per-query mask maps as PGM files")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--sample", type=int, required=True, help="frame index")
    p.add_argument("--out", required=True, help="output directory for PGM files")
    p.set_defaults(fn=_cmd_dump_logits)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValidationError, TrainingDiverged,
            FileNotFoundError, FileExistsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
