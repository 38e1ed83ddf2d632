"""``trr`` command-line front end.

Every verb writes into an output directory (``--out``, else
``$TRR_OUTPUT_ROOT/<verb>``, else ``./runs/<verb>``) and stamps the fully
resolved config there as ``config.ini``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, apply_overrides, dump_config, load_config
from .data import (
    Dataset, downsample_spatial, generate_synthetic, integrate_frames, load_dataset, parse_event_file,
    save_dataset, write_event_csv, write_event_file,
)
from .errors import ConfigError, TrrError
from .models import ModelConfig, SnnModel, load_checkpoint, read_checkpoint
from .training import evaluate, run_ablation_suite, train

logger = logging.getLogger("trr_snn.cli")

OUTPUT_ROOT_ENV = "TRR_OUTPUT_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / args.verb
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> RunConfig:
    cfg = apply_overrides(load_config(args.config), args.set or [])
    cfg.data.validate()
    cfg.train.validate()
    return cfg


def _datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.data.dir:
        root = Path(cfg.data.dir)
        return load_dataset(root / "train.npz"), load_dataset(root / "test.npz")
    return generate_synthetic(cfg.data.spec())


def _model_config(cfg: RunConfig, data: Dataset) -> ModelConfig:
    sample = data.x[0]
    c, h, w = sample.shape[-3:]
    if (c, h, w) != (cfg.model.in_channels, cfg.model.height, cfg.model.width):
        raise ConfigError(f"dataset samples are {c}x{h}x{w} but [model] expects "
                          f"{cfg.model.in_channels}x{cfg.model.height}x{cfg.model.width}")
    return cfg.model


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- verbs --------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    train_set, test_set = generate_synthetic(cfg.data.spec())
    save_dataset(train_set, out / "train.npz")
    save_dataset(test_set, out / "test.npz")
    dump_config(cfg, out / "config.ini")
    print(f"wrote {len(train_set)} train / {len(test_set)} test samples to {out}")
    return 0


def cmd_convert_events(args) -> int:
    stream = parse_event_file(args.input)
    stream.validate()
    target = Path(args.output)
    suffix = target.suffix.lower()
    if suffix == ".csv":
        write_event_csv(stream, target)
    elif suffix == ".npy":
        frames = integrate_frames(stream, args.T, args.policy)
        if args.downsample > 1:
            frames = downsample_spatial(frames, args.downsample)
        np.save(target, frames)
    else:
        write_event_file(stream, target)
    print(f"converted {len(stream.events)} events to {target}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    train_set, test_set = _datasets(cfg)
    model = SnnModel(_model_config(cfg, train_set), seed=cfg.train.seed)
    dump_config(cfg, out / "config.ini")
    report = train(cfg.train, model, train_set, test_set, log_path=out / "log.jsonl",
                   summary_path=out / "summary.csv", checkpoint_path=out / "model.ckpt")
    result = evaluate(model, test_set)
    _write_json(out / "metrics.json", {"test_accuracy": result.accuracy, "asfr": result.asfr,
                                       "epochs": len(report.epochs), "iterations": len(report.iterations)})
    print(f"test accuracy {100 * result.accuracy:.2f}%  (run directory {out})")
    return 0


def _load_model(path) -> SnnModel:
    config, _ = read_checkpoint(path)
    return load_checkpoint(path, SnnModel(ModelConfig(**config)))


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    _, test_set = _datasets(cfg)
    model = _load_model(args.checkpoint)
    result = evaluate(model, test_set)
    dump_config(cfg, out / "config.ini")
    _write_json(out / "eval.json", {"checkpoint": str(args.checkpoint), "test_accuracy": result.accuracy,
                                    "asfr": result.asfr})
    print(f"test accuracy {100 * result.accuracy:.2f}%")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    train_set, test_set = _datasets(cfg)
    dump_config(cfg, out / "config.ini")
    table = run_ablation_suite(cfg.train, _model_config(cfg, train_set), train_set, test_set,
                               seeds=cfg.ablate.seeds, out_dir=out)
    for row in table.rows:
        print(f"{row.method:<9} {100 * row.accuracy:6.2f}%")
    return 0


def asfr_report(model: SnnModel, data: Dataset, path) -> list[float]:
    """Per-stage ASFR of ``model`` over ``data`` written as a one-row CSV."""
    result = evaluate(model, data)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"stage{s + 1}" for s in range(model.num_stages)])
        writer.writerow([repr(v) for v in result.asfr])
    return result.asfr


def cmd_asfr_report(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    _, test_set = _datasets(cfg)
    model = _load_model(args.checkpoint)
    dump_config(cfg, out / "config.ini")
    values = asfr_report(model, test_set, out / "asfr.csv")
    print(" ".join(f"stage{s + 1}={v:.4f}" for s, v in enumerate(values)))
    return 0


VERBS = {
    "gen-data": cmd_gen_data,
    "convert-events": cmd_convert_events,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "asfr-report": cmd_asfr_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def configured(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="sectioned key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory")
        return p

    configured("gen-data", "generate the synthetic dataset")
    configured("train", "train one model")
    configured("ablate", "Baseline / +TR / +FH / TRR over the configured seeds")
    for name, help_ in (("eval", "evaluate a checkpoint"), ("asfr-report", "per-stage ASFR of a checkpoint")):
        configured(name, help_).add_argument("--checkpoint", required=True)
    conv = sub.add_parser("convert-events", help="convert events between binary, CSV and frame (.npy) form")
    conv.add_argument("input")
    conv.add_argument("output")
    conv.add_argument("--T", type=int, default=5, help="frames for .npy output")
    conv.add_argument("--policy", choices=("fixed_count", "fixed_duration"), default="fixed_count")
    conv.add_argument("--downsample", type=int, default=1)
    conv.add_argument("--out", help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return VERBS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrrError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error (I/O): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
