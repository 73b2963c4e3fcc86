"""Command line front door.

Every subcommand prints the resolved configuration as a JSON document before
doing any work, writes file outputs atomically, and maps failures onto exit
codes: 0 success, 1 validation error (bad flags, bad files, bad shapes),
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigError, ImageFormatError, PrecisionError, ShapeError,
                     WeightFormatError)
from .imageio import (atomic_write_bytes, read_image, read_mask, to_model_input,
                      write_pgm, write_ppm)
from .metrics import Confusion, confusion, diff_map, diff_map_to_rgb, report
from .model import ChangeModel, ModelConfig
from .profiling import count_params, estimate_flops
from .regions import DEFAULT_REGION_THRESHOLD, dataset_summary
from .serialization import load_weights, save_weights
from .synthetic import SyntheticSpec, generate
from .tensor import Tensor, no_grad
from .training import TrainConfig, ablation_run, train

VALIDATION_ERRORS = (ConfigError, ShapeError, PrecisionError, ImageFormatError,
                     WeightFormatError, FileNotFoundError, NotADirectoryError,
                     IsADirectoryError, PermissionError, ValueError, KeyError)

_MASK_SUFFIXES = (".pgm", ".ppm", ".png")


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; bad flags are validation
    errors here, so raise instead and let main() map them to exit 1."""

    def error(self, message):
        raise ConfigError(message)


def _print_resolved(subcommand: str, **sections) -> None:
    doc = {"subcommand": subcommand, **sections}
    print(json.dumps(doc, indent=2, sort_keys=True))


def _write_json(path: str | Path, doc) -> None:
    atomic_write_bytes(Path(path), (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


def _load_model_config(path: str | None) -> ModelConfig:
    if path is None:
        return ModelConfig()
    return ModelConfig.from_json(Path(path).read_text())


def _mask_files(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in _MASK_SUFFIXES)


def _read_mask_named(path: Path) -> np.ndarray:
    try:
        return read_mask(path)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


# -- subcommands ---------------------------------------------------------------


def _cmd_infer(args) -> int:
    config = _load_model_config(args.config)
    _print_resolved("infer", model=config.to_dict(),
                    weights=args.weights, threshold=config.decoder.threshold)
    t1 = to_model_input(read_image(args.t1))
    t2 = to_model_input(read_image(args.t2))
    if t1.shape != t2.shape:
        raise ShapeError(
            f"image dimensions differ: {t1.shape[1:]} vs {t2.shape[1:]}")
    config.validate(t1.shape[1:])
    model = ChangeModel(config, seed=args.seed)
    if args.weights is not None:
        load_weights(args.weights, model)
    with no_grad():
        out = model(Tensor(t1[None]), Tensor(t2[None]))
    binary = out.binary[0, 0]
    write_pgm(args.out, binary * 255)
    if args.prob_out:
        probs = out.probabilities.data[0, 0]
        write_pgm(args.prob_out, np.round(probs * 255.0).astype(np.uint8))
    if args.diff_out:
        if not args.gt:
            raise ConfigError("--diff-out requires --gt")
        gt = read_mask(args.gt)
        if gt.shape != binary.shape:
            raise ShapeError(f"gt size {gt.shape} does not match output {binary.shape}")
        write_ppm(args.diff_out, diff_map_to_rgb(diff_map(binary, gt)))
    return 0


def _cmd_train_toy(args) -> int:
    config = _load_model_config(args.config)
    spec = SyntheticSpec(seed=args.seed, image_size=(args.image_size, args.image_size),
                         n_samples=args.n_samples)
    train_config = TrainConfig(epochs=args.epochs, seed=args.seed,
                               n_val=args.n_val, early_stop_f1=args.early_stop_f1)
    _print_resolved("train-toy", model=config.to_dict(), synthetic=spec.to_dict(),
                    train={"epochs": train_config.epochs,
                           "batch_size": train_config.batch_size,
                           "learning_rate": train_config.learning_rate,
                           "weight_decay": train_config.weight_decay,
                           "n_val": train_config.n_val,
                           "early_stop_f1": train_config.early_stop_f1,
                           "seed": train_config.seed})
    dataset = generate(spec)
    x, y = dataset.to_arrays()
    config.validate(x.shape[3:])
    model = ChangeModel(config, seed=args.seed)
    history = train(model, x, y, train_config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights(model, out_dir / "weights.fkcd")
    _write_json(out_dir / "history.json", {
        "dataset_sha256": dataset.sha256(),
        "model": config.to_dict(),
        "history": history,
    })
    print(f"final val_f1 {history[-1]['val_f1']:.4f} "
          f"after {len(history)} epochs -> {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    _print_resolved("eval", pred=args.pred, gt=args.gt, report=args.report)
    pred_files = _mask_files(args.pred)
    gt_files = _mask_files(args.gt)
    if not pred_files:
        raise ValueError(f"no mask files in {args.pred}")
    pred_names = [p.name for p in pred_files]
    gt_names = [p.name for p in gt_files]
    for name in pred_names:
        if name not in gt_names:
            raise FileNotFoundError(f"missing ground truth for {name}")
    for name in gt_names:
        if name not in pred_names:
            raise FileNotFoundError(f"missing prediction for {name}")
    rows = []
    total = Confusion(0, 0, 0, 0)
    gt_dir = Path(args.gt)
    for path in pred_files:
        pred = _read_mask_named(path)
        gt = _read_mask_named(gt_dir / path.name)
        if pred.shape != gt.shape:
            raise ShapeError(f"{path.name}: prediction {pred.shape} vs "
                             f"ground truth {gt.shape}")
        c = confusion(pred, gt)
        total = total + c
        rows.append({"file": path.name, **report(c)})
    doc = {"files": rows, **report(total)}
    _write_json(args.report, doc)
    print(f"micro f1 {doc['f1']:.4f} over {len(rows)} files -> {args.report}")
    return 0


def _cmd_analyze(args) -> int:
    _print_resolved("analyze", masks=args.masks, threshold=args.threshold,
                    report=args.report)
    files = _mask_files(args.masks)
    if not files:
        raise ValueError(f"no mask files in {args.masks}")
    pairs = [(p.name, _read_mask_named(p)) for p in files]
    doc = dataset_summary(pairs, threshold=args.threshold)
    _write_json(args.report, doc)
    print(f"{len(files)} masks analyzed -> {args.report}")
    return 0


def _cmd_params(args) -> int:
    config = _load_model_config(args.config)
    _print_resolved("params", model=config.to_dict(), input=args.input)
    params = count_params(config)
    flops = estimate_flops(config, args.input)
    doc = {
        "params": {"total": params.total, "by_module": params.by_module},
        "flops": {"input_size": args.input, "total": flops.total,
                  "by_category": flops.by_category,
                  "by_module": flops.by_module},
    }
    print(json.dumps(doc, indent=2))
    if args.report:
        _write_json(args.report, doc)
    return 0


def _cmd_ablate(args) -> int:
    doc = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if not isinstance(doc, dict):
        raise ConfigError("ablation spec must be a JSON object")
    unknown = set(doc) - {"model", "synthetic", "train"}
    if unknown:
        raise ConfigError(f"unknown ablation spec keys: {sorted(unknown)}")
    config = ModelConfig.from_dict(doc.get("model", {}))
    syn_doc = {"seed": args.seed, "image_size": [32, 32], "n_samples": 24,
               "size_range": [6, 12], **doc.get("synthetic", {})}
    spec = SyntheticSpec.from_dict(syn_doc)
    train_doc = {"epochs": 2, "n_val": 8, "seed": args.seed,
                 **doc.get("train", {})}
    fields = {"epochs", "batch_size", "learning_rate", "weight_decay", "betas",
              "seed", "n_val", "early_stop_f1", "threshold"}
    bad = set(train_doc) - fields
    if bad:
        raise ConfigError(f"unknown train keys: {sorted(bad)}")
    if "betas" in train_doc:
        train_doc["betas"] = tuple(train_doc["betas"])
    train_config = TrainConfig(**train_doc)
    train_config.validate()
    _print_resolved("ablate", model=config.to_dict(), synthetic=spec.to_dict(),
                    train=train_doc, report=args.report)
    dataset = generate(spec)
    x, y = dataset.to_arrays()
    config.validate(x.shape[3:])
    rows = ablation_run(x, y, dataset.sha256(), config, train_config,
                        model_seed=args.seed)
    out = {"dataset_sha256": dataset.sha256(), "arms": rows}
    _write_json(args.report, out)
    for row in rows:
        print(f"{row['arm']:<10} params {row['params']:>9} "
              f"val_f1 {row['final_val_f1']:.4f}")
    return 0


# -- wiring --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="changedet",
                     description="Lightweight bitemporal change detection.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("infer", parents=[], description="Run one image pair.")
    p.add_argument("--config", help="model config JSON (default: toy config)")
    p.add_argument("--weights", help="FKCD weight file (default: fresh init)")
    p.add_argument("--t1", required=True, help="first-date image (PGM/PPM/PNG)")
    p.add_argument("--t2", required=True, help="second-date image")
    p.add_argument("--out", required=True, help="binary mask output (PGM)")
    p.add_argument("--prob-out", help="probability map output (PGM)")
    p.add_argument("--gt", help="ground-truth mask, enables --diff-out")
    p.add_argument("--diff-out", help="TP/FP/FN overlay output (PPM), needs --gt")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("train-toy", description="Train on synthetic pairs.")
    p.add_argument("--out-dir", required=True, help="weights + history directory")
    p.add_argument("--config", help="model config JSON (default: toy config)")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--n-samples", type=int, default=250)
    p.add_argument("--n-val", type=int, default=50)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--early-stop-f1", type=float, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("eval", description="Micro-averaged metrics over dirs.")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--report", required=True, help="JSON report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", description="Connected-region dataset summary.")
    p.add_argument("--masks", required=True, help="directory of masks")
    p.add_argument("--threshold", type=int, default=DEFAULT_REGION_THRESHOLD,
                   help="few/many region-count threshold")
    p.add_argument("--report", required=True, help="JSON report path")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("params", description="Parameter and FLOP accounting.")
    p.add_argument("--config", help="model config JSON (default: toy config)")
    p.add_argument("--input", type=int, default=256, help="square input size")
    p.add_argument("--report", help="optional JSON report path")
    p.set_defaults(func=_cmd_params)

    p = sub.add_parser("ablate", description="Train all ablation arms.")
    p.add_argument("--spec", help="JSON with optional model/synthetic/train keys")
    p.add_argument("--report", required=True, help="JSON report path")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
