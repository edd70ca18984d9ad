"""eatkit command line: train, eval, verify, inspect, bench.

Exit codes: 0 success, 1 failed verification, 2 config or usage error,
3 data or checkpoint error, 4 numeric failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import AugmentConfig, DataError, DecodeError, scan_dataset, synth_dataset
from .data.synthetic import from_source
from .model import GLI, ConfigError, EATFormer, ModelConfig, global_channels, gli_param_count
from .tensor import NonFiniteError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("eatkit")

_TRAIN_KEYS = ("epochs", "batch_size", "micro_batch", "lr", "beta1", "beta2", "eps", "image_size", "eval_batch_size")


class UsageError(Exception):
    pass


# ------------------------------------------------------------- run config

def default_run_config() -> dict:
    """Every configurable field under its flat dotted key, with defaults."""
    from .train import TrainConfig

    cfg = {f"model.{k}": v for k, v in ModelConfig().to_dict().items()}
    tc = TrainConfig()
    cfg.update({f"train.{k}": getattr(tc, k) for k in _TRAIN_KEYS})
    cfg.update({f"augment.{f.name}": getattr(tc.augment, f.name) for f in fields(AugmentConfig)})
    cfg["augment.zoom_range"] = list(cfg["augment.zoom_range"])
    cfg.update({
        "seed": 0,
        "data.root": None,
        "data.synthetic": False,
        "data.ratios": [0.7, 0.15, 0.15],
        "synthetic.classes": 4,
        "synthetic.per_class": 50,
        "synthetic.hw": 64,
        "eval.split": "test",
    })
    return cfg


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(path: str | None, overrides: dict) -> dict:
    """Defaults, then the JSON file, then flag overrides (``None`` flags are ignored)."""
    cfg = default_run_config()
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        file_cfg = _flatten(raw)
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys in {path}: {unknown}")
        cfg.update(file_cfg)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
    return cfg


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def _merge(overrides: dict, flags: dict) -> dict:
    # dedicated flags win over --set, but only when given
    return {**overrides, **{k: v for k, v in flags.items() if v is not None}}


def model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict({k[6:]: v for k, v in cfg.items() if k.startswith("model.")})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad model config value: {exc}") from None


def train_config(cfg: dict):
    from .train import TrainConfig

    aug = {k[8:]: v for k, v in cfg.items() if k.startswith("augment.")}
    aug["zoom_range"] = tuple(aug["zoom_range"])
    try:
        tc = TrainConfig(**{k: cfg[f"train.{k}"] for k in _TRAIN_KEYS}, seed=int(cfg["seed"]),
                         augment=AugmentConfig(**aug))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config value: {exc}") from None
    if tc.epochs < 0:
        raise ConfigError(f"train.epochs must be >= 0, got {tc.epochs}")
    if tc.batch_size < 1 or (tc.micro_batch is not None and tc.micro_batch < 1):
        raise ConfigError("train.batch_size and train.micro_batch must be >= 1")
    if not tc.lr > 0:
        raise ConfigError(f"train.lr must be positive, got {tc.lr}")
    if tc.image_size < 32 or tc.image_size % 32:
        raise ConfigError(f"train.image_size must be a positive multiple of 32, got {tc.image_size}")
    return tc


def load_dataset(cfg: dict):
    ratios = cfg["data.ratios"]
    seed = int(cfg["seed"])
    try:
        if cfg["data.synthetic"]:
            return synth_dataset(int(cfg["synthetic.classes"]), int(cfg["synthetic.per_class"]),
                                 int(cfg["synthetic.hw"]), seed, ratios)
        return scan_dataset(cfg["data.root"], ratios, seed)
    except ValueError as exc:
        if isinstance(exc, (DataError, DecodeError)):
            raise
        raise ConfigError(str(exc)) from None


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# --------------------------------------------------------------- commands

def cmd_train(args) -> int:
    from .train import evaluate, train

    flags = {
        "train.epochs": args.epochs,
        "seed": args.seed,
        "train.batch_size": args.batch_size,
        "train.lr": args.lr,
        "train.image_size": args.image_size,
    }
    cfg = load_run_config(args.config, _merge(_overrides(args), flags))
    # a data flag replaces whatever source the config file named
    if args.data:
        cfg["data.root"], cfg["data.synthetic"] = args.data, False
    elif args.synthetic:
        cfg["data.root"], cfg["data.synthetic"] = None, True
    if cfg["data.root"] is None and not cfg["data.synthetic"]:
        raise UsageError("one of --data DIR or --synthetic is required")
    mcfg, tcfg = model_config(cfg), train_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1) + "\n")

    dataset = load_dataset(cfg)
    if mcfg.num_classes != dataset.num_classes:
        raise ConfigError(f"model.num_classes = {mcfg.num_classes} but the dataset has {dataset.num_classes} classes")

    def progress(rec):
        if not args.json:
            val = f"  val acc {rec['val']['accuracy']:.4f}" if rec["val"] else ""
            print(f"epoch {rec['epoch']:3d}  loss {rec['train_loss']:.4f}  train acc {rec['train_accuracy']:.4f}{val}",
                  flush=True)

    result = train(mcfg, dataset, tcfg, out_dir=out, on_epoch=progress)
    split = cfg["eval.split"]
    rep = evaluate(result.best, dataset, split) if dataset.indices(split) else None
    summary = {
        "best_epoch": result.best.epoch,
        "epochs": len(result.log),
        "out": str(out),
        "report": rep.to_dict() if rep else None,
    }
    (out / "report.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    if args.json:
        _emit(summary)
    elif rep is not None:
        print(f"\nbest checkpoint: epoch {result.best.epoch}; {split} split:")
        print(rep.to_text())
    return EXIT_OK


def _dataset_for_checkpoint(ckpt, args):
    data = ckpt.meta.get("data", {})
    ratios = data.get("ratios", [0.7, 0.15, 0.15])
    seed = data.get("seed", 0)
    if args.data:
        return scan_dataset(args.data, ratios, seed)
    source = data.get("source") or {}
    if args.synthetic or source.get("kind") == "synthetic":
        if source.get("kind") != "synthetic":
            raise UsageError("checkpoint was not trained on synthetic data; pass --data DIR")
        return from_source(source, ratios, seed)
    if data.get("root"):
        return scan_dataset(data["root"], ratios, seed)
    raise UsageError("checkpoint records no dataset; pass --data DIR")


def cmd_eval(args) -> int:
    from .train import evaluate, load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    dataset = _dataset_for_checkpoint(ckpt, args)
    if ckpt.config.num_classes != dataset.num_classes:
        raise DataError(f"checkpoint predicts {ckpt.config.num_classes} classes, dataset has {dataset.num_classes}")
    if not dataset.indices(args.split):
        raise DataError(f"split {args.split!r} is empty")
    rep = evaluate(ckpt, dataset, args.split)
    if args.json:
        _emit(rep.to_dict())
    else:
        print(f"{args.checkpoint} (epoch {ckpt.epoch}), split {args.split}")
        print(rep.to_text())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .train import verify

    cfg = load_run_config(args.config, _overrides(args))
    ledger = verify(model_config(cfg), seed=args.seed, filter=args.filter)
    if not ledger.checks:
        raise UsageError(f"no checks match --filter {args.filter!r}")
    if args.json:
        _emit(ledger.to_dict())
    else:
        print(ledger.to_text())
    return EXIT_OK if ledger.passed else EXIT_FAILED


def inspect_model(mcfg: ModelConfig, size: int) -> dict:
    model = EATFormer(mcfg, 0)
    shapes = model.stage_shapes(size, size)
    modules = {"stem": model.backbone.stem.num_parameters()}
    gli_rows = []
    for i, dim in enumerate(mcfg.stage_dims):
        stage = getattr(model.backbone, f"stage{i + 1}")
        modules[f"stage{i + 1}"] = stage.num_parameters()
        heads = mcfg.stage_heads[i]
        cg = global_channels(dim, mcfg.split_ratio, heads)
        gli = GLI(dim, heads, mcfg.split_ratio, mcfg.local_kernel, np.random.default_rng(0),
                  md_msa=mcfg.md_msa_enabled)
        gli_rows.append({"stage": i + 1, "C": dim, "C_g": cg, "k": mcfg.local_kernel,
                         "formula": gli_param_count(dim, cg, mcfg.local_kernel), "census": gli.num_parameters()})
    modules["head"] = model.head.num_parameters()
    return {
        "input": [mcfg.in_channels, size, size],
        "stages": [{"stage": i + 1, "shape": list(s[1:]), "stride": size // s[2]} for i, s in enumerate(shapes)],
        "parameters": modules,
        "total_parameters": model.num_parameters(),
        "gli_params": gli_rows,
    }


def cmd_inspect(args) -> int:
    cfg = load_run_config(args.config, _merge(_overrides(args), {"model.split_ratio": args.split_ratio}))
    mcfg = model_config(cfg)
    size = args.input_size
    if size % mcfg.reduction:
        raise ConfigError(f"input size {size} must be divisible by the total stride {mcfg.reduction}")
    info = inspect_model(mcfg, size)
    if args.json:
        _emit(info)
        return EXIT_OK
    print(f"input {mcfg.in_channels}x{size}x{size}")
    print(f"{'stage':<7}{'channels':>9}{'H x W':>12}{'stride':>8}")
    for s in info["stages"]:
        c, h, w = s["shape"]
        print(f"{s['stage']:<7}{c:>9}{f'{h} x {w}':>12}{s['stride']:>8}")
    print("\nparameters")
    for name, n in info["parameters"].items():
        print(f"  {name:<8}{n:>12,}")
    print(f"  {'total':<8}{info['total_parameters']:>12,}")
    print("\nGLI parameters: closed form vs module census")
    print(f"{'stage':<7}{'C':>6}{'C_g':>6}{'k':>4}{'formula':>10}{'census':>10}")
    for r in info["gli_params"]:
        print(f"{r['stage']:<7}{r['C']:>6}{r['C_g']:>6}{r['k']:>4}{r['formula']:>10}{r['census']:>10}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .train import load_checkpoint, throughput_bench

    ckpt = load_checkpoint(args.checkpoint)
    size = args.image_size or ckpt.meta.get("train", {}).get("image_size", 64)
    res = throughput_bench(ckpt.build_model(), batch_size=args.batch, iterations=args.iters, image_size=size)
    if args.json:
        _emit(res)
    else:
        print(f"batch {res['batch_size']} at {size}x{size}, {res['iterations']} iterations: "
              f"{res['images_per_sec_mean']:.2f} ± {res['images_per_sec_std']:.2f} images/sec")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eatkit", description="EATFormer training and verification toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.set_defaults(subparser=p)
        if config:
            p.add_argument("--config", help="JSON run config with flat dotted keys")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--json", action="store_true", help="print key-sorted JSON only")

    p = sub.add_parser("train", help="train a model")
    common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset root laid out as root/<class>/*.ppm")
    src.add_argument("--synthetic", action="store_true", help="use the built-in synthetic dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--image-size", type=int)
    p.add_argument("--out", default="run", help="run directory (default: run)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset root; defaults to the one recorded in the checkpoint")
    src.add_argument("--synthetic", action="store_true", help="rebuild the synthetic dataset the checkpoint used")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the self-check ledger")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--filter", help="only checks whose name contains this string")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", help="stage shapes and parameter counts")
    common(p)
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--split-ratio", type=float, help="GLI split ratio p")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="inference throughput")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--image-size", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .train import CheckpointError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        args.subparser.print_usage(sys.stderr)
        print(f"eatkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"eatkit {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DecodeError, CheckpointError) as exc:
        print(f"eatkit {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as exc:
        print(f"eatkit {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
