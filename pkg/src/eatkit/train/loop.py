"""Training and evaluation."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..data import AugmentConfig, DatasetIndex, ImageSource, channel_stats, make_batches
from ..data.batches import ChannelStats
from ..metrics import ConfusionMatrix, Report, report
from ..model import EATFormer, ModelConfig
from ..tensor import NonFiniteError, Tape, Tensor, ops
from .checkpoint import Checkpoint, save_checkpoint
from .optim import Adam

log = logging.getLogger(__name__)

INIT_STREAM = 3


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    micro_batch: int | None = None
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    image_size: int = 64
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval_batch_size: int = 64

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["zoom_range"] = list(d["augment"]["zoom_range"])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        aug = data.pop("augment", None)
        cfg = cls(**data)
        if aug is not None:
            aug = dict(aug)
            aug["zoom_range"] = tuple(aug["zoom_range"])
            cfg.augment = AugmentConfig(**aug)
        return cfg


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    log: list[dict]


def init_model(config: ModelConfig, seed: int) -> EATFormer:
    return EATFormer(config, np.random.default_rng([seed, INIT_STREAM]))


def predict(model: EATFormer, source: ImageSource, split: str, stats: ChannelStats,
            batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """(true labels, argmax predictions) over a split, no augmentation.

    ``np.argmax`` returns the first maximum, so ties go to the lowest class.
    """
    trues, preds = [], []
    for batch in make_batches(source, split, batch_size, stats, shuffle=False, augmented=False):
        logits = model(Tensor(batch.images)).data
        trues.append(batch.labels)
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(trues), np.concatenate(preds)


def evaluate_model(model: EATFormer, source: ImageSource, split: str, stats: ChannelStats,
                   batch_size: int = 64) -> Report:
    index = source.index
    if model.config.num_classes != index.num_classes:
        raise ValueError(f"model predicts {model.config.num_classes} classes, dataset has {index.num_classes}")
    t, p = predict(model, source, split, stats, batch_size)
    cm = ConfusionMatrix(class_names=index.classes).update(t, p)
    rep = report(cm)
    rep.extra["split"] = split
    return rep


def evaluate(checkpoint: Checkpoint, dataset: DatasetIndex, split: str = "test", image_size: int | None = None,
             batch_size: int = 64) -> Report:
    """Metrics report for ``checkpoint`` on one split; a pure function of its inputs."""
    if checkpoint.config.num_classes != dataset.num_classes:
        raise ValueError(
            f"checkpoint predicts {checkpoint.config.num_classes} classes, dataset has {dataset.num_classes}"
        )
    size = image_size or checkpoint.meta.get("train", {}).get("image_size", 64)
    model = checkpoint.build_model()
    return evaluate_model(model, ImageSource(dataset, (size, size)), split, checkpoint.stats, batch_size)


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def train(
    model_config: ModelConfig,
    dataset: DatasetIndex,
    config: TrainConfig = TrainConfig(),
    out_dir: str | os.PathLike | None = None,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam + cross-entropy training with best-validation retention.

    Everything random is keyed on ``config.seed``: weight init, per-epoch
    shuffles and per-sample augmentation. Resuming from a checkpoint saved
    at epoch ``e`` continues exactly as the unbroken run would have. When
    ``out_dir`` is given, ``log.jsonl``, ``best.eatkpt`` and ``last.eatkpt``
    are written there as training proceeds.
    """
    if model_config.num_classes != dataset.num_classes:
        raise ValueError(f"config has {model_config.num_classes} classes, dataset has {dataset.num_classes}")
    size = config.image_size
    source = ImageSource(dataset, (size, size))
    meta = {"train": config.to_dict(), "data": {"source": dataset.source, "root": dataset.root,
                                                 "ratios": list(dataset.ratios), "seed": dataset.seed,
                                                 "classes": list(dataset.classes)}}

    if resume is not None:
        model = resume.build_model(model_config)
        stats = resume.stats
        if resume.optim is None:
            raise ValueError("checkpoint has no optimizer state; cannot resume")
        optim = resume.optim.copy()
        start = resume.epoch
        best_acc = resume.meta.get("best_val_accuracy")
        best = resume
    else:
        model = init_model(model_config, config.seed)
        stats = channel_stats(source, "train")
        optim = Adam(config.lr, config.beta1, config.beta2, config.eps)
        start = 0
        best_acc = None
        best = None

    params = model.parameters()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is None:
            (out / "log.jsonl").write_text("")

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint.capture(model, stats, epoch, optim, {**meta, "best_val_accuracy": best_acc})

    has_val = bool(dataset.indices("val"))
    records: list[dict] = []
    last = snapshot(start)
    if best is None:
        best = last
    micro = config.micro_batch or config.batch_size
    n_train = len(dataset.indices("train"))

    for epoch in range(start, config.epochs):
        total_loss = 0.0
        correct = 0
        for b, batch in enumerate(make_batches(source, "train", config.batch_size, stats, seed=config.seed,
                                               epoch=epoch, augment_config=config.augment)):
            model.zero_grad()
            bsz = len(batch)
            for s in range(0, bsz, micro):
                images = batch.images[s : s + micro]
                labels = batch.labels[s : s + micro]
                with Tape() as tape:
                    logits = model(Tensor(images))
                    loss = ops.cross_entropy(logits, labels)
                    # weight so summed micro-batch gradients equal the full-batch mean
                    scaled = loss * (len(labels) / bsz)
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteError(f"non-finite loss at epoch {epoch + 1}, batch {b}")
                tape.backward(scaled)
                total_loss += value * len(labels)
                correct += int((np.argmax(logits.data, axis=1) == labels).sum())
            optim.step(params)

        record = {
            "epoch": epoch + 1,
            "train_accuracy": correct / n_train,
            "train_loss": total_loss / n_train,
            "val": evaluate_model(model, source, "val", stats, config.eval_batch_size).to_dict() if has_val else None,
        }
        val_acc = record["val"]["accuracy"] if has_val else None
        improved = has_val and (best_acc is None or val_acc > best_acc)
        if improved:
            best_acc = val_acc
        last = snapshot(epoch + 1)
        if improved or not has_val:
            best = last
        records.append(record)
        log.info("epoch %d: loss %.4f, train acc %.4f%s", epoch + 1, record["train_loss"],
                 record["train_accuracy"], f", val acc {val_acc:.4f}" if has_val else "")
        if out is not None:
            with open(out / "log.jsonl", "a") as fh:
                fh.write(_dump(record) + "\n")
            save_checkpoint(last, out / "last.eatkpt")
            if best is last:
                save_checkpoint(best, out / "best.eatkpt")
        if on_epoch is not None:
            on_epoch(record)

    if out is not None and not (out / "best.eatkpt").exists():
        save_checkpoint(best, out / "best.eatkpt")
    if out is not None and not (out / "last.eatkpt").exists():
        save_checkpoint(last, out / "last.eatkpt")
    return TrainResult(best=best, last=last, log=records)
