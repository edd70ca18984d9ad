"""``.eatkpt`` checkpoint files.

Layout::

    b"EATKPT\\n"                  7-byte magic
    uint64 little-endian          length of the JSON header in bytes
    JSON header (UTF-8)           key-sorted; tensor table with byte offsets
    payload                       little-endian float64 tensors

Offsets in the tensor table are relative to the start of the payload.
Model parameters come first in lexicographic name order, followed by the
Adam first moments and then the second moments, each in the same order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.batches import ChannelStats
from ..model import EATFormer, ModelConfig
from .optim import Adam

MAGIC = b"EATKPT\n"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """Unreadable checkpoint or one incompatible with the requested model."""


@dataclass
class Checkpoint:
    config: ModelConfig
    stats: ChannelStats
    epoch: int
    params: dict[str, np.ndarray]
    optim: Adam | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model: EATFormer, stats: ChannelStats, epoch: int, optim: Adam | None = None,
                meta: dict | None = None) -> "Checkpoint":
        params = {name: p.data.copy() for name, p in model.named_parameters()}
        return cls(model.config, stats, epoch, params, optim.copy() if optim else None, dict(meta or {}))

    def build_model(self, config: ModelConfig | None = None) -> EATFormer:
        """Instantiate the stored architecture and load the parameters into it."""
        if config is not None and config.to_dict() != self.config.to_dict():
            raise CheckpointError("model config differs from the one stored in the checkpoint")
        model = EATFormer(self.config, np.random.default_rng(0))
        self.load_into(model)
        return model

    def load_into(self, model: EATFormer) -> None:
        if model.config.to_dict() != self.config.to_dict():
            raise CheckpointError("model config differs from the one stored in the checkpoint")
        named = dict(model.named_parameters())
        missing = sorted(set(named) - set(self.params))
        extra = sorted(set(self.params) - set(named))
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, p in named.items():
            value = self.params[name]
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: stored shape {value.shape}, model expects {p.shape}")
            p.data = value.copy()
            p.zero_grad()


def _header(ckpt: Checkpoint) -> tuple[dict, list[np.ndarray]]:
    names = sorted(ckpt.params)
    groups = [("param", ckpt.params)]
    if ckpt.optim is not None:
        groups += [("adam_m", ckpt.optim.m), ("adam_v", ckpt.optim.v)]
    table, arrays = [], []
    offset = 0
    for group, store in groups:
        for name in (names if group == "param" else sorted(store)):
            arr = np.ascontiguousarray(store[name], dtype=_LE_F64)
            table.append({"group": group, "name": name, "offset": offset, "shape": list(arr.shape)})
            arrays.append(arr)
            offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.config.to_dict(),
        "norm_stats": {"mean": list(ckpt.stats.mean), "std": list(ckpt.stats.std)},
        "epoch": ckpt.epoch,
        "optimizer": ckpt.optim.hyperparams() if ckpt.optim is not None else None,
        "meta": ckpt.meta,
        "payload_bytes": offset,
        "tensors": table,
    }
    return header, arrays


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    header, arrays = _header(ckpt)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(f"{os.fspath(path)}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())
    os.replace(tmp, path)


def read_header(path: str | os.PathLike) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 8)
        if len(head) < len(MAGIC) + 8 or head[: len(MAGIC)] != MAGIC:
            raise CheckpointError(f"{path}: not an .eatkpt checkpoint")
        (size,) = struct.unpack("<Q", head[len(MAGIC):])
        blob = fh.read(size)
    if len(blob) != size:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(blob.decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    return header, len(MAGIC) + 8 + size


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        header, start = read_header(path)
        payload = Path(path).read_bytes()[start:]
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    stores: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_LE_F64, count=count, offset=entry["offset"])
        stores[entry["group"]][entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    opt = header["optimizer"]
    optim = None
    if opt is not None:
        optim = Adam(opt["lr"], opt["beta1"], opt["beta2"], opt["eps"], opt["step"], stores["adam_m"], stores["adam_v"])
    stats = ChannelStats(tuple(header["norm_stats"]["mean"]), tuple(header["norm_stats"]["std"]))
    return Checkpoint(ModelConfig.from_dict(header["model_config"]), stats, header["epoch"], stores["param"],
                      optim, header["meta"])
