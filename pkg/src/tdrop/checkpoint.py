"""Binary checkpoints: parameters, optimizer state, rng state, configs.

Layout (all integers little-endian): magic "TDCK", u32 format version, a
length-prefixed UTF-8 JSON metadata block (step, rng state, optimizer
hyperparameters, config snapshot), u32 record count, then one record per
named array: u32 name length + name, u32 ndim + u32 dims, u32 byte length +
float32 payload. Save goes through a temp file and an atomic rename, and a
round trip is bit-identical.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .config import AlterationConfig, ModelConfig, TrainConfig, _dataclass_from_dict
from .errors import DataError

CHECKPOINT_MAGIC = b"TDCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    step: int
    rng_state: int
    model_config: ModelConfig
    train_config: TrainConfig
    alteration_config: AlterationConfig
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    opt_step: int
    opt_hparams: dict[str, float]
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    raw = data.tobytes()
    name_b = name.encode("utf-8")
    parts = [struct.pack("<I", len(name_b)), name_b,
             struct.pack("<I", data.ndim)]
    parts += [struct.pack("<I", d) for d in data.shape]
    parts += [struct.pack("<I", len(raw)), raw]
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    meta = {
        "step": int(ckpt.step),
        "rng_state": int(ckpt.rng_state),
        "opt_step": int(ckpt.opt_step),
        "opt_hparams": {k: float(v) for k, v in sorted(ckpt.opt_hparams.items())},
        "configs": {
            "model": dataclasses.asdict(ckpt.model_config),
            "train": dataclasses.asdict(ckpt.train_config),
            "alteration": dataclasses.asdict(ckpt.alteration_config),
        },
    }
    meta_b = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    records: dict[str, np.ndarray] = {}
    for name, arr in ckpt.params.items():
        records[f"param.{name}"] = arr
    for name, arr in ckpt.opt_m.items():
        records[f"optim.m.{name}"] = arr
    for name, arr in ckpt.opt_v.items():
        records[f"optim.v.{name}"] = arr
    if ckpt.norm_mean is not None:
        records["norm.mean"] = ckpt.norm_mean
    if ckpt.norm_std is not None:
        records["norm.std"] = ckpt.norm_std

    payload = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
               struct.pack("<I", len(meta_b)), meta_b,
               struct.pack("<I", len(records))]
    for name in sorted(records):
        payload.append(_pack_record(name, records[name]))

    tmp = path + f".tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(payload))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(blob, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt metadata block: {exc}") from exc

    records: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        nbytes = r.u32()
        expected = int(np.prod(shape)) * 4 if shape else 4
        if nbytes != expected:
            raise DataError(f"{path}: record '{name}' has {nbytes} bytes, "
                            f"expected {expected}")
        arr = np.frombuffer(r.take(nbytes), dtype="<f4").reshape(shape)
        records[name] = arr.astype(np.float32)
    if r.pos != len(blob):
        raise DataError(f"{path}: {len(blob) - r.pos} trailing bytes")

    try:
        cfgs = meta["configs"]
        model_cfg = _dataclass_from_dict(ModelConfig, cfgs["model"], "model").validate()
        train_cfg = _dataclass_from_dict(TrainConfig, cfgs["train"], "train").validate()
        alter_cfg = _dataclass_from_dict(
            AlterationConfig, cfgs["alteration"], "alteration").validate()
        step = int(meta["step"])
        rng_state = int(meta["rng_state"])
        opt_step = int(meta["opt_step"])
        opt_hparams = {k: float(v) for k, v in meta["opt_hparams"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid metadata: {exc}") from exc

    params = {k[len("param."):]: v for k, v in records.items() if k.startswith("param.")}
    opt_m = {k[len("optim.m."):]: v for k, v in records.items() if k.startswith("optim.m.")}
    opt_v = {k[len("optim.v."):]: v for k, v in records.items() if k.startswith("optim.v.")}
    return Checkpoint(
        step=step, rng_state=rng_state,
        model_config=model_cfg, train_config=train_cfg, alteration_config=alter_cfg,
        params=params, opt_m=opt_m, opt_v=opt_v,
        opt_step=opt_step, opt_hparams=opt_hparams,
        norm_mean=records.get("norm.mean"), norm_std=records.get("norm.std"))
