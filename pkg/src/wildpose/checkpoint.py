"""Binary checkpoint format.

    "PWT1" | u16 version | u32 header length | header JSON
    | float64 parameter blobs (header order)
    | float64 optimizer blobs (accum_grad then accum_update per named entry)
    | u32 length | generator-state JSON
    | u32 CRC32 of everything before it

All integers and floats are little-endian.
"""
from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .errors import ChecksumError, ConfigMismatch, FormatError, IoError
from .network import ModelConfig, ModelParams, is_pretrained_name, parameter_shapes

MAGIC = b"PWT1"
FORMAT_VERSION = 1


class Stage(str, enum.Enum):
    PRETRAIN_2D = "Pretrain2D"
    FULL = "Full"


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    optimizer: gc.AdadeltaState
    stage: Stage
    iteration: int = 0
    generator_state: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def expected_names(self) -> list[str]:
        names = list(parameter_shapes(self.model_config))
        if self.stage == Stage.PRETRAIN_2D:
            names = [n for n in names if is_pretrained_name(n)]
        return names


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def to_bytes(ckpt: Checkpoint) -> bytes:
    names = ckpt.params.names()
    opt_names = [n for n in names if n in ckpt.optimizer.accum_grad]
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "stage": Stage(ckpt.stage).value,
        "iteration": int(ckpt.iteration),
        "params": [
            {"name": n, "shape": list(ckpt.params[n].shape), "pretrained": n in ckpt.params.pretrained}
            for n in names
        ],
        "optimizer": {"rho": ckpt.optimizer.rho, "eps": ckpt.optimizer.eps, "names": opt_names},
    }
    head = _dumps(header)
    parts = [MAGIC, struct.pack("<HI", ckpt.version, len(head)), head]
    for n in names:
        parts.append(np.ascontiguousarray(ckpt.params[n].data, dtype="<f8").tobytes())
    for n in opt_names:
        parts.append(np.ascontiguousarray(ckpt.optimizer.accum_grad[n], dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(ckpt.optimizer.accum_update[n], dtype="<f8").tobytes())
    gen = _dumps(ckpt.generator_state)
    parts.append(struct.pack("<I", len(gen)) + gen)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    data = to_bytes(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if len(shape) else 1
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def from_bytes(buf: bytes, expected_config: ModelConfig | None = None) -> Checkpoint:
    if len(buf) < len(MAGIC) + 10 or buf[: len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", buf[-4:])
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    version, hlen = struct.unpack("<HI", r.take(6))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(hlen))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError("checkpoint header is not JSON") from e
    try:
        config = ModelConfig.from_dict(header["model_config"])
        stage = Stage(header["stage"])
        entries = header["params"]
        opt = header["optimizer"]
        tensors = {e["name"]: gc.parameter(r.array(tuple(e["shape"]))) for e in entries}
        pretrained = frozenset(e["name"] for e in entries if e["pretrained"])
        state = gc.AdadeltaState(float(opt["rho"]), float(opt["eps"]))
        for n in opt["names"]:
            shape = tensors[n].shape
            state.accum_grad[n] = r.array(shape)
            state.accum_update[n] = r.array(shape)
        (glen,) = struct.unpack("<I", r.take(4))
        gen_state = json.loads(r.take(glen))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"malformed checkpoint: {e}") from e
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes in checkpoint")
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumError("checkpoint CRC32 mismatch")
    ckpt = Checkpoint(config, ModelParams(tensors, pretrained), state, stage, int(header["iteration"]),
                      gen_state, version)
    validate_checkpoint(ckpt, expected_config)
    return ckpt


def validate_checkpoint(ckpt: Checkpoint, expected_config: ModelConfig | None = None) -> None:
    if expected_config is not None and expected_config != ckpt.model_config:
        raise ConfigMismatch("checkpoint was written for a different model config")
    shapes = parameter_shapes(ckpt.model_config)
    names = ckpt.params.names()
    if sorted(names) != sorted(ckpt.expected_names()):
        raise FormatError("checkpoint parameter set does not match its config and stage")
    for n in names:
        if tuple(ckpt.params[n].shape) != shapes[n]:
            raise FormatError(f"parameter {n} has the wrong shape")


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    return from_bytes(buf, expected_config)
