"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"BOOTLM1\\0"
    u32 n, then n bytes of UTF-8 JSON (model config, mode, step, vocabulary, ...)
    u32 count, then per array: u16 name length, name, u8 ndim, ndim x u32 dims
    raw float32 data of every array, in name-table order

Array names carry a ``student.`` or ``teacher.`` prefix. A ``student`` export
keeps only the student's encoder, decoder and MLM head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointFormatError
from .model import BootModel, ModelConfig

MAGIC = b"BOOTLM1\0"
FORMAT_VERSION = 1
MODES = ("full", "student")


@dataclass
class Checkpoint:
    config: ModelConfig
    mode: str
    student: BootModel
    teacher: BootModel | None
    step: int
    vocab: list[str] | None
    meta: dict


def _arrays(student: BootModel, teacher: BootModel | None, mode: str):
    for name, t in student.state_dict().items():
        if mode == "student" and name.startswith("latent_head."):
            continue
        yield f"student.{name}", t
    if mode == "full" and teacher is not None:
        for name, t in teacher.state_dict().items():
            yield f"teacher.{name}", t


def save_checkpoint(path, student: BootModel, teacher: BootModel | None = None, mode: str = "full",
                    step: int = 0, vocab=None, train_config=None) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    meta = {
        "format_version": FORMAT_VERSION,
        "mode": mode,
        "step": int(step),
        "model": student.config.to_dict(),
        "has_teacher": mode == "full" and teacher is not None,
        "has_latent_head": mode == "full" and student.latent_head is not None,
        "vocab": list(vocab) if vocab is not None else None,
    }
    if train_config is not None:
        meta["train"] = train_config.to_dict()
    header = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")

    arrays = [(name, t.detach().cpu().numpy().astype("<f4")) for name, t in _arrays(student, teacher, mode)]
    parts = [MAGIC, struct.pack("<I", len(header)), header, struct.pack("<I", len(arrays))]
    for name, a in arrays:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
    parts.extend(a.tobytes() for _, a in arrays)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_raw(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header metadata and the named float32 arrays, without building models."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a bootlm checkpoint (bad magic)")
    (n,) = reader.unpack("<I")
    try:
        meta = json.loads(reader.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt config document") from exc
    (count,) = reader.unpack("<I")
    table = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        table.append((name, reader.unpack(f"<{ndim}I")))
    arrays = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
    if reader.pos != len(reader.data):
        raise CheckpointFormatError(f"{path}: trailing bytes after array data")
    return meta, arrays


def _load_into(model: BootModel, arrays: dict, prefix: str) -> None:
    state = {}
    for name, ref in model.state_dict().items():
        key = prefix + name
        if key not in arrays:
            raise CheckpointFormatError(f"missing array {key!r}")
        a = arrays[key]
        if tuple(a.shape) != tuple(ref.shape):
            raise CheckpointFormatError(f"array {key!r} has shape {a.shape}, expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(a.copy()).to(ref.dtype)
    model.load_state_dict(state)


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = read_raw(path)
    config = ModelConfig.from_dict(meta["model"])
    student = BootModel(config, latent_head=bool(meta.get("has_latent_head")))
    _load_into(student, arrays, "student.")
    teacher = None
    if meta.get("has_teacher"):
        teacher = BootModel(config, latent_head=False)
        _load_into(teacher, arrays, "teacher.")
        teacher.requires_grad_(False)
    return Checkpoint(config, meta["mode"], student, teacher, meta.get("step", 0),
                      meta.get("vocab"), meta)
