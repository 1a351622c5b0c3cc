"""Binary model checkpoints.

Layout (all integers little-endian)::

    magic       8 bytes  b"LSWCKPT\\0"
    version     u32
    header_len  u32, then that many bytes of UTF-8 JSON (config echo, vocab,
                labels, optimizer hyperparameters, training counters)
    n_blocks    u32, then per block:
                  name_len u16, name (UTF-8), ndim u8, dims u64 * ndim,
                  row-major float64 values
    crc32       u32 over every preceding byte

Files are written to a temporary sibling and renamed into place, and a
reader parses and verifies the whole file before building any objects.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .data import LabelIndex
from .encoder import Vocab
from .errors import CheckpointError
from .model import LswModel, ModelConfig

MAGIC = b"LSWCKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    model: LswModel
    labels: LabelIndex
    adam: nk.AdamState | None = None
    training: dict = field(default_factory=dict)


def _encode_blocks(blocks: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def dumps(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    cfg = model.config
    header = {
        "config": {**asdict(cfg), "classifier_input_dim": cfg.classifier_input_dim},
        "seed": model.seed,
        "encoder_frozen": model.encoder.frozen,
        "vocab": {"min_count": model.vocab.min_count, "tokens": list(model.vocab.tokens)},
        "labels": list(ckpt.labels.names),
        "adam": None,
        "training": ckpt.training,
    }
    blocks = dict(model.arrays())
    if ckpt.adam is not None:
        a = ckpt.adam
        header["adam"] = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step}
        for key in sorted(a.moments):
            m, v = a.moments[key]
            blocks[f"adam.m/{key}"] = m
            blocks[f"adam.v/{key}"] = v
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<II", VERSION, len(head)) + head + _encode_blocks(blocks)
    return body + struct.pack("<I", zlib.crc32(body))


def save(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Validate and decode raw checkpoint bytes into (header, blocks)."""
    if len(buf) < len(MAGIC) + 12 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not an LSW checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupted file)")
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    version, head_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(head_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from exc
    (n_blocks,) = r.unpack("<I")
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after parameter blocks")
    return header, blocks


def loads(buf: bytes) -> Checkpoint:
    header, blocks = parse(buf)
    try:
        cfg_dict = dict(header["config"])
        cfg_dict.pop("classifier_input_dim", None)
        config = ModelConfig(**cfg_dict)
        vocab = Vocab(header["vocab"]["tokens"], min_count=header["vocab"]["min_count"])
        labels = LabelIndex(header["labels"])
        model = LswModel(config, vocab, seed=header["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint header: {exc}") from exc

    expected = model.arrays()
    for name, arr in expected.items():
        if name not in blocks:
            raise CheckpointError(f"checkpoint lacks parameter block {name!r}")
        if blocks[name].shape != arr.shape:
            raise CheckpointError(f"block {name!r} has shape {blocks[name].shape}, expected {arr.shape}")
    for name, arr in expected.items():
        arr[...] = blocks[name]
    model.encoder.frozen = header.get("encoder_frozen", model.encoder.frozen)

    adam = None
    if header.get("adam") is not None:
        adam = nk.AdamState(**header["adam"])
        for name in blocks:
            if name.startswith("adam.m/"):
                key = name[len("adam.m/") :]
                adam.moments[key] = (blocks[name].copy(), blocks[f"adam.v/{key}"].copy())
    return Checkpoint(model, labels, adam, header.get("training", {}))


def load(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(buf)
