"""BMV1 model checkpoints.

Layout (little-endian throughout)::

    b"BMV1"  u32 version  u32 config_len  config text (UTF-8, key = value lines)
    u32 n_groups
    per group:  u16 name_len  name  u8 kind  u8 ndim  u32 dims[ndim]  payload

``kind`` 0 is a float tensor stored as f64; kind 1 is a boolean mask stored
with ``np.packbits(bitorder="little")``. Groups follow declaration order:
every tensor of the model, then every mask.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ContainerError, DataError
from .layers import named_masks, named_parameters
from .model import BioMambaModel, build_model

MAGIC = b"BMV1"
VERSION = 1
_KIND_TENSOR, _KIND_MASK = 0, 1


def _groups(model: BioMambaModel):
    for name, t in named_parameters(model):
        yield name, _KIND_TENSOR, t.data
    for name, m in named_masks(model):
        yield name, _KIND_MASK, m


def encode(model: BioMambaModel, run: RunConfig) -> bytes:
    if run.model != model.config:
        raise DataError("run configuration does not describe this model")
    cfg = run.to_text().encode()
    groups = list(_groups(model))
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(groups))]
    for name, kind, arr in groups:
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", kind, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if kind == _KIND_TENSOR:
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        else:
            out.append(np.packbits(arr.ravel(), bitorder="little").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(f"truncated while reading {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def decode(buf: bytes) -> tuple[BioMambaModel, RunConfig]:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise ContainerError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    version, cfg_len = r.unpack("<II", "header")
    if version != VERSION:
        raise ContainerError(f"unsupported checkpoint version {version}", 4)
    at = r.pos
    try:
        run = RunConfig.from_text(r.take(cfg_len, "config").decode())
    except (UnicodeDecodeError, ValueError) as exc:
        raise ContainerError(f"bad config block: {exc}", at) from None
    model = build_model(run.model, run.seed)
    expected = list(_groups(model))
    (n_groups,) = r.unpack("<I", "group count")
    if n_groups != len(expected):
        raise ContainerError(f"{n_groups} parameter groups, model has {len(expected)}", r.pos - 4)
    for name, kind, target in expected:
        at = r.pos
        (name_len,) = r.unpack("<H", "group name")
        got = r.take(name_len, "group name").decode(errors="replace")
        got_kind, ndim = r.unpack("<BB", f"group {got}")
        shape = r.unpack(f"<{ndim}I", f"group {got}")
        if got != name or got_kind != kind or shape != target.shape:
            raise ContainerError(f"group {got!r} {shape} does not match {name!r} {target.shape}", at)
        if kind == _KIND_TENSOR:
            target[...] = np.frombuffer(r.take(8 * target.size, name), dtype="<f8").reshape(shape)
        else:
            packed = np.frombuffer(r.take((target.size + 7) // 8, name), dtype=np.uint8)
            target[...] = np.unpackbits(packed, count=target.size, bitorder="little").reshape(shape).astype(bool)
    if r.pos != len(buf):
        raise ContainerError(f"{len(buf) - r.pos} unexpected trailing bytes", r.pos)
    return model, run


def save(path, model: BioMambaModel, run: RunConfig) -> None:
    Path(path).write_bytes(encode(model, run))


def load(path) -> tuple[BioMambaModel, RunConfig]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    return decode(buf)
