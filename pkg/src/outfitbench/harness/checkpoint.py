"""Versioned binary checkpoints and the per-directory trainer lock.

Layout (all integers little-endian)::

    magic            b"OUTFITBENCH-CKPT"
    version          u32
    text block       u32 length + UTF-8 ``key = value`` lines (config, epoch, seeds)
    vocabulary       u32 length + UTF-8 item ids, one per line
    tensor count     u32
    per tensor       u16 name length, name, u8 dtype code, u8 ndim, u64 dims..., raw bytes

Parameter and optimizer tensors share the blob section; optimizer entries
are prefixed with ``adam.``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..catalog import Vocabulary
from ..errors import DataError, UsageError

MAGIC = b"OUTFITBENCH-CKPT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {v: k for k, v in DTYPES.items()}


@dataclass
class Checkpoint:
    meta: dict
    vocab_ids: tuple
    tensors: dict

    def vocabulary(self) -> Vocabulary:
        threshold = int(self.meta.get("vocab_threshold", 1))
        return Vocabulary(tuple(self.vocab_ids), {}, threshold)

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))

    def params(self) -> dict:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def optimizer(self) -> dict:
        return {k: v for k, v in self.tensors.items() if k.startswith("adam.")}


def _text(d: dict) -> bytes:
    return "\n".join(f"{k} = {d[k]}" for k in sorted(d)).encode()


def _parse_text(raw: bytes) -> dict:
    out = {}
    for line in raw.decode().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def encode_checkpoint(meta: dict, vocab_ids, tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    text = _text(meta)
    vocab = "\n".join(vocab_ids).encode()
    parts += [struct.pack("<I", len(text)), text, struct.pack("<I", len(vocab)), vocab]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else np.dtype("<i8")
        if dt not in CODES:
            raise DataError(f"unsupported dtype {arr.dtype} for {name}")
        arr = np.asarray(arr, dtype=dt, order="C")
        key = name.encode()
        parts.append(struct.pack("<HBB", len(key), CODES[dt], arr.ndim))
        parts.append(key)
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes) -> Checkpoint:
    if not raw.startswith(MAGIC):
        raise DataError("not an outfitbench checkpoint (bad magic)")
    off = len(MAGIC)
    try:
        (version,) = struct.unpack_from("<I", raw, off)
        off += 4
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        meta = _parse_text(raw[off:off + n])
        off += n
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        vocab_ids = tuple(raw[off:off + n].decode().splitlines())
        off += n
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(count):
            klen, code, ndim = struct.unpack_from("<HBB", raw, off)
            off += 4
            name = raw[off:off + klen].decode()
            off += klen
            shape = struct.unpack_from(f"<{ndim}Q", raw, off)
            off += 8 * ndim
            dt = DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            tensors[name] = np.frombuffer(raw[off:off + size], dtype=dt).reshape(shape).copy()
            off += size
    except (struct.error, KeyError, UnicodeDecodeError, ValueError) as exc:
        raise DataError(f"corrupt checkpoint: {exc}") from None
    if off != len(raw):
        raise DataError("corrupt checkpoint: trailing bytes")
    return Checkpoint(meta, vocab_ids, tensors)


def save_checkpoint(path, meta: dict, vocab_ids, tensors: dict) -> Path:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(meta, vocab_ids, tensors))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    return decode_checkpoint(path.read_bytes())


class CheckpointManager:
    """Per-epoch checkpoints in one directory, keeping the newest ``keep``."""

    def __init__(self, directory, keep: int = 2):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.keep = keep

    def path(self, epoch: int) -> Path:
        return self.dir / f"epoch-{epoch:04d}.ckpt"

    def all(self) -> list[Path]:
        return sorted(self.dir.glob("epoch-*.ckpt"))

    def latest(self) -> Path | None:
        found = self.all()
        return found[-1] if found else None

    def save(self, epoch: int, meta: dict, vocab_ids, tensors: dict) -> Path:
        meta = dict(meta, epoch=epoch)
        path = save_checkpoint(self.path(epoch), meta, vocab_ids, tensors)
        for old in self.all()[:-self.keep]:
            old.unlink()
        return path


class TrainerLock:
    """Exclusive lock file so only one trainer writes a checkpoint directory."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"
        self._fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(f"{self.path.parent} is locked by another trainer ({self.path})") from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self._fd)
        self.path.unlink(missing_ok=True)
        return False
