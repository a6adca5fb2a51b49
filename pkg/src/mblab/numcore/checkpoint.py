"""Binary checkpoint container for named parameter tensors and optimizer state.

Layout (little-endian)::

    magic            b"MBLAB-CKPT-1", NUL-padded to 16 bytes
    u32              metadata length, then that many bytes of UTF-8 JSON
    u32              tensor count
    per tensor:      u16 name length, name bytes, u8 ndim, ndim x u32 dims,
                     prod(dims) x f64 values (row-major)
    u8               1 if optimizer state follows, else 0
    optimizer:       u64 step, f64 lr, beta1, beta2, epsilon, clip (NaN = none),
                     then per tensor (same order): f64 param lr, first moment,
                     second moment
    u32              CRC-32 of everything before it
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .optim import OptimizerState

CKPT_MAGIC_PREFIX = b"MBLAB-CKPT-"
CKPT_VERSION = "1"
CKPT_MAGIC = CKPT_MAGIC_PREFIX + CKPT_VERSION.encode()
MAGIC_FIELD = 16


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def encode_checkpoint(params: dict[str, np.ndarray], optimizer: OptimizerState | None = None,
                      metadata: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(pack_magic(CKPT_MAGIC))
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    names = list(params)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.asarray(params[name], dtype=np.float64)
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        _write_array(buf, arr)
    if optimizer is None:
        buf.write(b"\x00")
    else:
        if len(optimizer.first_moment) != len(names):
            raise CheckpointError(
                f"optimizer holds {len(optimizer.first_moment)} moment buffers for {len(names)} tensors"
            )
        buf.write(b"\x01")
        clip = float("nan") if optimizer.clip_threshold is None else optimizer.clip_threshold
        buf.write(struct.pack("<Q5d", optimizer.step, optimizer.learning_rate, optimizer.beta1,
                              optimizer.beta2, optimizer.epsilon, clip))
        lrs = optimizer.param_lrs or [optimizer.learning_rate] * len(names)
        for lr, m, v in zip(lrs, optimizer.first_moment, optimizer.second_moment):
            buf.write(struct.pack("<d", lr))
            _write_array(buf, m)
            _write_array(buf, v)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path, params: dict[str, np.ndarray], optimizer: OptimizerState | None = None,
                    metadata: dict | None = None) -> None:
    atomic_write(path, encode_checkpoint(params, optimizer, metadata))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def pack_magic(magic: bytes) -> bytes:
    return magic.ljust(MAGIC_FIELD, b"\x00")


def read_magic_version(data: bytes, prefix: bytes, kind: str, error=CheckpointError) -> str:
    """Return the version suffix of a NUL-padded magic field, e.g. "1"."""
    field = data[:MAGIC_FIELD]
    if len(field) < MAGIC_FIELD or not field.startswith(prefix):
        raise error(f"not a {kind} file (bad magic)")
    return field[len(prefix):].rstrip(b"\x00").decode("ascii", errors="replace")


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], OptimizerState | None, dict]:
    version = read_magic_version(data, CKPT_MAGIC_PREFIX, "checkpoint")
    if version != CKPT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version!r} is not supported (this build reads version {CKPT_VERSION!r})"
        )
    if len(data) < MAGIC_FIELD + 4:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint checksum mismatch (file corrupt or truncated)")
    r = _Reader(body)
    r.take(MAGIC_FIELD)
    (meta_len,) = r.unpack("<I")
    metadata = json.loads(r.take(meta_len).decode())
    (count,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        params[name] = r.array(shape)
    (has_opt,) = r.unpack("<B")
    optimizer = None
    if has_opt:
        step, lr, b1, b2, eps, clip = r.unpack("<Q5d")
        lrs, m1, m2 = [], [], []
        for arr in params.values():
            (plr,) = r.unpack("<d")
            lrs.append(plr)
            m1.append(r.array(arr.shape))
            m2.append(r.array(arr.shape))
        optimizer = OptimizerState(m1, m2, step=step, learning_rate=lr, beta1=b1, beta2=b2,
                                   epsilon=eps, clip_threshold=None if np.isnan(clip) else clip,
                                   param_lrs=lrs)
    if r.pos != len(body):
        raise CheckpointError(f"checkpoint has {len(body) - r.pos} trailing bytes")
    return params, optimizer, metadata


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], OptimizerState | None, dict]:
    return decode_checkpoint(Path(path).read_bytes())
