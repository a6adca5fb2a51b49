"""Observation windows, blockage labels, chronological splits, and the dataset file format."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numcore.checkpoint import atomic_write, pack_magic, read_magic_version
from .scenesim import BoundingBox

DS_MAGIC_PREFIX = b"MBLAB-DS-"
DS_VERSION = "1"
_HEADER = struct.Struct("<5I3I3d")
_ORIGIN = struct.Struct("<3I")
_BOX = struct.Struct("<4fB")
_LABEL_CODES = {"vehicle": 0, "user": 1}
_LABEL_NAMES = {v: k for k, v in _LABEL_CODES.items()}


class DatasetError(ValueError):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetChecksumError(DatasetError):
    pass


class DatasetTruncatedError(DatasetChecksumError):
    pass


def make_label(future_states) -> int:
    """1 if any of the future LoS states is blocked, else 0."""
    seq = np.asarray(future_states)
    if seq.size == 0:
        raise ValueError("label needs at least one future state")
    if not np.isin(seq, (0, 1)).all():
        raise ValueError(f"future states must be 0/1, got {seq.tolist()}")
    return int(seq.any())


def window_count(T: int, p: int, f: int) -> int:
    return T - p - f + 1


@dataclass
class LabeledSample:
    images: np.ndarray
    beams: np.ndarray
    label: int
    future: np.ndarray
    origin: tuple[int, int, int]   # (user, base station, first observation step)
    boxes: list[list[BoundingBox]] = field(default_factory=list)


@dataclass
class SampleSet:
    """Struct-of-arrays container for labelled windows."""
    images: np.ndarray   # (n, p, H, W) float32
    beams: np.ndarray    # (n, p) int64
    labels: np.ndarray   # (n,) uint8
    future: np.ndarray   # (n, f) uint8
    origins: np.ndarray  # (n, 3) int64
    boxes: list[list[list[BoundingBox]]] = field(default_factory=list)

    @classmethod
    def empty(cls, p: int, f: int, H: int, W: int) -> "SampleSet":
        return cls(np.zeros((0, p, H, W), np.float32), np.zeros((0, p), np.int64), np.zeros(0, np.uint8),
                   np.zeros((0, f), np.uint8), np.zeros((0, 3), np.int64), [])

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.images[i], self.beams[i], int(self.labels[i]), self.future[i],
                             tuple(int(v) for v in self.origins[i]), self.boxes[i] if self.boxes else [])

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        boxes = [self.boxes[i] for i in idx] if self.boxes else []
        return SampleSet(self.images[idx], self.beams[idx], self.labels[idx], self.future[idx], self.origins[idx], boxes)

    def class_balance(self) -> dict[str, int]:
        pos = int(self.labels.sum())
        return {"los": len(self) - pos, "blocked": pos}

    def equals(self, other: "SampleSet") -> bool:
        arrays = ("images", "beams", "labels", "future", "origins")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays) and self.boxes == other.boxes

    @staticmethod
    def concat(sets: list["SampleSet"]) -> "SampleSet":
        return SampleSet(
            np.concatenate([s.images for s in sets]), np.concatenate([s.beams for s in sets]),
            np.concatenate([s.labels for s in sets]), np.concatenate([s.future for s in sets]),
            np.concatenate([s.origins for s in sets]), [b for s in sets for b in s.boxes],
        )


def _float32_box(b: BoundingBox) -> BoundingBox:
    x0, y0, x1, y1 = (float(v) for v in np.asarray(b.coords(), dtype=np.float32))
    return BoundingBox(x0, y0, x1, y1, b.label)


def build_windows(images, beams, los, p: int, f: int, origin: tuple[int, int] = (0, 0),
                  boxes: list[list[BoundingBox]] | None = None) -> SampleSet:
    """Slide a (p observed, f future) window over one stream of length T."""
    images = np.asarray(images, dtype=np.float32)
    beams = np.asarray(beams, dtype=np.int64)
    los = np.asarray(los, dtype=np.uint8)
    T = beams.shape[0]
    if p < 1 or f < 1:
        raise ValueError(f"p and f must be >= 1, got p={p}, f={f}")
    if images.shape[0] != T or los.shape[0] != T:
        raise ValueError(f"stream lengths differ: images {images.shape[0]}, beams {T}, los {los.shape[0]}")
    if T < p + f:
        raise ValueError(f"stream of {T} steps is too short: need at least p + f = {p + f}")
    n = window_count(T, p, f)
    win_img = sliding_window_view(images, p, axis=0)[:n].transpose(0, 3, 1, 2).copy()
    win_beam = sliding_window_view(beams, p)[:n].copy()
    fut = sliding_window_view(los[p:], f)[:n].copy()
    labels = fut.any(axis=1).astype(np.uint8)
    starts = np.arange(n)
    origins = np.stack([np.full(n, origin[0]), np.full(n, origin[1]), starts], axis=1).astype(np.int64)
    win_boxes = []
    if boxes is not None:
        frames = [[_float32_box(b) for b in frame] for frame in boxes]
        win_boxes = [frames[i:i + p] for i in range(n)]
    return SampleSet(win_img, win_beam, labels, fut, origins, win_boxes)


def split_sizes(n: int, ratios) -> list[int]:
    """Largest-remainder apportionment; ties in the remainder favour the later split."""
    fr = [Fraction(r).limit_denominator(10 ** 9) for r in ratios]
    exact = [n * r for r in fr]
    sizes = [int(e) for e in exact]
    rema = sorted(range(len(fr)), key=lambda i: (exact[i] - sizes[i], i), reverse=True)
    for i in rema[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


@dataclass
class DatasetSplit:
    train: SampleSet
    validation: SampleSet
    test: SampleSet
    p: int
    f: int
    n_beams: int
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.train.images.shape[2:4])

    def parts(self) -> dict[str, SampleSet]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def equals(self, other: "DatasetSplit") -> bool:
        meta = (self.p, self.f, self.n_beams, tuple(self.ratios)) == (other.p, other.f, other.n_beams, tuple(other.ratios))
        return meta and all(a.equals(b) for a, b in zip(self.parts().values(), other.parts().values()))


def _check_ratios(ratios) -> None:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1, got {tuple(ratios)}")


def chronological_split(samples: SampleSet, ratios=(0.7, 0.15, 0.15), *, n_beams: int, p: int | None = None,
                        f: int | None = None) -> DatasetSplit:
    """Split every (user, BS) stream into a train prefix, validation middle, and test suffix."""
    _check_ratios(ratios)
    p = samples.beams.shape[1] if p is None else p
    f = samples.future.shape[1] if f is None else f
    parts = [[], [], []]
    streams = {}
    for i, (u, b, _) in enumerate(samples.origins):
        streams.setdefault((int(u), int(b)), []).append(i)
    for key, idx in streams.items():
        idx = sorted(idx, key=lambda i: samples.origins[i, 2])
        sizes = split_sizes(len(idx), ratios)
        if min(sizes) == 0:
            raise ValueError(f"stream {key}: {len(idx)} samples give an empty split at ratios {tuple(ratios)} "
                             f"(sizes {sizes})")
        bounds = np.cumsum([0] + sizes)
        for k in range(3):
            parts[k].extend(idx[bounds[k]:bounds[k + 1]])
    if not streams:
        raise ValueError("cannot split an empty sample set")
    sets = [samples.subset(ix) for ix in parts]
    return DatasetSplit(*sets, p=p, f=f, n_beams=n_beams, ratios=tuple(float(r) for r in ratios))


def leakage_free(split: DatasetSplit) -> bool:
    """Per stream, no training observation step reaches the earliest validation label step,
    and validation precedes test."""
    p = split.p
    for (u, b) in {tuple(o[:2]) for o in split.train.origins}:
        def starts(s):
            m = (s.origins[:, 0] == u) & (s.origins[:, 1] == b)
            return s.origins[m, 2]
        tr, va, te = starts(split.train), starts(split.validation), starts(split.test)
        if len(va) and tr.max() + p - 1 >= va.min() + p:
            return False
        if not (len(va) == 0 or len(te) == 0 or (tr.max() < va.min() and va.max() < te.min())):
            return False
    return True


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def encode_dataset(split: DatasetSplit) -> bytes:
    H, W = split.image_shape
    chunks = [pack_magic(DS_MAGIC_PREFIX + DS_VERSION.encode()),
              _HEADER.pack(split.p, split.f, split.n_beams, H, W,
                           len(split.train), len(split.validation), len(split.test), *split.ratios)]
    for part in split.parts().values():
        for i in range(len(part)):
            chunks.append(_ORIGIN.pack(*(int(v) for v in part.origins[i])))
            chunks.append(np.ascontiguousarray(part.images[i], dtype="<f4").tobytes())
            if part.beams[i].max(initial=0) > 0xFFFF:
                raise DatasetError(f"beam index {int(part.beams[i].max())} does not fit in 16 bits")
            chunks.append(part.beams[i].astype("<u2").tobytes())
            chunks.append(bytes([int(part.labels[i])]))
            chunks.append(part.future[i].astype(np.uint8).tobytes())
            frames = part.boxes[i] if part.boxes else [[] for _ in range(split.p)]
            for frame in frames:
                if len(frame) > 255:
                    raise DatasetError(f"too many boxes in one frame ({len(frame)})")
                chunks.append(bytes([len(frame)]))
                for bx in frame:
                    chunks.append(_BOX.pack(*bx.coords(), _LABEL_CODES[bx.label]))
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data, self.pos = data, offset

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatasetTruncatedError(
                f"dataset checksum failure: file truncated (needs {self.pos + n} bytes, has {len(self.data)})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def _parse(body: bytes) -> DatasetSplit:
    r = _Reader(body, 16)
    p, f, N, H, W, n_tr, n_va, n_te, r0, r1, r2 = _HEADER.unpack(r.take(_HEADER.size))
    sets = []
    for n in (n_tr, n_va, n_te):
        imgs = np.zeros((n, p, H, W), np.float32)
        beams = np.zeros((n, p), np.int64)
        labels = np.zeros(n, np.uint8)
        fut = np.zeros((n, f), np.uint8)
        origins = np.zeros((n, 3), np.int64)
        boxes = []
        for i in range(n):
            origins[i] = _ORIGIN.unpack(r.take(_ORIGIN.size))
            imgs[i] = np.frombuffer(r.take(4 * p * H * W), dtype="<f4").reshape(p, H, W)
            beams[i] = np.frombuffer(r.take(2 * p), dtype="<u2")
            labels[i] = r.take(1)[0]
            fut[i] = np.frombuffer(r.take(f), dtype=np.uint8)
            frames = []
            for _ in range(p):
                count = r.take(1)[0]
                frame = []
                for _ in range(count):
                    x0, y0, x1, y1, code = _BOX.unpack(r.take(_BOX.size))
                    frame.append(BoundingBox(x0, y0, x1, y1, _LABEL_NAMES.get(code, "vehicle")))
                frames.append(frame)
            boxes.append(frames)
        sets.append(SampleSet(imgs, beams, labels, fut, origins, boxes))
    if r.pos != len(body):
        raise DatasetError(f"dataset has {len(body) - r.pos} unexpected trailing bytes")
    return DatasetSplit(*sets, p=p, f=f, n_beams=N, ratios=(r0, r1, r2))


def decode_dataset(data: bytes) -> DatasetSplit:
    version = read_magic_version(data, DS_MAGIC_PREFIX, "dataset", DatasetError)
    if version != DS_VERSION:
        raise DatasetVersionError(f"dataset format version {version} is not supported (this build reads {DS_VERSION})")
    if len(data) < 16 + _HEADER.size + 4:
        raise DatasetTruncatedError(f"dataset checksum failure: file truncated ({len(data)} bytes)")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != stored:
        # distinguish a short file from corrupted content
        _parse(body)
        raise DatasetChecksumError("dataset checksum failure: CRC-32 mismatch")
    return _parse(body)


def save_dataset(split: DatasetSplit, path) -> None:
    atomic_write(Path(path), encode_dataset(split))


def load_dataset(path) -> DatasetSplit:
    return decode_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# end-to-end generation
# ---------------------------------------------------------------------------

def windows_from_records(records, p: int, f: int) -> SampleSet:
    sets = [build_windows(r.images, r.beams, r.los, p, f, origin=(r.user, r.bs), boxes=r.boxes) for r in records]
    return SampleSet.concat(sets)


def generate_dataset(cfg, p: int | None = None, f: int | None = None, records=None) -> DatasetSplit:
    """Simulate ``cfg`` and return its chronologically split windows."""
    from .pipeline import simulate

    p = cfg.window.p if p is None else p
    f = cfg.window.f if f is None else f
    if cfg.n_scenes < p + f:
        raise ValueError(f"n_scenes={cfg.n_scenes} is too short: need at least p + f = {p + f}")
    records = simulate(cfg) if records is None else records
    samples = windows_from_records(records, p, f)
    return chronological_split(samples, cfg.split, n_beams=cfg.codebook.n_beams, p=p, f=f)
