"""``.socc`` sample container, train/test manifests and joint spatial augmentation.

Container layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"SOCC"
    4       2     version (uint16, currently 1)
    6       4     H (uint32)
    10      4     W (uint32)
    14      4     T (uint32)
    18      1     ground-truth flag (0 or 1)
    19      ...   spike payload: T records of ceil(H*W/8) bytes; each record is one
                  time step, pixels row-major, 8 per byte, least-significant bit
                  first, zero-padded to the byte boundary
    ...     2*H*W ground truth (present iff flag == 1), uint16 row-major,
                  value = round(intensity * 65535)

Scene provenance is stored next to the container as ``<name>.json``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenes import GT_LEVELS, Sample, SceneSpec, dequantize_gt
from .spikes import SpikeStream

MAGIC = b"SOCC"
VERSION = 1
HEADER = struct.Struct("<4sHIIIB")
EXTENSION = ".socc"


class ContainerError(ValueError):
    """Base class for malformed ``.socc`` files."""


class CorruptHeaderError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class SizeMismatchError(ContainerError):
    pass


def bytes_per_step(height: int, width: int) -> int:
    return (height * width + 7) // 8


def payload_size(height: int, width: int, num_steps: int) -> int:
    return num_steps * bytes_per_step(height, width)


def encode_sample(sample: Sample) -> bytes:
    data = sample.stream.data
    t, h, w = data.shape
    if not np.all((data == 0) | (data == 1)):
        raise ValueError("spike stream contains non-binary elements")
    has_gt = sample.ground_truth is not None
    header = HEADER.pack(MAGIC, VERSION, h, w, t, int(has_gt))
    payload = np.packbits(data.reshape(t, h * w).astype(np.uint8), axis=1, bitorder="little")
    parts = [header, payload.tobytes()]
    if has_gt:
        gt = np.asarray(sample.ground_truth, dtype=np.float64)
        if gt.min() < 0 or gt.max() > 1:
            raise ValueError("ground truth must lie in [0, 1]")
        parts.append(np.round(gt * GT_LEVELS).astype("<u2").tobytes())
    return b"".join(parts)


def decode_sample(buf: bytes) -> Sample:
    if len(buf) < HEADER.size:
        raise CorruptHeaderError(f"file too short for header ({len(buf)} < {HEADER.size} bytes)")
    magic, version, h, w, t, flag = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"container version {version} unsupported (reader is version {VERSION})")
    if h == 0 or w == 0 or t == 0 or flag not in (0, 1):
        raise CorruptHeaderError(f"invalid header fields H={h} W={w} T={t} gt={flag}")
    step_bytes = bytes_per_step(h, w)
    n_payload = t * step_bytes
    n_gt = 2 * h * w if flag else 0
    expected = HEADER.size + n_payload + n_gt
    if len(buf) < expected:
        raise TruncatedPayloadError(f"expected {expected} bytes, file has {len(buf)}")
    if len(buf) > expected:
        raise SizeMismatchError(f"{len(buf) - expected} trailing bytes after a {h}x{w}x{t} sample")
    packed = np.frombuffer(buf, dtype=np.uint8, count=n_payload, offset=HEADER.size).reshape(t, step_bytes)
    bits = np.unpackbits(packed, axis=1, count=h * w, bitorder="little")
    stream = SpikeStream(bits.reshape(t, h, w))
    gt = None
    if flag:
        q = np.frombuffer(buf, dtype="<u2", count=h * w, offset=HEADER.size + n_payload).reshape(h, w)
        gt = dequantize_gt(q)
    return Sample(stream=stream, ground_truth=gt)


def write_sample(sample: Sample, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_sample(sample))
    os.replace(tmp, path)
    if sample.scene is not None or sample.meta:
        side = {"scene": sample.scene.to_dict() if sample.scene is not None else None, "meta": sample.meta}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_sample(path: str | os.PathLike) -> Sample:
    path = Path(path)
    sample = decode_sample(path.read_bytes())
    side = path.with_suffix(".json")
    if side.exists():
        info = json.loads(side.read_text())
        if info.get("scene") is not None:
            sample.scene = SceneSpec.from_dict(info["scene"])
        sample.meta = info.get("meta", {})
    return sample


# -- split manifest ---------------------------------------------------------------

@dataclass
class SplitManifest:
    train: list[str]
    test: list[str]
    seed: int

    def dumps(self) -> str:
        lines = [f"# seed: {self.seed}", "train:"]
        lines += self.train
        lines.append("test:")
        lines += self.test
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SplitManifest":
        train, test, seed = [], [], 0
        current = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                if key.strip() == "seed":
                    seed = int(value)
                continue
            if line == "train:":
                current = train
            elif line == "test:":
                current = test
            elif current is None:
                raise ValueError(f"id {line!r} appears before a train:/test: heading")
            else:
                current.append(line)
        return cls(train=train, test=test, seed=seed)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SplitManifest":
        return cls.loads(Path(path).read_text())


def sample_id(index: int) -> str:
    return f"sample_{index:04d}"


def make_split(num_sequences: int, num_train: int, seed: int = 0,
               ids: list[str] | None = None) -> SplitManifest:
    if not 0 < num_train < num_sequences:
        raise ValueError(f"need 0 < num_train ({num_train}) < num_sequences ({num_sequences})")
    if ids is None:
        ids = [sample_id(i) for i in range(num_sequences)]
    elif len(ids) != num_sequences:
        raise ValueError("ids length does not match num_sequences")
    order = np.random.default_rng(seed).permutation(num_sequences)
    train = sorted(ids[i] for i in order[:num_train])
    test = sorted(ids[i] for i in order[num_train:])
    return SplitManifest(train=train, test=test, seed=seed)


# -- augmentation -----------------------------------------------------------------

@dataclass(frozen=True)
class SpatialTransform:
    """Crop, then horizontal flip, then ``rot90`` quarter turns, on the last two axes."""

    top: int
    left: int
    crop_h: int
    crop_w: int
    flip: bool
    quarter_turns: int

    def __call__(self, arr: np.ndarray) -> np.ndarray:
        out = arr[..., self.top:self.top + self.crop_h, self.left:self.left + self.crop_w]
        if self.flip:
            out = out[..., ::-1]
        if self.quarter_turns % 4:
            out = np.rot90(out, self.quarter_turns, axes=(-2, -1))
        return np.ascontiguousarray(out)

    @classmethod
    def identity(cls, height: int, width: int) -> "SpatialTransform":
        return cls(0, 0, height, width, False, 0)


def random_transform(height: int, width: int, rng: np.random.Generator,
                     crop: int | tuple[int, int] = 128, flip: bool = True,
                     rotate: bool = True) -> SpatialTransform:
    ch, cw = (crop, crop) if isinstance(crop, int) else crop
    if ch > height or cw > width:
        raise ValueError(f"crop {ch}x{cw} larger than frame {height}x{width}")
    top = int(rng.integers(0, height - ch + 1))
    left = int(rng.integers(0, width - cw + 1))
    do_flip = bool(rng.integers(0, 2)) if flip else False
    turns = int(rng.integers(0, 4)) if rotate else 0
    return SpatialTransform(top, left, ch, cw, do_flip, turns)


def apply_transform(sample: Sample, transform: SpatialTransform) -> Sample:
    stream = SpikeStream(transform(sample.stream.data))
    gt = None if sample.ground_truth is None else transform(sample.ground_truth)
    return Sample(stream=stream, ground_truth=gt, scene=sample.scene, meta=dict(sample.meta))


def augment(sample: Sample, rng: np.random.Generator, crop: int | tuple[int, int] = 128) -> Sample:
    """Random crop, horizontal flip and 90-degree rotation applied jointly to stream and ground truth."""
    t = random_transform(sample.stream.height, sample.stream.width, rng, crop=crop)
    return apply_transform(sample, t)
