"""Shared value types: image grids, counter-based RNG, checkpoints, image I/O.

Pixel values live in [0,1] at public boundaries. Grids produced by the
forward process legitimately leave that range, so ImageGrid carries a
`role`: "image" grids are clamped on construction, "field" grids are not.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class Truncated(CheckpointError):
    pass


class UnsupportedVersion(CheckpointError):
    pass


MAGIC = b"TDLR"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ImageGrid:
    """H x W x C grid of floats. C is 1 (sketch) or 3 (RGB/palette)."""

    data: np.ndarray
    role: str = "image"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected (H, W, C) array, got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {arr.shape[2]}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("zero-sized grid")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in grid")
        if self.role not in ("image", "field"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "image":
            arr = np.clip(arr, 0.0, 1.0)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    @staticmethod
    def zeros(height, width, channels=1):
        return ImageGrid(np.zeros((height, width, channels)))

    def is_binary(self):
        return bool(np.all((self.data == 0.0) | (self.data == 1.0)))

    def clamped(self):
        """Re-enter the [0,1] image role (e.g. after bridge sampling)."""
        return ImageGrid(np.clip(self.data, 0.0, 1.0))


def as_array(img):
    """Accept an ImageGrid or a bare ndarray and return the ndarray."""
    if isinstance(img, ImageGrid):
        return img.data
    return np.asarray(img, dtype=np.float64)


class SeededRng:
    """Counter-based (Philox) generator keyed by (seed, stream_id).

    The same key yields a bit-identical draw sequence on a given platform;
    distinct stream ids give statistically independent streams, so splitting
    per stage / per batch is reproducible regardless of evaluation order.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, stream_id):
        """Fresh independent stream under the same seed."""
        return SeededRng(self.seed, stream_id)

    def normal(self, shape):
        return self._gen.standard_normal(size=shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def shuffle_index(self, n):
        return self._gen.permutation(n)


def gaussian_field(rng, shape, gray=False):
    """I.i.d. standard-normal field of the given (H, W, C) shape.

    gray=True draws a single-channel field and replicates it across
    channels, matching the gray-noise policy of the sketch stage.
    """
    h, w, c = shape
    if h <= 0 or w <= 0 or c <= 0:
        raise ValueError(f"zero-sized shape {shape}")
    if gray:
        base = rng.normal((h, w, 1))
        data = np.repeat(base, c, axis=2)
    else:
        data = rng.normal((h, w, c))
    return ImageGrid(data, role="field")


@dataclass
class Checkpoint:
    """Binary container: magic 'TDLR', u32 version, JSON metadata, tensors.

    Tensors are an ordered name -> float32 array mapping, serialized
    little-endian with shape headers. Round trips are byte exact.
    """

    metadata: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt):
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<I", len(meta))
    out += meta
    out += struct.pack("<I", len(ckpt.tensors))
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += arr.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise Truncated(f"needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagic(f"bad magic in {path}")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    n_tensors = r.u32()
    tensors = {}
    for _ in range(n_tensors):
        name = r.take(r.u16()).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(4 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(metadata=meta, tensors=tensors)


def to_uint8(img):
    arr = np.clip(as_array(img), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def save_png(path, img):
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")


def load_png(path):
    pil = Image.open(path)
    if pil.mode == "L":
        arr = np.asarray(pil, dtype=np.float64)[:, :, None] / 255.0
    else:
        arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    return ImageGrid(arr)


def save_ppm(path, img):
    """Dependency-free P6 fallback (always 3 channels on disk)."""
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def load_ppm(path):
    with open(path, "rb") as f:
        buf = f.read()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a P6 PPM file")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8)
    arr = data.reshape(h, w, 3).astype(np.float64) / 255.0
    return ImageGrid(arr)
