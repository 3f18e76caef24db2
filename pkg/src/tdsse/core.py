"""Shared domain types and tile byte conventions.

Tile bytes are laid out row-major by pixel with channels interleaved per
pixel, i.e. exactly ``array[r0:r1, c0:c1, :].tobytes()`` for a C-contiguous
``(H, W, C)`` uint8 array.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

MASTER_KEY_LEN = 32
NONCE_LEN = 16
TILE_KEY_LEN = 32


class FormatError(ValueError):
    """Raised for malformed images, tiles, masks or containers."""


class Variant(str, enum.Enum):
    A0 = "A0"
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"
    B1 = "B1"
    AES_CTR_FULL = "AES_CTR_FULL"

    @property
    def code(self) -> int:
        return list(Variant).index(self)

    @classmethod
    def from_code(cls, code: int) -> "Variant":
        members = list(cls)
        if not 0 <= code < len(members):
            raise FormatError(f"unknown variant code {code}")
        return members[code]

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().upper().replace("-", "_")
        if key in ("AES_CTR", "AESCTR"):
            key = "AES_CTR_FULL"
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown variant {name!r}; valid variants: {valid}") from None

    @property
    def label(self) -> str:
        """Name used in result tables."""
        return "AES-CTR" if self is Variant.AES_CTR_FULL else self.value


SELECTIVE_VARIANTS = (Variant.A0, Variant.A1, Variant.A2, Variant.A3, Variant.B1)


@dataclass(frozen=True)
class TileIndex:
    t: int
    i: int
    j: int

    def __post_init__(self):
        if self.t < 0 or self.t >= 2**32:
            raise ValueError(f"frame index {self.t} outside 32-bit unsigned range")
        if self.i < 0 or self.j < 0:
            raise ValueError("tile coordinates must be non-negative")


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """An 8-bit ``H x W x C`` image. ``data`` is a read-only uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise FormatError(f"expected HxWx1 or HxWx3 image, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise FormatError(f"expected uint8 pixels, got {arr.dtype}")
        if arr.shape[0] <= 0 or arr.shape[1] <= 0:
            raise FormatError("image dimensions must be positive")
        arr = np.ascontiguousarray(arr).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_bytes(cls, height: int, width: int, channels: int, raw: bytes) -> "ImageTensor":
        expected = height * width * channels
        if len(raw) != expected:
            raise FormatError(f"expected {expected} bytes for {height}x{width}x{channels}, got {len(raw)}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
        return cls(arr)

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 1) -> "ImageTensor":
        return cls(np.zeros((height, width, channels), dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_bytes(self) -> bytes:
        return self.data.tobytes()

    def __eq__(self, other):
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class RoiMask:
    """Binary ``H x W`` mask; public side information only."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise FormatError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise FormatError("mask values must be 0 or 1")
        arr = np.ascontiguousarray(arr, dtype=np.uint8).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @classmethod
    def full(cls, height: int, width: int, value: int = 1) -> "RoiMask":
        return cls(np.full((height, width), value, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def coverage(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0

    def __eq__(self, other):
        if not isinstance(other, RoiMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))


def grid_shape(image: ImageTensor, s: int) -> tuple[int, int]:
    if s <= 0 or image.height % s or image.width % s:
        raise FormatError(f"tile size {s} does not divide image {image.height}x{image.width}")
    return image.height // s, image.width // s


def _tile_slice(image: ImageTensor, idx: TileIndex, s: int) -> tuple[slice, slice]:
    rows, cols = grid_shape(image, s)
    if not (0 <= idx.i < rows and 0 <= idx.j < cols):
        raise IndexError(f"tile ({idx.i}, {idx.j}) outside {rows}x{cols} grid")
    return slice(idx.i * s, (idx.i + 1) * s), slice(idx.j * s, (idx.j + 1) * s)


def tile_bytes(image: ImageTensor, idx: TileIndex, s: int) -> bytes:
    rs, cs = _tile_slice(image, idx, s)
    return image.data[rs, cs, :].tobytes()


def write_tile(image: ImageTensor, idx: TileIndex, s: int, data: bytes) -> ImageTensor:
    """Return a copy of ``image`` with tile ``idx`` replaced by ``data``."""
    rs, cs = _tile_slice(image, idx, s)
    expected = s * s * image.channels
    if len(data) != expected:
        raise FormatError(f"tile payload is {len(data)} bytes, expected {expected}")
    arr = image.data.copy()
    arr[rs, cs, :] = np.frombuffer(data, dtype=np.uint8).reshape(s, s, image.channels)
    return ImageTensor(arr)


def iter_tiles(image: ImageTensor, s: int):
    rows, cols = grid_shape(image, s)
    for i in range(rows):
        for j in range(cols):
            yield i, j


def center_crop(image: ImageTensor, s: int) -> ImageTensor:
    """Crop to the largest multiple of ``s`` in each dimension, keeping the center."""
    h = image.height - image.height % s
    w = image.width - image.width % s
    if h == 0 or w == 0:
        raise FormatError(f"image {image.height}x{image.width} smaller than tile size {s}")
    top = (image.height - h) // 2
    left = (image.width - w) // 2
    return ImageTensor(image.data[top:top + h, left:left + w, :])
