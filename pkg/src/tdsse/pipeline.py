"""End-to-end tilewise selective encryption, decryption and the frame container."""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    MASTER_KEY_LEN,
    NONCE_LEN,
    FormatError,
    ImageTensor,
    RoiMask,
    TileIndex,
    Variant,
    grid_shape,
    iter_tiles,
    tile_bytes,
    write_tile,
)
from .keyschedule import ZERO_NONCE, derive_tile_key
from .roi import RoiPolicy, select_roi_tiles
from .tile_cipher import AES_BLOCK, aes_ctr_tile, spd_decrypt_tile, spd_encrypt_tile

CIPHERS = ("aes-ctr", "spd", "none")
MAGIC = b"TDSE1"
_HEADER = struct.Struct(">5sBI16sIIB")


@dataclass(frozen=True)
class EncryptedFrame:
    cipher: ImageTensor
    nonce: bytes
    variant: Variant
    roi_tiles: frozenset
    t: int

    def to_bytes(self) -> bytes:
        img = self.cipher
        head = _HEADER.pack(MAGIC, self.variant.code, self.t, self.nonce, img.height, img.width, img.channels)
        return head + img.to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes, roi_tiles=frozenset()) -> "EncryptedFrame":
        """Parse a container. The ROI tile set is not stored; pass it in or recompute from the mask."""
        if len(raw) < _HEADER.size:
            raise FormatError("container truncated before end of header")
        magic, vcode, t, nonce, h, w, c = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise FormatError(f"bad container magic {magic!r}")
        if c not in (1, 3):
            raise FormatError(f"unsupported channel count {c}")
        body = raw[_HEADER.size:]
        if len(body) != h * w * c:
            raise FormatError(f"container body is {len(body)} bytes, header says {h * w * c}")
        return cls(ImageTensor.from_bytes(h, w, c, body), nonce, Variant.from_code(vcode), frozenset(roi_tiles), t)


def save_frame(frame: EncryptedFrame, path) -> None:
    Path(path).write_bytes(frame.to_bytes())


def load_frame(path) -> EncryptedFrame:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    try:
        return EncryptedFrame.from_bytes(raw)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def fresh_nonce(seed=None) -> bytes:
    """16 random bytes; drawn from a seeded generator when ``seed`` is given (experiments only)."""
    if seed is None:
        return secrets.token_bytes(NONCE_LEN)
    if isinstance(seed, np.random.Generator):
        return seed.bytes(NONCE_LEN)
    return np.random.default_rng(seed).bytes(NONCE_LEN)


def _check_inputs(master: bytes, image: ImageTensor, mask: RoiMask, policy: RoiPolicy):
    if len(master) != MASTER_KEY_LEN:
        raise ValueError(f"master key must be {MASTER_KEY_LEN} bytes")
    if (mask.height, mask.width) != (image.height, image.width):
        raise FormatError(
            f"mask {mask.height}x{mask.width} does not match image {image.height}x{image.width}"
        )
    grid_shape(image, policy.tile_size)


def protected_tiles(variant: Variant, image: ImageTensor, mask: RoiMask, policy: RoiPolicy,
                    full_image: bool = False) -> frozenset:
    if variant is Variant.AES_CTR_FULL and full_image:
        return frozenset(iter_tiles(image, policy.tile_size))
    return select_roi_tiles(mask, policy.tile_size, policy.threshold)


def _apply(variant, master, image, nonce, t, tiles, tile_size, cipher, permute, full_image, decrypt):
    if cipher not in CIPHERS:
        raise ValueError(f"unknown cipher {cipher!r}; expected one of {CIPHERS}")

    if variant is Variant.AES_CTR_FULL:
        key = master[:16]
        if full_image:
            out = aes_ctr_tile(key, nonce, image.to_bytes())
            return ImageTensor.from_bytes(image.height, image.width, image.channels, out)
        # ROI-only baseline: one key, counters laid out by tile position so no
        # two tiles share keystream blocks.
        _, cols = grid_shape(image, tile_size)
        blocks = -(-tile_size * tile_size * image.channels // AES_BLOCK)
        for i, j in sorted(tiles):
            idx = TileIndex(t, i, j)
            data = tile_bytes(image, idx, tile_size)
            image = write_tile(image, idx, tile_size, aes_ctr_tile(key, nonce, data, (i * cols + j) * blocks))
        return image

    if cipher == "none":
        return image
    for i, j in sorted(tiles):
        idx = TileIndex(t, i, j)
        data = tile_bytes(image, idx, tile_size)
        key = derive_tile_key(variant, master, nonce, idx)
        if cipher == "aes-ctr":
            # B1 shares key, nonce prefix and counter start across tiles by construction.
            out = aes_ctr_tile(key, nonce, data)
        elif decrypt:
            out = spd_decrypt_tile(key, data, permute)
        else:
            out = spd_encrypt_tile(key, data, permute)
        image = write_tile(image, idx, tile_size, out)
    return image


def encrypt_frame(variant, master: bytes, image: ImageTensor, mask: RoiMask, t: int, policy: RoiPolicy,
                  seed=None, *, nonce: bytes | None = None, cipher: str = "aes-ctr", permute: bool = True,
                  full_image: bool = False) -> EncryptedFrame:
    """Encrypt the ROI tiles of ``image`` and copy every other tile verbatim.

    The nonce is drawn from ``seed`` unless given explicitly; A2 always uses
    the all-zero nonce. ``cipher="none"`` disables encryption and exists only
    as a leakage positive control. ``full_image`` switches the AES_CTR_FULL
    baseline from ROI-only to whole-image encryption.
    """
    variant = Variant(variant)
    _check_inputs(master, image, mask, policy)
    if variant is Variant.A2:
        nonce = ZERO_NONCE
    elif nonce is None:
        nonce = fresh_nonce(seed)
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    if not 0 <= t < 2**32:
        raise ValueError(f"frame index {t} outside 32-bit unsigned range")
    tiles = protected_tiles(variant, image, mask, policy, full_image)
    cipher_img = _apply(variant, master, image, nonce, t, tiles, policy.tile_size, cipher, permute,
                        full_image, decrypt=False)
    return EncryptedFrame(cipher_img, bytes(nonce), variant, tiles, t)


def decrypt_frame(variant, master: bytes, enc: EncryptedFrame, mask: RoiMask, policy: RoiPolicy, *,
                  cipher: str = "aes-ctr", permute: bool = True, full_image: bool = False) -> ImageTensor:
    """Invert :func:`encrypt_frame`.

    There is no integrity check: a wrong key or nonce silently yields garbage
    in the ROI tiles.
    """
    variant = Variant(variant)
    _check_inputs(master, enc.cipher, mask, policy)
    nonce = ZERO_NONCE if variant is Variant.A2 else enc.nonce
    tiles = protected_tiles(variant, enc.cipher, mask, policy, full_image)
    return _apply(variant, master, enc.cipher, nonce, enc.t, tiles, policy.tile_size, cipher, permute,
                  full_image, decrypt=True)


def tile_locality_probe(variant, master: bytes, image: ImageTensor, mask: RoiMask, policy: RoiPolicy,
                        flip, *, seed=0, **cipher_opts) -> set:
    """Flip one byte of an ROI tile and report which ciphertext tiles change.

    ``flip`` is ``((i, j), offset)`` with ``offset`` indexing the tile's byte
    sequence. Both encryptions use the same nonce.
    """
    variant = Variant(variant)
    (fi, fj), offset = flip
    s = policy.tile_size
    tiles = protected_tiles(variant, image, mask, policy, cipher_opts.get("full_image", False))
    if (fi, fj) not in tiles:
        raise ValueError(f"tile ({fi}, {fj}) is not an ROI tile")
    n = s * s * image.channels
    if not 0 <= offset < n:
        raise ValueError(f"byte offset {offset} outside tile of {n} bytes")

    idx = TileIndex(0, fi, fj)
    data = bytearray(tile_bytes(image, idx, s))
    data[offset] ^= 0xFF
    flipped = write_tile(image, idx, s, bytes(data))

    nonce = fresh_nonce(seed)
    a = encrypt_frame(variant, master, image, mask, 0, policy, nonce=nonce, **cipher_opts).cipher
    b = encrypt_frame(variant, master, flipped, mask, 0, policy, nonce=nonce, **cipher_opts).cipher
    return {
        (i, j)
        for i, j in iter_tiles(image, s)
        if tile_bytes(a, TileIndex(0, i, j), s) != tile_bytes(b, TileIndex(0, i, j), s)
    }
