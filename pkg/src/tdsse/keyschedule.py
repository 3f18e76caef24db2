"""HKDF-HMAC-SHA256 and per-variant tile key derivation.

Nothing in this module accepts an ROI mask: secret state is a function of
the master key, the public nonce and the tile index only.
"""

from __future__ import annotations

import hashlib
import hmac
import struct

from .core import MASTER_KEY_LEN, NONCE_LEN, TILE_KEY_LEN, TileIndex, Variant

HASH_LEN = 32
MAX_EXPAND = 255 * HASH_LEN
ZERO_SALT = bytes(HASH_LEN)
ZERO_NONCE = bytes(NONCE_LEN)
INFO_PREFIX = b"TILE"


def hkdf_extract(salt: bytes | None, ikm: bytes) -> bytes:
    # HMAC zero-pads keys to the block size, so b"", 16 and 32 zero bytes all
    # give the same PRK.
    if not salt:
        salt = ZERO_SALT
    return hmac.new(salt, ikm, hashlib.sha256).digest()


def hkdf_expand(prk: bytes, info: bytes, length: int) -> bytes:
    if not 1 <= length <= MAX_EXPAND:
        raise ValueError(f"HKDF expand length must be in [1, {MAX_EXPAND}], got {length}")
    out = bytearray()
    block = b""
    counter = 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        out += block
        counter += 1
    return bytes(out[:length])


def encode_info(i: int, j: int) -> bytes:
    """``b"TILE" || i (2 bytes BE) || j (2 bytes BE)``."""
    if not (0 <= i < 2**16 and 0 <= j < 2**16):
        raise OverflowError(f"tile index ({i}, {j}) does not fit in 16 bits")
    return INFO_PREFIX + struct.pack(">HH", i, j)


def derive_tile_key(variant: Variant, master: bytes, nonce: bytes, idx: TileIndex) -> bytes:
    """Return the 32-byte key for tile ``idx`` under ``variant``.

    A0 uses the master key verbatim, A1 and B1 share the frame PRK across all
    tiles, A2 binds only the tile coordinates (zero salt), A3 binds both the
    frame nonce and the coordinates.
    """
    variant = Variant(variant)
    if len(master) != MASTER_KEY_LEN:
        raise ValueError(f"master key must be {MASTER_KEY_LEN} bytes, got {len(master)}")
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes, got {len(nonce)}")

    if variant is Variant.A0:
        return bytes(master)
    if variant in (Variant.A1, Variant.B1):
        return hkdf_extract(nonce, master)
    if variant is Variant.A2:
        if nonce != ZERO_NONCE:
            raise ValueError("variant A2 requires the all-zero nonce")
        return hkdf_expand(hkdf_extract(ZERO_SALT, master), encode_info(idx.i, idx.j), TILE_KEY_LEN)
    if variant is Variant.A3:
        return hkdf_expand(hkdf_extract(nonce, master), encode_info(idx.i, idx.j), TILE_KEY_LEN)
    raise ValueError(f"variant {variant.value} has no per-tile key derivation")
