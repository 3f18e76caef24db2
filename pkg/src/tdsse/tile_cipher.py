"""Tile-local encryption primitives.

Two instantiations are provided: AES-128 in CTR mode (the primary one) and a
stream-permute-diffuse (SPD) primitive used as an ablation. Neither carries
any state across calls, so tile boundaries are hard boundaries.
"""

from __future__ import annotations

import struct

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .keyschedule import MAX_EXPAND, hkdf_expand, hkdf_extract

AES_BLOCK = 16
SPD_INFO = b"SPD"
LABEL_CONFUSION = 0x01
LABEL_DIFFUSION = 0x02


def ctr_initial_block(nonce: bytes, counter_start: int = 0) -> bytes:
    """Counter block ``nonce[:8] || BE64(counter)``."""
    if len(nonce) < 8:
        raise ValueError("nonce must supply at least 8 bytes for the CTR prefix")
    if not 0 <= counter_start < 2**64:
        raise ValueError("counter must fit in 64 bits")
    return nonce[:8] + struct.pack(">Q", counter_start)


def aes_ctr_tile(key: bytes, nonce: bytes, data: bytes, counter_start: int = 0) -> bytes:
    """XOR ``data`` with the AES-128-CTR keystream; an involution.

    The AES key is the first 16 bytes of ``key``. Keystream block ``b`` is
    ``AES(key128, nonce[:8] || BE64(counter_start + b))``.
    """
    if len(key) < 16:
        raise ValueError("tile key must be at least 16 bytes")
    if len(data) > 2**32:
        raise ValueError("CTR input limited to 2**32 bytes")
    nblocks = -(-len(data) // AES_BLOCK)
    if counter_start + nblocks > 2**64:
        # the library would carry into the nonce prefix
        raise ValueError("CTR counter would wrap")
    cipher = Cipher(algorithms.AES(bytes(key[:16])), modes.CTR(ctr_initial_block(nonce, counter_start)))
    enc = cipher.encryptor()
    return enc.update(bytes(data)) + enc.finalize()


def prf_expand(key: bytes, label: int, n: int) -> bytes:
    """Deterministic ``n``-byte stream keyed by ``key || label``.

    HKDF-Expand with info ``b"SPD"`` for the first 8160 bytes; further chunks
    append a 32-bit big-endian chunk counter to the info, so shorter outputs
    are always prefixes of longer ones.
    """
    if n < 1:
        raise ValueError("PRF output length must be positive")
    if not 0 <= label <= 0xFF:
        raise ValueError("label must be a single byte")
    prk = hkdf_extract(None, bytes(key) + bytes([label]))
    chunks = []
    remaining = n
    c = 0
    while remaining > 0:
        info = SPD_INFO if c == 0 else SPD_INFO + struct.pack(">I", c)
        take = min(remaining, MAX_EXPAND)
        chunks.append(hkdf_expand(prk, info, take))
        remaining -= take
        c += 1
    return b"".join(chunks)


def perm_index(keystream: bytes, n: int) -> list[int]:
    """Fisher-Yates permutation of ``range(n)`` driven by ``keystream``.

    Draws are 8-byte big-endian words read from offset 0; for k = n-1 .. 1 the
    swap partner is ``word mod (k + 1)``.
    """
    if n < 1:
        raise ValueError("permutation length must be positive")
    need = 8 * (n - 1)
    if len(keystream) < need:
        raise ValueError(f"keystream too short: need {need} bytes for n={n}, got {len(keystream)}")
    words = struct.unpack(f">{n - 1}Q", keystream[:need]) if n > 1 else ()
    perm = list(range(n))
    for step, k in enumerate(range(n - 1, 0, -1)):
        j = words[step] % (k + 1)
        perm[k], perm[j] = perm[j], perm[k]
    return perm


def _spd_streams(key: bytes, n: int, permute: bool) -> tuple[bytes, bytes]:
    s1_len = max(n, 8 * (n - 1)) if permute else n
    return prf_expand(key, LABEL_CONFUSION, s1_len), prf_expand(key, LABEL_DIFFUSION, n)


def _spd_forward(x: np.ndarray, s1: bytes, s2: bytes, perm: list[int] | None) -> np.ndarray:
    n = x.size
    y = x ^ np.frombuffer(s1[:n], dtype=np.uint8)
    if perm is not None:
        y = y[np.asarray(perm)]
    return np.bitwise_xor.accumulate(y ^ np.frombuffer(s2[:n], dtype=np.uint8))


def _spd_inverse(z: np.ndarray, s1: bytes, s2: bytes, perm: list[int] | None) -> np.ndarray:
    n = z.size
    prev = np.concatenate(([0], z[:-1])).astype(np.uint8)
    y = z ^ prev ^ np.frombuffer(s2[:n], dtype=np.uint8)
    if perm is not None:
        unperm = np.empty_like(y)
        unperm[np.asarray(perm)] = y
        y = unperm
    return y ^ np.frombuffer(s1[:n], dtype=np.uint8)


def spd_encrypt_tile(key: bytes, data: bytes, permute: bool = True) -> bytes:
    if not data:
        raise ValueError("tile must be non-empty")
    n = len(data)
    s1, s2 = _spd_streams(key, n, permute)
    perm = perm_index(s1, n) if permute else None
    return _spd_forward(np.frombuffer(data, dtype=np.uint8), s1, s2, perm).tobytes()


def spd_decrypt_tile(key: bytes, data: bytes, permute: bool = True) -> bytes:
    if not data:
        raise ValueError("tile must be non-empty")
    n = len(data)
    s1, s2 = _spd_streams(key, n, permute)
    perm = perm_index(s1, n) if permute else None
    return _spd_inverse(np.frombuffer(data, dtype=np.uint8), s1, s2, perm).tobytes()
