import zlib

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from tdsse.core import FormatError, ImageTensor, RoiMask, TileIndex, Variant, iter_tiles, tile_bytes
from tdsse.keyschedule import ZERO_NONCE, derive_tile_key
from tdsse.pipeline import (
    EncryptedFrame,
    decrypt_frame,
    encrypt_frame,
    load_frame,
    save_frame,
    tile_locality_probe,
)
from tdsse.roi import RoiPolicy, generate_mask, select_roi_tiles
from tdsse.tile_cipher import aes_ctr_tile

from conftest import random_image

MASTER = bytes(range(32))
POLICY = RoiPolicy(tile_size=64)
ALL = list(Variant)


def full_mask(h=128, w=128):
    return RoiMask(np.ones((h, w), dtype=np.uint8))


def empty_mask(h=128, w=128):
    return RoiMask(np.zeros((h, w), dtype=np.uint8))


def corner_mask(h=128, w=128):
    bits = np.zeros((h, w), dtype=np.uint8)
    bits[:64, :64] = 1
    return RoiMask(bits)


@pytest.mark.parametrize("variant", ALL)
def test_empty_roi_is_identity(variant, rng):
    img = random_image(rng)
    enc = encrypt_frame(variant, MASTER, img, empty_mask(), 0, POLICY, seed=1)
    assert enc.cipher == img and enc.roi_tiles == frozenset()


@pytest.mark.parametrize("variant", ALL)
@pytest.mark.parametrize("cipher", ["aes-ctr", "spd"])
def test_round_trip(variant, cipher, rng):
    for k in range(5):
        img = random_image(rng)
        mask = generate_mask(128, 128, RoiPolicy(target_coverage=0.4, seed=k))
        enc = encrypt_frame(variant, MASTER, img, mask, k, POLICY, seed=k, cipher=cipher)
        assert decrypt_frame(variant, MASTER, enc, mask, POLICY, cipher=cipher) == img


def test_round_trip_full_image_baseline(rng):
    img = random_image(rng)
    enc = encrypt_frame(Variant.AES_CTR_FULL, MASTER, img, empty_mask(), 0, POLICY, seed=2, full_image=True)
    assert len(enc.roi_tiles) == 4
    assert enc.cipher.to_bytes() == aes_ctr_tile(MASTER[:16], enc.nonce, img.to_bytes())
    assert decrypt_frame(Variant.AES_CTR_FULL, MASTER, enc, empty_mask(), POLICY, full_image=True) == img


def test_roi_only_baseline_uses_disjoint_counters():
    img = ImageTensor.zeros(128, 128, 3)
    enc = encrypt_frame(Variant.AES_CTR_FULL, MASTER, img, full_mask(), 0, POLICY, seed=3)
    tiles = [tile_bytes(enc.cipher, TileIndex(0, i, j), 64) for i, j in iter_tiles(img, 64)]
    assert len(set(tiles)) == 4
    assert tiles[1] == aes_ctr_tile(MASTER[:16], enc.nonce, bytes(12288), 768)


def test_full_coverage_a3_changes_every_tile():
    rng = np.random.default_rng(11)
    for k in range(100):
        img = random_image(rng, 128, 128, 1)
        enc = encrypt_frame(Variant.A3, MASTER, img, full_mask(), k, POLICY, seed=k)
        for i, j in iter_tiles(img, 64):
            idx = TileIndex(0, i, j)
            assert tile_bytes(enc.cipher, idx, 64) != tile_bytes(img, idx, 64)


@pytest.mark.parametrize("variant", ALL)
def test_non_roi_passthrough(variant, rng):
    img = random_image(rng)
    enc = encrypt_frame(variant, MASTER, img, corner_mask(), 0, POLICY, seed=4)
    assert enc.roi_tiles == {(0, 0)}
    assert np.array_equal(enc.cipher.data[64:], img.data[64:])
    assert np.array_equal(enc.cipher.data[:, 64:], img.data[:, 64:])
    assert not np.array_equal(enc.cipher.data[:64, :64], img.data[:64, :64])


def test_a3_tile_matches_manual_composition(rng):
    img = random_image(rng)
    enc = encrypt_frame(Variant.A3, MASTER, img, corner_mask(), 5, POLICY, seed=5)
    idx = TileIndex(5, 0, 0)
    key = derive_tile_key(Variant.A3, MASTER, enc.nonce, idx)
    assert tile_bytes(enc.cipher, idx, 64) == aes_ctr_tile(key, enc.nonce, tile_bytes(img, idx, 64))


def test_wrong_key_garbles_roi_only(rng):
    img = random_image(rng)
    enc = encrypt_frame(Variant.A3, MASTER, img, corner_mask(), 0, POLICY, seed=6)
    wrong = decrypt_frame(Variant.A3, bytes(32), enc, corner_mask(), POLICY)
    roi_diff = np.mean(wrong.data[:64, :64] != img.data[:64, :64])
    assert roi_diff >= 0.4
    assert np.array_equal(wrong.data[64:], img.data[64:])


def test_a2_uses_and_ignores_nonce(rng):
    img = random_image(rng)
    enc = encrypt_frame(Variant.A2, MASTER, img, corner_mask(), 3, POLICY, seed=7, nonce=b"\x01" * 16)
    assert enc.nonce == ZERO_NONCE
    tampered = EncryptedFrame(enc.cipher, b"\x55" * 16, enc.variant, enc.roi_tiles, enc.t)
    assert decrypt_frame(Variant.A2, MASTER, tampered, corner_mask(), POLICY) == img


def test_nonce_freshness():
    img = ImageTensor.zeros(64, 64, 1)
    mask = RoiMask(np.ones((64, 64), dtype=np.uint8))
    nonces = {encrypt_frame(Variant.A3, MASTER, img, mask, 0, POLICY).nonce for _ in range(1000)}
    assert len(nonces) == 1000


def test_seeded_nonces_are_reproducible():
    img = ImageTensor.zeros(64, 64, 1)
    mask = RoiMask(np.ones((64, 64), dtype=np.uint8))
    a = encrypt_frame(Variant.A3, MASTER, img, mask, 0, POLICY, seed=99)
    b = encrypt_frame(Variant.A3, MASTER, img, mask, 0, POLICY, seed=99)
    assert a == b


@pytest.mark.parametrize("cipher", ["aes-ctr", "spd"])
def test_fixed_nonce_determinism(cipher, rng):
    img = random_image(rng)
    n = bytes(range(16))
    a = encrypt_frame(Variant.A3, MASTER, img, full_mask(), 2, POLICY, nonce=n, cipher=cipher)
    b = encrypt_frame(Variant.A3, MASTER, img, full_mask(), 2, POLICY, nonce=n, cipher=cipher)
    assert a.cipher.to_bytes() == b.cipher.to_bytes()


def test_b1_reuses_keystream():
    img = ImageTensor.zeros(128, 128, 3)
    enc = encrypt_frame(Variant.B1, MASTER, img, full_mask(), 0, POLICY, seed=8)
    tiles = {tile_bytes(enc.cipher, TileIndex(0, i, j), 64) for i, j in iter_tiles(img, 64)}
    assert len(tiles) == 1


def test_dimension_mismatch():
    with pytest.raises(FormatError):
        encrypt_frame(Variant.A3, MASTER, ImageTensor.zeros(128, 128, 3), full_mask(64, 128), 0, POLICY)
    with pytest.raises(FormatError):
        encrypt_frame(Variant.A3, MASTER, ImageTensor.zeros(100, 128, 3), full_mask(100, 128), 0, POLICY)


def test_unknown_cipher_rejected():
    with pytest.raises(ValueError):
        encrypt_frame(Variant.A3, MASTER, ImageTensor.zeros(64, 64, 1), full_mask(64, 64), 0, POLICY, cipher="rot13")


def test_none_cipher_is_identity(rng):
    img = random_image(rng)
    assert encrypt_frame(Variant.A3, MASTER, img, full_mask(), 0, POLICY, seed=1, cipher="none").cipher == img


@pytest.mark.parametrize("variant", ALL)
@pytest.mark.parametrize("cipher", ["aes-ctr", "spd"])
def test_locality(variant, cipher):
    rng = np.random.default_rng(zlib.crc32(f"{variant.value}-{cipher}".encode()))
    img = random_image(rng)
    mask = full_mask()
    for _ in range(3):
        tile = (int(rng.integers(2)), int(rng.integers(2)))
        off = int(rng.integers(12288))
        changed = tile_locality_probe(variant, MASTER, img, mask, POLICY, (tile, off), seed=1, cipher=cipher)
        assert changed == {tile}


def test_locality_rejects_non_roi(rng):
    with pytest.raises(ValueError):
        tile_locality_probe(Variant.A3, MASTER, random_image(rng), corner_mask(), POLICY, ((1, 1), 0))


def test_container_round_trip(tmp_path, rng):
    img = random_image(rng, 128, 192, 3)
    mask = generate_mask(128, 192, RoiPolicy(seed=2))
    enc = encrypt_frame(Variant.A3, MASTER, img, mask, 77, POLICY, seed=2)
    save_frame(enc, tmp_path / "f.tdse")
    raw = (tmp_path / "f.tdse").read_bytes()
    assert raw[:5] == b"TDSE1" and raw[5] == Variant.A3.code
    assert int.from_bytes(raw[6:10], "big") == 77 and raw[10:26] == enc.nonce
    assert len(raw) == 5 + 1 + 4 + 16 + 9 + 128 * 192 * 3
    back = load_frame(tmp_path / "f.tdse")
    assert back.cipher == enc.cipher and back.nonce == enc.nonce and back.t == 77
    assert decrypt_frame(back.variant, MASTER, back, mask, POLICY) == img


def test_container_errors():
    with pytest.raises(FormatError):
        EncryptedFrame.from_bytes(b"TDSE1")
    enc = encrypt_frame(Variant.A0, MASTER, ImageTensor.zeros(64, 64, 1), full_mask(64, 64), 0, POLICY, seed=0)
    raw = enc.to_bytes()
    with pytest.raises(FormatError):
        EncryptedFrame.from_bytes(b"XXXX1" + raw[5:])
    with pytest.raises(FormatError):
        EncryptedFrame.from_bytes(raw[:-1])


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.sampled_from(ALL), st.integers(0, 2**32 - 1), st.floats(0.05, 0.95), st.sampled_from([1, 3]))
def test_round_trip_property(variant, seed, coverage, channels):
    rng = np.random.default_rng(seed)
    img = random_image(rng, 128, 128, channels)
    mask = generate_mask(128, 128, RoiPolicy(target_coverage=coverage, seed=seed))
    enc = encrypt_frame(variant, MASTER, img, mask, seed % 1000, POLICY, seed=seed)
    assert enc.roi_tiles == select_roi_tiles(mask, 64, 0.5)
    assert decrypt_frame(variant, MASTER, enc, mask, POLICY) == img
