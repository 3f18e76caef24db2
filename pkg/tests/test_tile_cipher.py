import numpy as np
import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from hypothesis import given, settings
from hypothesis import strategies as st

from tdsse.tile_cipher import (
    _spd_forward,
    _spd_inverse,
    aes_ctr_tile,
    ctr_initial_block,
    perm_index,
    prf_expand,
    spd_decrypt_tile,
    spd_encrypt_tile,
)

KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f")
NONCE = bytes.fromhex("a0a1a2a3a4a5a6a7a8a9aaabacadaeaf")


def aes_ecb(key, block):
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def test_fips197_anchor_for_ecb_oracle():
    key = bytes(range(16))
    pt = bytes.fromhex("00112233445566778899aabbccddeeff")
    assert aes_ecb(key, pt).hex() == "69c4e0d86a7b0430d8cdb78070b4c55a"


def test_keystream_matches_ecb_on_counter_blocks():
    out = aes_ctr_tile(KEY, NONCE, bytes(32))
    b0 = aes_ecb(KEY[:16], NONCE[:8] + (0).to_bytes(8, "big"))
    b1 = aes_ecb(KEY[:16], NONCE[:8] + (1).to_bytes(8, "big"))
    assert out == b0 + b1


def test_sp800_38a_ctr_vector():
    key = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
    nonce = bytes.fromhex("f0f1f2f3f4f5f6f7")
    pt = bytes.fromhex("6bc1bee22e409f96e93d7e117393172a")
    ct = aes_ctr_tile(key, nonce, pt, counter_start=0xF8F9FAFBFCFDFEFF)
    assert ct.hex() == "874d6191b620e3261bef6864990db6ce"


def test_counter_block_layout():
    assert ctr_initial_block(NONCE) == NONCE[:8] + bytes(8)
    assert ctr_initial_block(NONCE, 5)[-1] == 5


def test_ctr_involution_and_zero_input(rng):
    data = rng.integers(0, 256, 12288, dtype=np.uint8).tobytes()
    assert aes_ctr_tile(KEY, NONCE, aes_ctr_tile(KEY, NONCE, data)) == data
    zero = aes_ctr_tile(KEY, NONCE, bytes(48))
    assert zero == b"".join(aes_ecb(KEY[:16], NONCE[:8] + b.to_bytes(8, "big")) for b in range(3))


def test_ctr_key_truncated_to_128_bits():
    other = KEY[:16] + bytes(16)
    assert aes_ctr_tile(KEY, NONCE, bytes(16)) == aes_ctr_tile(other, NONCE, bytes(16))


def test_ctr_rejects_short_key_and_wrap():
    with pytest.raises(ValueError):
        aes_ctr_tile(KEY[:8], NONCE, b"x")
    with pytest.raises(ValueError):
        aes_ctr_tile(KEY, NONCE, bytes(32), counter_start=2**64 - 1)


def test_prf_expand_matches_hkdf_oracle():
    for label in (1, 2):
        ref = HKDF(hashes.SHA256(), 100, None, b"SPD").derive(KEY + bytes([label]))
        assert prf_expand(KEY, label, 100) == ref
    assert prf_expand(KEY, 1, 64) != prf_expand(KEY, 2, 64)


def test_prf_expand_chunked_prefix_property():
    long = prf_expand(KEY, 1, 3 * 8160 + 7)
    assert len(long) == 3 * 8160 + 7
    assert long[:8160] == prf_expand(KEY, 1, 8160)
    assert long[:9000] == prf_expand(KEY, 1, 9000)
    assert prf_expand(KEY, 1, 50) == prf_expand(KEY, 1, 50)


def test_prf_expand_bad_args():
    with pytest.raises(ValueError):
        prf_expand(KEY, 1, 0)
    with pytest.raises(ValueError):
        prf_expand(KEY, 256, 4)


def test_perm_examples():
    assert perm_index(b"", 1) == [0]
    assert perm_index(bytes(16), 3) == [1, 2, 0]


def test_perm_short_keystream():
    with pytest.raises(ValueError):
        perm_index(bytes(15), 3)


def fisher_yates_oracle(ks, n):
    # independent transcription: read draws with int.from_bytes
    p = list(range(n))
    off = 0
    k = n - 1
    while k >= 1:
        w = int.from_bytes(ks[off:off + 8], "big")
        off += 8
        j = w % (k + 1)
        p[j], p[k] = p[k], p[j]
        k -= 1
    return p


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 64), st.binary(min_size=8 * 63, max_size=8 * 63))
def test_perm_is_bijection_and_matches_oracle(n, ks):
    p = perm_index(ks, n)
    assert sorted(p) == list(range(n))
    assert p == fisher_yates_oracle(ks, n)


def test_spd_zero_keystream_examples():
    x = np.array([1, 2, 3], dtype=np.uint8)
    zero = bytes(3)
    z = _spd_forward(x, zero, zero, None)
    assert z.tolist() == [1, 3, 0]
    assert _spd_inverse(z, zero, zero, None).tolist() == [1, 2, 3]


def test_spd_zero_keystream_with_permutation():
    x = np.array([1, 2, 3], dtype=np.uint8)
    zero = bytes(16)
    perm = perm_index(zero, 3)
    # y = x[[1, 2, 0]] = [2, 3, 1]; prefix-XOR = [2, 1, 0]
    z = _spd_forward(x, zero, zero, perm)
    assert z.tolist() == [2, 1, 0]
    assert _spd_inverse(z, zero, zero, perm).tolist() == [1, 2, 3]


def test_spd_matches_loop_oracle(rng):
    x = rng.integers(0, 256, 64, dtype=np.uint8).tobytes()
    s1 = prf_expand(KEY, 1, 8 * 63)
    s2 = prf_expand(KEY, 2, 64)
    perm = fisher_yates_oracle(s1, 64)
    y = [x[k] ^ s1[k] for k in range(64)]
    y = [y[perm[k]] for k in range(64)]
    z = []
    for k in range(64):
        z.append(y[k] ^ s2[k] ^ (z[k - 1] if k else 0))
    assert spd_encrypt_tile(KEY, x) == bytes(z)


@pytest.mark.parametrize("permute", [True, False])
def test_spd_round_trip_many(permute):
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        x = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        key = rng.integers(0, 256, 32, dtype=np.uint8).tobytes()
        assert spd_decrypt_tile(key, spd_encrypt_tile(key, x, permute), permute) == x


def test_spd_round_trip_full_tile(rng):
    x = rng.integers(0, 256, 4096, dtype=np.uint8).tobytes()
    assert spd_decrypt_tile(KEY, spd_encrypt_tile(KEY, x)) == x


@pytest.mark.parametrize("permute", [False, True])
def test_spd_flip_diffuses_from_permuted_position(permute):
    rng = np.random.default_rng(3)
    n = 96
    x = rng.integers(0, 256, n, dtype=np.uint8)
    base = np.frombuffer(spd_encrypt_tile(KEY, x.tobytes(), permute), dtype=np.uint8)
    s1 = prf_expand(KEY, 1, 8 * (n - 1))
    perm = perm_index(s1, n) if permute else list(range(n))
    inverse = np.argsort(perm)
    for p in range(n):
        x2 = x.copy()
        x2[p] ^= 0x5A
        out = np.frombuffer(spd_encrypt_tile(KEY, x2.tobytes(), permute), dtype=np.uint8)
        changed = np.flatnonzero(out != base)
        start = int(inverse[p])
        # the change travels through the diffusion chain unchanged
        assert changed.tolist() == list(range(start, n))


def test_spd_length_preserving_and_rejects_empty():
    assert len(spd_encrypt_tile(KEY, b"\x00" * 17)) == 17
    with pytest.raises(ValueError):
        spd_encrypt_tile(KEY, b"")
    with pytest.raises(ValueError):
        spd_decrypt_tile(KEY, b"")


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=1, max_size=300), st.booleans())
def test_spd_round_trip_property(data, permute):
    assert spd_decrypt_tile(KEY, spd_encrypt_tile(KEY, data, permute), permute) == data


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=0, max_size=300), st.integers(0, 1000))
def test_ctr_involution_property(data, start):
    assert aes_ctr_tile(KEY, NONCE, aes_ctr_tile(KEY, NONCE, data, start), start) == data
