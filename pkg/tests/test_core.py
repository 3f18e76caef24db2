import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdsse.core import (
    FormatError,
    ImageTensor,
    RoiMask,
    TileIndex,
    Variant,
    center_crop,
    iter_tiles,
    tile_bytes,
    write_tile,
)

from conftest import random_image


def ramp(h, w, c):
    return ImageTensor((np.arange(h * w * c) % 251).astype(np.uint8).reshape(h, w, c))


def coordinate_oracle(image, i, j, s):
    out = bytearray()
    for r in range(i * s, (i + 1) * s):
        for col in range(j * s, (j + 1) * s):
            for ch in range(image.channels):
                out.append(int(image.data[r, col, ch]))
    return bytes(out)


def test_single_tile_image_is_whole_buffer(rng):
    img = random_image(rng, 64, 64, 1)
    assert tile_bytes(img, TileIndex(0, 0, 0), 64) == img.to_bytes()


def test_zero_image_tile():
    img = ImageTensor.zeros(128, 128, 1)
    assert tile_bytes(img, TileIndex(3, 1, 1), 64) == bytes(4096)


@pytest.mark.parametrize("i,j", [(0, 1), (1, 0), (1, 1)])
def test_ramp_tile_matches_coordinate_loop(i, j):
    img = ramp(128, 128, 3)
    assert tile_bytes(img, TileIndex(0, i, j), 64) == coordinate_oracle(img, i, j, 64)


def test_out_of_range_tile():
    img = ImageTensor.zeros(128, 128, 1)
    with pytest.raises(IndexError):
        tile_bytes(img, TileIndex(0, 2, 0), 64)


def test_write_read_round_trip(rng):
    img = ImageTensor.zeros(128, 128, 3)
    payload = rng.integers(0, 256, 64 * 64 * 3, dtype=np.uint8).tobytes()
    out = write_tile(img, TileIndex(0, 1, 0), 64, payload)
    assert tile_bytes(out, TileIndex(0, 1, 0), 64) == payload


def test_write_is_local(rng):
    img = random_image(rng)
    out = write_tile(img, TileIndex(0, 0, 0), 64, bytes(64 * 64 * 3))
    assert np.array_equal(out.data[64:, :], img.data[64:, :])
    assert np.array_equal(out.data[:, 64:], img.data[:, 64:])
    assert not out.data[:64, :64].any()


def test_write_length_mismatch():
    with pytest.raises(FormatError):
        write_tile(ImageTensor.zeros(64, 64, 1), TileIndex(0, 0, 0), 64, b"\x00" * 10)


def test_reassembly_from_all_tiles(rng):
    src = random_image(rng, 192, 128, 3)
    out = ImageTensor.zeros(192, 128, 3)
    for i, j in iter_tiles(src, 64):
        idx = TileIndex(0, i, j)
        out = write_tile(out, idx, 64, tile_bytes(src, idx, 64))
    assert out == src


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3]), st.integers(0, 2**32 - 1))
def test_write_of_own_tile_is_identity(rows, cols, c, seed):
    img = random_image(np.random.default_rng(seed), rows * 16, cols * 16, c)
    for i, j in iter_tiles(img, 16):
        idx = TileIndex(0, i, j)
        assert write_tile(img, idx, 16, tile_bytes(img, idx, 16)) == img


def test_values_serialize_identically(rng):
    a = random_image(rng, 64, 64, 3)
    b = ImageTensor(a.data.copy())
    assert a == b and a.to_bytes() == b.to_bytes() and hash(a) == hash(b)


def test_image_is_read_only(rng):
    img = random_image(rng, 64, 64, 1)
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1


def test_bad_images_rejected():
    with pytest.raises(FormatError):
        ImageTensor(np.zeros((4, 4, 2), dtype=np.uint8))
    with pytest.raises(FormatError):
        ImageTensor(np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(FormatError):
        RoiMask(np.full((4, 4), 2))


def test_center_crop():
    img = ramp(100, 130, 1)
    out = center_crop(img, 64)
    assert (out.height, out.width) == (64, 128)
    assert np.array_equal(out.data, img.data[18:82, 1:129])


def test_tile_index_limits():
    with pytest.raises(ValueError):
        TileIndex(2**32, 0, 0)
    with pytest.raises(ValueError):
        TileIndex(0, -1, 0)


def test_variant_parse():
    assert Variant.parse("a3") is Variant.A3
    assert Variant.parse("AES-CTR") is Variant.AES_CTR_FULL
    with pytest.raises(ValueError, match="A0, A1"):
        Variant.parse("A9")
    for v in Variant:
        assert Variant.from_code(v.code) is v
