"""Binary PGM/PPM (P5/P6, maxval 255) reading and writing, plus synthetic imagery."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .core import FormatError, ImageTensor, RoiMask

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _parse_header(raw: bytes, path):
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if not m:
            raise FormatError(f"{path}: truncated netpbm header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported format {magic[:8]!r} (need binary P5/P6)")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed netpbm header") from None
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} not supported (need 255)")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header")
    return (1 if magic == b"P5" else 3), width, height, pos + 1


def load_image(path) -> ImageTensor:
    raw = Path(path).read_bytes()
    channels, width, height, offset = _parse_header(raw, path)
    body = raw[offset:]
    need = width * height * channels
    if len(body) < need:
        raise FormatError(f"{path}: truncated pixel data ({len(body)} of {need} bytes)")
    return ImageTensor.from_bytes(height, width, channels, body[:need])


def save_image(image: ImageTensor, path) -> None:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    Path(path).write_bytes(header + image.to_bytes())


def save_mask(mask: RoiMask, path) -> None:
    """Masks are stored as 8-bit PGM with ROI pixels at 255."""
    save_image(ImageTensor((mask.bits * 255).astype(np.uint8)), path)


def load_mask(path) -> RoiMask:
    img = load_image(path)
    if img.channels != 1:
        raise FormatError(f"{path}: mask must be a single-channel PGM")
    return RoiMask((img.data[:, :, 0] >= 128).astype(np.uint8))


def synth_images(n: int, height: int = 256, width: int = 256, channels: int = 3, seed: int = 0):
    """Deterministic synthetic scenes: linear gradient, 2-6 rectangles, mild noise."""
    if n < 1:
        raise ValueError("n must be at least 1")
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        theta = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(theta) * xx / width + np.sin(theta) * yy / height
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
        lo = rng.uniform(0, 40, channels)
        hi = rng.uniform(215, 255, channels)
        img = lo + ramp[:, :, None] * (hi - lo)
        for _ in range(int(rng.integers(2, 7))):
            h = int(rng.integers(height // 10, height // 2 + 1))
            w = int(rng.integers(width // 10, width // 2 + 1))
            y0 = int(rng.integers(0, height - h + 1))
            x0 = int(rng.integers(0, width - w + 1))
            alpha = rng.uniform(0.6, 1.0)
            color = rng.uniform(0, 255, channels)
            region = img[y0:y0 + h, x0:x0 + w]
            img[y0:y0 + h, x0:x0 + w] = (1 - alpha) * region + alpha * color
        img += rng.normal(0, 3.0, img.shape)
        out.append(ImageTensor(np.clip(np.rint(img), 0, 255).astype(np.uint8)))
    return out
