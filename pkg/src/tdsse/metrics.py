"""PSNR / SSIM leakage indicators on the 16x16 grayscale proxy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FormatError

PSNR_CAP = 99.0
PEAK = 1.0
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2


@dataclass(frozen=True)
class MetricPair:
    psnr_db: float
    ssim: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise FormatError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB with peak 1.0; exact recovery (and anything above) reports 99.00."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(PEAK * PEAK / mse))


def ssim(a, b) -> float:
    """Single-window (global) SSIM over the whole tile, unbiased moments."""
    a, b = _pair(a, b)
    n = a.size
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    ddof = n - 1 if n > 1 else 1
    var_a = float(np.sum(da * da)) / ddof
    var_b = float(np.sum(db * db)) / ddof
    cov = float(np.sum(da * db)) / ddof
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return float(num / den)


def score(a, b) -> MetricPair:
    return MetricPair(psnr(a, b), ssim(a, b))


def mean_std(values) -> tuple[float, float]:
    x = np.asarray(list(values), dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot aggregate an empty list")
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return float(np.mean(x)), std


def aggregate(values) -> dict[str, tuple[float, float]]:
    """Mean and sample std (n-1) for each metric; std is 0 for a single value."""
    values = list(values)
    if not values:
        raise ValueError("cannot aggregate an empty list")
    return {
        "psnr": mean_std(v.psnr_db for v in values),
        "ssim": mean_std(v.ssim for v in values),
    }
