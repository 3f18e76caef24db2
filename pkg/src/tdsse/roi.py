"""Synthetic ROI masks and ROI tile selection."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import FormatError, RoiMask

COVERAGE_BAND = 0.05
MAX_ATTEMPTS = 20
MAX_RECTS = 4


@dataclass(frozen=True)
class RoiPolicy:
    tile_size: int = 64
    threshold: float = 0.5
    target_coverage: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.tile_size <= 0:
            raise ValueError("tile_size must be positive")
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if not 0 < self.target_coverage < 1:
            raise ValueError(f"target coverage must be in (0, 1), got {self.target_coverage}")


def _rect_union(height, width, centers, halves, scale):
    bits = np.zeros((height, width), dtype=np.uint8)
    for (cy, cx), (hy, hx) in zip(centers, halves):
        y0 = int(max(0, np.floor(cy - hy * scale)))
        y1 = int(min(height, np.ceil(cy + hy * scale)))
        x0 = int(max(0, np.floor(cx - hx * scale)))
        x1 = int(min(width, np.ceil(cx + hx * scale)))
        bits[y0:y1, x0:x1] = 1
    return bits


def _candidate(height, width, target, rng):
    k = int(rng.integers(1, MAX_RECTS + 1))
    shares = rng.dirichlet(np.ones(k)) * target * height * width
    centers = np.column_stack([rng.uniform(0, height, k), rng.uniform(0, width, k)])
    aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0), k))
    halves = np.column_stack([np.sqrt(shares * aspect), np.sqrt(shares / aspect)]) / 2

    # Overlap and clipping shrink the union; rescale the rectangles toward the
    # target by bisection on a common scale factor.
    lo, hi = 0.0, 1.0
    while _rect_union(height, width, centers, halves, hi).mean() < target and hi < 1e4:
        hi *= 2
    best = _rect_union(height, width, centers, halves, hi)
    for _ in range(30):
        mid = (lo + hi) / 2
        bits = _rect_union(height, width, centers, halves, mid)
        cov = bits.mean()
        if abs(cov - target) < abs(best.mean() - target):
            best = bits
        if cov < target:
            lo = mid
        else:
            hi = mid
    return best


def generate_mask(height: int, width: int, policy: RoiPolicy) -> RoiMask:
    """Union of 1-4 axis-aligned rectangles hitting ``policy.target_coverage``.

    Deterministic in ``policy.seed``. Up to 20 candidates are drawn; the first
    within +/-5 points of the target is returned, otherwise the closest one.
    """
    s = policy.tile_size
    if height <= 0 or width <= 0 or height % s or width % s:
        raise FormatError(f"mask dimensions {height}x{width} must be positive multiples of {s}")
    target = policy.target_coverage
    rng = np.random.default_rng(policy.seed)
    best = None
    for _ in range(MAX_ATTEMPTS):
        bits = _candidate(height, width, target, rng)
        err = abs(bits.mean() - target)
        if best is None or err < best[0]:
            best = (err, bits)
        if err <= COVERAGE_BAND:
            break
    return RoiMask(best[1])


def tile_coverage(mask: RoiMask, tile_size: int) -> np.ndarray:
    """Per-tile fraction of ROI pixels, shape ``(rows, cols)``."""
    s = tile_size
    if s <= 0 or mask.height % s or mask.width % s:
        raise FormatError(f"tile size {s} does not divide mask {mask.height}x{mask.width}")
    rows, cols = mask.height // s, mask.width // s
    counts = mask.bits.reshape(rows, s, cols, s).sum(axis=(1, 3))
    return counts / float(s * s)


def select_roi_tiles(mask: RoiMask, tile_size: int, threshold: float) -> frozenset[tuple[int, int]]:
    s = tile_size
    if s <= 0 or mask.height % s or mask.width % s:
        raise FormatError(f"tile size {s} does not divide mask {mask.height}x{mask.width}")
    rows, cols = mask.height // s, mask.width // s
    counts = mask.bits.reshape(rows, s, cols, s).sum(axis=(1, 3), dtype=np.int64)
    return frozenset((int(i), int(j)) for i, j in zip(*np.nonzero(counts >= threshold * s * s)))


def force_tiles(mask: RoiMask, tiles, tile_size: int) -> RoiMask:
    """Return ``mask`` with every tile in ``tiles`` fully set."""
    bits = mask.bits.copy()
    s = tile_size
    for i, j in tiles:
        bits[i * s:(i + 1) * s, j * s:(j + 1) * s] = 1
    return RoiMask(bits)


def _jaccard(a, b) -> float:
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def mismatch_mask(mask: RoiMask, seed: int, tile_size: int = 64, threshold: float = 0.5) -> RoiMask:
    """A freshly seeded mask at the same coverage whose ROI tile set differs from ``mask``'s."""
    target = min(max(mask.coverage, 0.01), 0.99)
    true_tiles = select_roi_tiles(mask, tile_size, threshold)
    policy = RoiPolicy(tile_size=tile_size, threshold=threshold, target_coverage=target, seed=seed)
    candidate = None
    for attempt in range(50):
        candidate = generate_mask(mask.height, mask.width, replace(policy, seed=seed + attempt * 7919))
        if _jaccard(true_tiles, select_roi_tiles(candidate, tile_size, threshold)) < 1.0:
            return candidate
    # only reachable on grids too small to place the ROI anywhere else
    return candidate
