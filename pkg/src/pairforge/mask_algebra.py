"""Pure binary-mask operations the pair filters are built from.

All functions are stateless and operate on uint8 {0,1} masks of shape
(height, width). Counts are returned as Python ints (arbitrary
precision), so large rasters cannot overflow.
"""

from __future__ import annotations

import numpy as np

from .core import ImageBuffer


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")


def non_overlap_count(mask_a: np.ndarray, mask_b: np.ndarray) -> int:
    """Number of pixels where the two masks disagree (symmetric difference)."""
    _check_same_shape(mask_a, mask_b)
    return int(np.count_nonzero(mask_a != mask_b))


def area(mask: np.ndarray) -> int:
    """Number of 1-pixels."""
    return int(np.count_nonzero(mask))


def complement(mask: np.ndarray) -> np.ndarray:
    """Pointwise 1 - mask."""
    out = (1 - mask).astype(np.uint8)
    out.setflags(write=False)
    return out


def intersection_area(mask_a: np.ndarray, mask_b: np.ndarray) -> int:
    """Number of pixels set in both masks."""
    _check_same_shape(mask_a, mask_b)
    return int(np.count_nonzero(np.logical_and(mask_a, mask_b)))


def pixel_diff(img_a: ImageBuffer, img_b: ImageBuffer) -> np.ndarray:
    """Per-pixel absolute intensity difference, max over channels (L-inf).

    Color changes from makeup are often concentrated in one channel, so
    the max keeps single-channel shifts undiluted. Result is int16,
    shape (height, width).
    """
    if img_a.pixels.shape != img_b.pixels.shape:
        raise ValueError(
            f"image shape mismatch: {img_a.pixels.shape} vs {img_b.pixels.shape}"
        )
    diff = np.abs(img_a.pixels.astype(np.int16) - img_b.pixels.astype(np.int16))
    return diff.max(axis=2)


def thresholded_diff_count(
    img_a: ImageBuffer, img_b: ImageBuffer, mask: np.ndarray, intensity_thresh: float
) -> int:
    """Count mask pixels whose absolute intensity difference exceeds the threshold.

    The comparison is strict (diff > intensity_thresh), so a difference
    exactly at the threshold does not count.
    """
    if mask.shape != img_a.pixels.shape[:2]:
        raise ValueError(
            f"mask dimension mismatch: {mask.shape} vs image {img_a.pixels.shape[:2]}"
        )
    diff = pixel_diff(img_a, img_b)
    return int(np.count_nonzero((mask != 0) & (diff > intensity_thresh)))
