"""The three pair-rejection filters: misalignment, failed makeup, background.

Each filter is a pure function from a pair's resources plus a
FilterConfig to a FilterVerdict. Comparison semantics follow the
statistic direction recorded in ``core.FAIL_DIRECTION``:

* misalignment fails when the worst region's non-overlap statistic is
  strictly greater than its threshold,
* makeup fails when the modified-pixel statistic fails to exceed its
  threshold (equality fails),
* background fails when the inconsistent-pixel statistic is strictly
  greater than its threshold.

The face-level misalignment check runs on the parsed facial-contour
region; the full face mask drives the makeup and background filters.
Both of the latter use the SOURCE face mask for both images so a
generation cannot dodge the comparison by moving the face.

Pass sets are monotone in every threshold. Raising ``face_thresh``,
``eye_thresh``, ``teeth_thresh``, ``bg_thresh`` or ``bg_pixel_thresh``
can only admit more pairs. Raising ``mu_thresh`` or ``mu_pixel_thresh``
can only reject more, because the makeup filter demands its statistic
exceed the threshold rather than stay under it.
"""

from __future__ import annotations

from .core import (
    FilterConfig,
    FilterVerdict,
    ImageBuffer,
    RegionMaskSet,
    verdict_from_statistic,
)
from .mask_algebra import area, complement, non_overlap_count, thresholded_diff_count

# (verdict region label, RegionMaskSet attribute, FilterConfig attribute,
#  whether the degenerate small-region rules apply)
_MISALIGNMENT_REGIONS = (
    ("face", "contour", "face_thresh", False),
    ("eyes", "eyes", "eye_thresh", True),
    ("teeth", "teeth", "teeth_thresh", True),
)


def _region_statistic(src_mask, gen_mask, config: FilterConfig, degenerate_rules: bool):
    """Non-overlap statistic for one region, or None when the check is skipped."""
    area_src = area(src_mask)
    area_gen = area(gen_mask)
    if degenerate_rules:
        small_src = area_src < config.min_region_area
        small_gen = area_gen < config.min_region_area
        if small_src and small_gen:
            return None  # region absent on both sides (e.g. closed mouth)
        if small_src != small_gen:
            # A region that disappears on one side is itself misalignment:
            # every pixel of the larger mask counts as non-overlapping.
            count = max(area_src, area_gen)
        else:
            count = non_overlap_count(src_mask, gen_mask)
    else:
        count = non_overlap_count(src_mask, gen_mask)
    if config.threshold_mode == "fraction":
        return count / max(area_src, 1)
    return float(count)


def misalignment_filter(
    source_masks: RegionMaskSet,
    generated_masks: RegionMaskSet,
    config: FilterConfig,
) -> FilterVerdict:
    """Reject pairs whose facial regions moved between source and generated.

    Compares the source and generated masks of the contour, eye, and
    teeth regions by symmetric-difference pixel count (normalized by the
    source region area in fraction mode). The verdict records the worst
    offending region: the one with the largest statistic-over-threshold
    excess.
    """
    if source_masks.dimensions != generated_masks.dimensions:
        raise ValueError(
            f"mask set dimension mismatch: {source_masks.dimensions} "
            f"vs {generated_masks.dimensions}"
        )
    worst = None  # (excess, region label, statistic, threshold)
    for label, attr, thresh_attr, degenerate_rules in _MISALIGNMENT_REGIONS:
        threshold = getattr(config, thresh_attr)
        statistic = _region_statistic(
            getattr(source_masks, attr), getattr(generated_masks, attr),
            config, degenerate_rules,
        )
        if statistic is None:
            continue
        excess = statistic - threshold
        if worst is None or excess > worst[0]:
            worst = (excess, label, statistic, threshold)
    excess, label, statistic, threshold = worst  # face region is always checked
    if excess > 0:
        reason = f'region "{label}" non-overlap {statistic:.6g} exceeds {threshold:.6g}'
    else:
        reason = f'aligned; worst region "{label}" non-overlap {statistic:.6g}'
    return verdict_from_statistic("misalignment", statistic, threshold, reason)


def makeup_failed_filter(
    source_img: ImageBuffer,
    generated_img: ImageBuffer,
    source_face_mask,
    config: FilterConfig,
) -> FilterVerdict:
    """Reject pairs where no visible makeup change occurred inside the face.

    A pixel counts as modified when its channel-max absolute difference
    strictly exceeds ``mu_thresh``. The pair fails if the modified count
    (fraction of the face area in fraction mode) fails to exceed
    ``mu_pixel_thresh``; a statistic exactly at the threshold fails.
    """
    face_area = area(source_face_mask)
    if face_area == 0:
        raise ValueError("no face region")
    modified = thresholded_diff_count(
        source_img, generated_img, source_face_mask, config.mu_thresh
    )
    if config.threshold_mode == "fraction":
        statistic = modified / max(face_area, 1)
    else:
        statistic = float(modified)
    threshold = config.mu_pixel_thresh
    if statistic > threshold:
        reason = f"modified {statistic:.6g} exceeds {threshold:.6g}"
    else:
        reason = f"modified {statistic:.6g} fails to exceed {threshold:.6g} (no visible makeup)"
    return verdict_from_statistic("makeup_failed", statistic, threshold, reason)


def background_filter(
    source_img: ImageBuffer,
    generated_img: ImageBuffer,
    source_face_mask,
    config: FilterConfig,
) -> FilterVerdict:
    """Reject pairs whose background changed outside the face region.

    The background is the complement of the source face mask. A pixel is
    inconsistent when its channel-max absolute difference strictly
    exceeds ``bg_thresh``; the pair fails only when the inconsistent
    count (fraction of background area in fraction mode) strictly
    surpasses ``bg_pixel_thresh``.
    """
    background = complement(source_face_mask)
    bg_area = area(background)
    if bg_area == 0:
        raise ValueError("no background region")
    inconsistent = thresholded_diff_count(
        source_img, generated_img, background, config.bg_thresh
    )
    if config.threshold_mode == "fraction":
        statistic = inconsistent / max(bg_area, 1)
    else:
        statistic = float(inconsistent)
    threshold = config.bg_pixel_thresh
    if statistic > threshold:
        reason = f"inconsistent {statistic:.6g} surpasses {threshold:.6g}"
    else:
        reason = f"background consistent ({statistic:.6g} within {threshold:.6g})"
    return verdict_from_statistic("background", statistic, threshold, reason)


def run_all_filters(
    source_img: ImageBuffer,
    generated_img: ImageBuffer,
    source_masks: RegionMaskSet,
    generated_masks: RegionMaskSet,
    config: FilterConfig,
) -> list[FilterVerdict]:
    """Apply all three filters in pipeline order, without short-circuiting.

    All three verdicts are always computed so rejection-reason statistics
    stay complete; the pair passes overall only when every verdict passes.
    Order: misalignment, makeup, background.
    """
    if source_img.pixels.shape != generated_img.pixels.shape:
        raise ValueError(
            f"image shape mismatch: source {source_img.pixels.shape} "
            f"vs generated {generated_img.pixels.shape}"
        )
    if source_masks.dimensions != (source_img.height, source_img.width):
        raise ValueError(
            f"source masks {source_masks.dimensions} do not match image "
            f"({source_img.height}, {source_img.width})"
        )
    return [
        misalignment_filter(source_masks, generated_masks, config),
        makeup_failed_filter(source_img, generated_img, source_masks.face, config),
        background_filter(source_img, generated_img, source_masks.face, config),
    ]
