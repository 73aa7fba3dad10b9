"""Face-region segmentation from plain RGB images.

The segmenter is deliberately classical so it runs offline with no model
weights: skin pixels are gated in YCbCr space (Chai/Ngan-style chroma box),
the largest connected skin component becomes the face, and the eye, teeth
and contour regions are carved out of it geometrically. Any other tool that
emits the same four mask files can replace this one.
"""

from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

REGION_NAMES = ("face", "eyes", "teeth", "contour")

# chroma box for skin plus a luma floor to drop shadows
_CB_RANGE = (77, 127)
_CR_RANGE = (133, 173)
_Y_FLOOR = 40

_MIN_FACE_AREA = 256
_MIN_FACE_FRACTION = 0.005

_EYE_ZONE = 0.55       # top fraction of the face box searched for eyes
_EYE_MAX_LUMA = 90
_TOOTH_MIN_LUMA = 150
_TOOTH_CHROMA_BAND = 16
_MIN_BLOB_AREA = 4


def _ycbcr(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(Image.fromarray(rgb, mode="RGB").convert("YCbCr")).astype(np.int16)


def skin_mask(rgb: np.ndarray) -> np.ndarray:
    ycc = _ycbcr(rgb)
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    return (
        (y > _Y_FLOOR)
        & (cb >= _CB_RANGE[0]) & (cb <= _CB_RANGE[1])
        & (cr >= _CR_RANGE[0]) & (cr <= _CR_RANGE[1])
    )


def _largest_component(mask: np.ndarray) -> Optional[np.ndarray]:
    labels, count = ndimage.label(mask)
    if count == 0:
        return None
    areas = ndimage.sum_labels(mask, labels, index=range(1, count + 1))
    return labels == (int(np.argmax(areas)) + 1)


def _blobs_by_area(mask: np.ndarray, keep: int) -> np.ndarray:
    """Union of the ``keep`` largest components, ignoring speckles."""
    labels, count = ndimage.label(mask)
    if count == 0:
        return np.zeros_like(mask)
    areas = ndimage.sum_labels(mask, labels, index=range(1, count + 1))
    order = np.argsort(areas)[::-1]
    out = np.zeros_like(mask)
    taken = 0
    for idx in order:
        if taken >= keep or areas[idx] < _MIN_BLOB_AREA:
            break
        out |= labels == (idx + 1)
        taken += 1
    return out


def segment_regions(rgb: np.ndarray) -> Optional[dict]:
    """Segment face/eyes/teeth/contour; None when no face is found.

    Returned masks are boolean arrays at image resolution. Eyes and teeth
    may be empty (closed eyes, closed mouth); face and contour are not.
    """
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got shape {rgb.shape}")
    height, width = rgb.shape[:2]

    skin = ndimage.binary_opening(skin_mask(rgb))
    component = _largest_component(skin)
    if component is None:
        return None
    area = int(component.sum())
    if area < max(_MIN_FACE_AREA, _MIN_FACE_FRACTION * height * width):
        return None

    face = ndimage.binary_fill_holes(component)
    rows = np.flatnonzero(face.any(axis=1))
    cols = np.flatnonzero(face.any(axis=0))
    top, bottom = rows[0], rows[-1]
    left, right = cols[0], cols[-1]
    box_h = bottom - top + 1
    box_w = right - left + 1

    thickness = max(2, round(0.04 * min(box_h, box_w)))
    contour = face & ~ndimage.binary_erosion(face, iterations=thickness)

    ycc = _ycbcr(rgb)
    luma, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    holes = face & ~skin  # non-skin pixels enclosed by the face

    zone_split = top + int(_EYE_ZONE * box_h)
    upper = np.zeros_like(face)
    upper[top:zone_split, left:right + 1] = True
    lower = np.zeros_like(face)
    lower[zone_split:bottom + 1, left:right + 1] = True

    eyes = _blobs_by_area(holes & upper & (luma < _EYE_MAX_LUMA), keep=2)
    bright = (
        (luma > _TOOTH_MIN_LUMA)
        & (np.abs(cb - 128) < _TOOTH_CHROMA_BAND)
        & (np.abs(cr - 128) < _TOOTH_CHROMA_BAND)
    )
    teeth = _blobs_by_area(holes & lower & bright, keep=1)

    return {"face": face, "eyes": eyes, "teeth": teeth, "contour": contour}
