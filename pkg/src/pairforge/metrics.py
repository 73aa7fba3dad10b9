"""Quantitative pair evaluation: SSIM, background MSE, embedding cosine.

SSIM follows the canonical windowed formulation: Rec.601 luminance,
11x11 Gaussian window (sigma 1.5), stabilizers C1 = (0.01*255)^2 and
C2 = (0.03*255)^2, averaged over windows fully inside the image.
Background MSE (``l2m``) is computed on the 0..255 intensity scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

from .core import FILTER_NAMES, ImageBuffer, LoadError, PairRecord
from .mask_algebra import area, complement

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2

EMB_MAGIC = b"EMB1"


@dataclass(frozen=True)
class MetricsRow:
    """Per-pair metric values; clip_i is absent when no embeddings exist."""

    ssim: float
    l2m: float
    clip_i: Optional[float] = None

    def __post_init__(self) -> None:
        if not -1.0 - 1e-9 <= self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"ssim out of range [-1, 1]: {self.ssim}")
        if self.l2m < 0:
            raise ValueError(f"l2m must be non-negative: {self.l2m}")
        if self.clip_i is not None and not -1.0 - 1e-9 <= self.clip_i <= 1.0 + 1e-9:
            raise ValueError(f"clip_i out of range [-1, 1]: {self.clip_i}")


@dataclass(frozen=True)
class EmbeddingVector:
    """A real-valued feature vector read from an embedding file."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("embedding values must be a non-empty 1D array")

    @property
    def dim(self) -> int:
        return self.values.size


def luminance(img: ImageBuffer) -> np.ndarray:
    """Rec.601 luminance (0.299 R + 0.587 G + 0.114 B) as float64, 0..255."""
    px = img.pixels.astype(np.float64)
    if img.channels == 1:
        return px[:, :, 0]
    return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """1D Gaussian taps normalized to sum 1."""
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def _windowed(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable Gaussian filtering; cropping the kernel radius afterwards
    # leaves exactly the windows fully inside the image, so the border
    # mode never reaches the result.
    pad = (kernel.size - 1) // 2
    out = correlate1d(x, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    return out[pad:-pad, pad:-pad]


def ssim(img_a: ImageBuffer, img_b: ImageBuffer) -> float:
    """Mean local SSIM between two images over the valid window positions."""
    if (img_a.height, img_a.width) != (img_b.height, img_b.width):
        raise ValueError(
            f"image dimension mismatch: {(img_a.height, img_a.width)} "
            f"vs {(img_b.height, img_b.width)}"
        )
    if img_a.height < SSIM_WINDOW or img_a.width < SSIM_WINDOW:
        raise ValueError(
            f"image {img_a.width}x{img_a.height} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = luminance(img_a)
    y = luminance(img_b)
    kernel = gaussian_window()
    mu_x = _windowed(x, kernel)
    mu_y = _windowed(y, kernel)
    var_x = _windowed(x * x, kernel) - mu_x * mu_x
    var_y = _windowed(y * y, kernel) - mu_y * mu_y
    cov = _windowed(x * y, kernel) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + _C1) * (2 * cov + _C2)) / (
        (mu_x * mu_x + mu_y * mu_y + _C1) * (var_x + var_y + _C2)
    )
    return float(ssim_map.mean())


def l2m(source: ImageBuffer, generated: ImageBuffer, face_mask: np.ndarray) -> float:
    """Mean squared error over background pixels and channels (0..255 scale).

    The background is the complement of the face mask; edits strictly
    inside the face never move this value.
    """
    if source.pixels.shape != generated.pixels.shape:
        raise ValueError(
            f"image shape mismatch: {source.pixels.shape} vs {generated.pixels.shape}"
        )
    background = complement(face_mask)
    if area(background) == 0:
        raise ValueError("empty background: face mask covers the whole image")
    diff = source.pixels.astype(np.float64) - generated.pixels.astype(np.float64)
    return float((diff[background.astype(bool)] ** 2).mean())


def clip_i(emb_ref, emb_gen) -> float:
    """Cosine similarity between two embedding vectors."""
    a = _as_vector(emb_ref)
    b = _as_vector(emb_gen)
    if a.size != b.size:
        raise ValueError(f"embedding dim mismatch: {a.size} vs {b.size}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity undefined for zero vector")
    return float(np.dot(a, b) / (norm_a * norm_b))


def _as_vector(emb) -> np.ndarray:
    values = emb.values if isinstance(emb, EmbeddingVector) else emb
    return np.asarray(values, dtype=np.float64).reshape(-1)


# --- embedding file format: b"EMB1" + u32 dim + dim little-endian f32 ---

def write_embedding(path, values) -> None:
    arr = np.asarray(values, dtype="<f4").reshape(-1)
    if arr.size == 0:
        raise ValueError("refusing to write empty embedding")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<I", arr.size))
        fh.write(arr.tobytes())


def read_embedding(path) -> EmbeddingVector:
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read embedding file {p}: {exc}") from exc
    if len(blob) < 8 or blob[:4] != EMB_MAGIC:
        raise LoadError(f"not an EMB1 embedding file: {p}")
    (dim,) = struct.unpack("<I", blob[4:8])
    if dim == 0:
        raise LoadError(f"embedding file declares zero dim: {p}")
    if len(blob) != 8 + 4 * dim:
        raise LoadError(
            f"embedding payload truncated: {p} has {len(blob) - 8} bytes, "
            f"expected {4 * dim}"
        )
    values = np.frombuffer(blob, dtype="<f4", count=dim, offset=8).astype(np.float64)
    values.setflags(write=False)
    return EmbeddingVector(values)


def embedding_path_for(image_path) -> Path:
    """Embedding file path convention: the image path plus '.emb'."""
    p = Path(image_path)
    return p.with_name(p.name + ".emb")


@dataclass(frozen=True)
class PassRateReport:
    """Dataset pass rate with the per-filter rejection breakdown.

    A pair may count in several filters because the pipeline never
    short-circuits, so the breakdown can sum to more than the number of
    failed pairs. Error records are excluded from the rate.
    """

    total: int
    valid: int
    passed: int
    errors: int
    pass_rate: float
    rejections: dict[str, int]


def pass_rate(records: list[PairRecord]) -> PassRateReport:
    """Compute PR = passed / valid pairs plus the rejection breakdown."""
    if not records:
        raise ValueError("empty manifest: no records to evaluate")
    rejections = {name: 0 for name in FILTER_NAMES}
    errors = 0
    valid = 0
    passed = 0
    for rec in records:
        if rec.error is not None:
            errors += 1
            continue
        if rec.verdicts is None:
            raise ValueError(f"record {rec.id!r} carries no verdicts")
        valid += 1
        if all(v.passed for v in rec.verdicts):
            passed += 1
        else:
            for v in rec.verdicts:
                if not v.passed:
                    rejections[v.filter_name] += 1
    rate = passed / valid if valid else 0.0
    return PassRateReport(
        total=len(records),
        valid=valid,
        passed=passed,
        errors=errors,
        pass_rate=rate,
        rejections=rejections,
    )
