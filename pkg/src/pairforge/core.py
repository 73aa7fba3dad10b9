"""Core domain types and validated loading for images, masks, and config.

All types are immutable after construction (numpy buffers are marked
read-only) and safe to share across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

FILTER_NAMES = ("misalignment", "makeup_failed", "background")
REGION_NAMES = ("face", "eyes", "teeth", "contour")
MASK_KEYS = tuple(
    f"{side}_{region}" for side in ("source", "generated") for region in REGION_NAMES
)
THRESHOLD_MODES = ("fraction", "absolute")

# How each filter turns (statistic, threshold) into pass/fail.  "greater"
# means the pair fails when statistic > threshold; "not_greater" means it
# fails when statistic <= threshold.
FAIL_DIRECTION = {
    "misalignment": "greater",
    "makeup_failed": "not_greater",
    "background": "greater",
}

# Unsupported PIL modes: anything not stored as 8-bit samples.
_DEEP_MODES = ("1", "I", "F", "I;16", "I;16B", "I;16L", "I;16N")


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class LoadError(ForgeError):
    """An image or mask file could not be loaded. Message names the path."""


class ConfigError(ForgeError):
    """A configuration file or value is invalid."""


class ManifestError(ForgeError):
    """A manifest file is unreadable or violates the record schema."""


@dataclass(frozen=True)
class ImageBuffer:
    """An 8-bit raster of shape (height, width, channels), row-major.

    ``channels`` is 1 (grayscale) or 3 (RGB). The flat ``data`` view maps
    pixel (x, y, c) to offset ``y*width*channels + x*channels + c``.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.dtype != np.uint8:
            raise ValueError("pixels must be a uint8 numpy array")
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(
                f"pixels must have shape (H, W, C) with C in {{1, 3}}, got {px.shape}"
            )
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view over the pixel samples."""
        return self.pixels.reshape(-1)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        """Wrap an array, promoting (H, W) grayscale to (H, W, 1)."""
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        return cls(arr)


@dataclass(frozen=True)
class RegionMaskSet:
    """Named binary masks (values in {0, 1}) sharing one raster size.

    No subset relation between regions is enforced: parsing output is
    noisy, so eyes or teeth pixels may fall outside the face mask.
    """

    face: np.ndarray
    eyes: np.ndarray
    teeth: np.ndarray
    contour: np.ndarray

    def __post_init__(self) -> None:
        shape = self.face.shape
        for name in REGION_NAMES:
            mask = getattr(self, name)
            if not isinstance(mask, np.ndarray) or mask.ndim != 2:
                raise ValueError(f"mask '{name}' must be a 2D array")
            if mask.shape != shape:
                raise ValueError(
                    f"mask '{name}' has shape {mask.shape}, expected {shape}"
                )
            if mask.dtype != np.uint8 or not _is_binary(mask):
                raise ValueError(f"mask '{name}' must be uint8 with values in {{0, 1}}")

    @property
    def dimensions(self) -> tuple[int, int]:
        """(height, width) shared by every mask."""
        return self.face.shape


def _is_binary(mask: np.ndarray) -> bool:
    return bool((mask <= 1).all())


@dataclass(frozen=True)
class FilterVerdict:
    """Outcome of one rejection filter on one pair.

    ``passed`` is always recomputable from ``statistic``,
    ``threshold_used`` and the filter's fail direction (FAIL_DIRECTION).
    """

    filter_name: str
    passed: bool
    statistic: float
    threshold_used: float
    reason: str

    def __post_init__(self) -> None:
        if self.filter_name not in FILTER_NAMES:
            raise ValueError(f"unknown filter name: {self.filter_name!r}")
        if self.statistic < 0:
            raise ValueError("statistic must be non-negative")


def verdict_from_statistic(
    filter_name: str, statistic: float, threshold: float, reason: str
) -> FilterVerdict:
    """Build a verdict whose pass flag follows the filter's fail direction."""
    if FAIL_DIRECTION[filter_name] == "greater":
        passed = not statistic > threshold
    else:
        passed = statistic > threshold
    return FilterVerdict(filter_name, passed, float(statistic), float(threshold), reason)


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the three pair filters.

    In ``fraction`` mode the region and pixel-count thresholds are area
    fractions in [0, 1] (counts normalized by the relevant region area);
    in ``absolute`` mode they are raw pixel counts. The intensity
    thresholds ``mu_thresh`` and ``bg_thresh`` are always on the 0..255
    scale. Regions (eyes, teeth) smaller than ``min_region_area`` pixels
    receive the degenerate handling described in ``filters``.
    """

    face_thresh: float = 0.10
    eye_thresh: float = 0.30
    teeth_thresh: float = 0.50
    mu_thresh: float = 20.0
    mu_pixel_thresh: float = 0.05
    bg_thresh: float = 25.0
    bg_pixel_thresh: float = 0.02
    threshold_mode: str = "fraction"
    min_region_area: int = 32

    def __post_init__(self) -> None:
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(
                f"threshold_mode must be one of {THRESHOLD_MODES}, got {self.threshold_mode!r}"
            )
        for name in ("mu_thresh", "bg_thresh"):
            value = getattr(self, name)
            if not 0 <= value <= 255:
                raise ConfigError(f"{name} must be in [0, 255], got {value}")
        for name in ("face_thresh", "eye_thresh", "teeth_thresh",
                     "mu_pixel_thresh", "bg_pixel_thresh"):
            value = getattr(self, name)
            if value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
            if self.threshold_mode == "fraction" and value > 1:
                raise ConfigError(f"{name} must be in [0, 1] in fraction mode, got {value}")
        if self.min_region_area < 0:
            raise ConfigError("min_region_area must be non-negative")


@dataclass
class PairRecord:
    """One source/generated pair: resource paths plus pipeline annotations.

    ``mask_paths`` holds the eight region-mask paths keyed
    ``source_face`` .. ``generated_contour`` (see MASK_KEYS).
    ``verdicts``, ``passed``, ``error`` and ``metrics`` are written by the
    pipeline; ``verdicts`` is ordered misalignment, makeup, background.
    """

    id: str
    source_path: str
    generated_path: str
    prompt_tag: str
    mask_paths: dict[str, str]
    verdicts: Optional[list[FilterVerdict]] = None
    passed: Optional[bool] = None
    error: Optional[str] = None
    metrics: Optional["MetricsRow"] = None  # noqa: F821 (defined in pairforge.metrics)

    def __post_init__(self) -> None:
        missing = [k for k in MASK_KEYS if k not in self.mask_paths]
        if missing:
            raise ValueError(f"record {self.id!r} missing mask paths: {missing}")
        unknown = [k for k in self.mask_paths if k not in MASK_KEYS]
        if unknown:
            raise ValueError(f"record {self.id!r} has unknown mask keys: {unknown}")
        if self.verdicts is not None:
            order = [v.filter_name for v in self.verdicts]
            if order != list(FILTER_NAMES):
                raise ValueError(
                    f"record {self.id!r} verdicts out of order: {order}"
                )


def load_image(path) -> ImageBuffer:
    """Load an 8-bit grayscale or RGB raster.

    An alpha channel is dropped; palette images are expanded to RGB.
    Raises LoadError (naming the path) on decode failure or when the
    file is not stored with 8-bit samples.
    """
    p = Path(path)
    try:
        with Image.open(p) as img:
            if img.mode in _DEEP_MODES:
                raise LoadError(f"unsupported bit depth (mode {img.mode}) in image: {p}")
            img.load()
            if img.mode == "P":
                img = img.convert("RGB")
            if img.mode == "RGBA":
                img = img.convert("RGB")
            elif img.mode == "LA":
                img = img.convert("L")
            if img.mode not in ("L", "RGB"):
                raise LoadError(f"unsupported image mode {img.mode}: {p}")
            arr = np.asarray(img, dtype=np.uint8)
    except LoadError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise LoadError(f"cannot decode image {p}: {exc}") from exc
    return ImageBuffer.from_array(arr)


def load_mask(path, expected_dims: tuple[int, int]) -> np.ndarray:
    """Load a single-channel 8-bit mask file and binarize it.

    Values above 127 map to 1, everything else to 0 (masks are stored
    0/255 on disk; 127 tolerates anti-aliased parser output). The raster
    must match ``expected_dims`` (height, width) exactly.
    """
    p = Path(path)
    try:
        with Image.open(p) as img:
            if img.mode in _DEEP_MODES:
                raise LoadError(f"unsupported bit depth (mode {img.mode}) in mask: {p}")
            img.load()
            if img.mode != "L":
                raise LoadError(
                    f"mask must be single-channel 8-bit, got mode {img.mode}: {p}"
                )
            arr = np.asarray(img, dtype=np.uint8)
    except LoadError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise LoadError(f"cannot decode mask {p}: {exc}") from exc
    if arr.shape != tuple(expected_dims):
        raise LoadError(
            f"mask dimension mismatch: {p} is {arr.shape}, expected {tuple(expected_dims)}"
        )
    mask = (arr > 127).astype(np.uint8)
    mask.setflags(write=False)
    return mask


def load_region_masks(paths: dict[str, str], expected_dims: tuple[int, int],
                      base_dir: Optional[Path] = None) -> RegionMaskSet:
    """Load the four region masks named in ``paths`` (keys = REGION_NAMES)."""
    masks = {}
    for region in REGION_NAMES:
        mask_path = Path(paths[region])
        if base_dir is not None and not mask_path.is_absolute():
            mask_path = base_dir / mask_path
        masks[region] = load_mask(mask_path, expected_dims)
    return RegionMaskSet(**masks)


def save_image(image: ImageBuffer, path) -> None:
    arr = image.pixels[:, :, 0] if image.channels == 1 else image.pixels
    Image.fromarray(arr, mode="L" if image.channels == 1 else "RGB").save(
        path, format="PNG", compress_level=1
    )


def save_mask(mask: np.ndarray, path) -> None:
    """Write a {0,1} mask as a single-channel 0/255 PNG."""
    if mask.ndim != 2 or not _is_binary(np.asarray(mask, dtype=np.uint8)):
        raise ValueError("mask must be a 2D array with values in {0, 1}")
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(
        path, format="PNG", compress_level=1
    )


# --- filter config file format: one "key = value" per line, '#' comments ---

_INT_FIELDS = {"min_region_area"}
_STR_FIELDS = {"threshold_mode"}


def parse_filter_config(text: str, source: str = "<config>") -> FilterConfig:
    """Parse the key-value config format into a FilterConfig.

    Unknown keys and malformed lines raise ConfigError; omitted keys keep
    their defaults.
    """
    valid = {f.name for f in fields(FilterConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in valid:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        try:
            if key in _STR_FIELDS:
                values[key] = value
            elif key in _INT_FIELDS:
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from exc
    return FilterConfig(**values)


def load_filter_config(path) -> FilterConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    return parse_filter_config(text, source=str(p))


def format_filter_config(config: FilterConfig) -> str:
    """Render a FilterConfig in the key-value file format."""
    lines = []
    for f in fields(FilterConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"
