"""Writers for the mask and embedding file formats consumed downstream.

Masks: single-channel PNG, background 0, region 255.
Embeddings: EMB1 binary -- magic ``b"EMB1"``, u32 little-endian dimension,
then that many float32 little-endian values.
"""

import struct
from pathlib import Path

import numpy as np
from PIL import Image

EMB_MAGIC = b"EMB1"


def write_mask(mask: np.ndarray, path) -> None:
    """Write a binary mask as a 0/255 grayscale PNG."""
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    out = np.where(np.asarray(mask) != 0, 255, 0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out, mode="L").save(path, format="PNG")


def write_embedding(path, values) -> None:
    vec = np.asarray(values, dtype="<f4").reshape(-1)
    if vec.size == 0:
        raise ValueError("refusing to write an empty embedding")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.tobytes())


def load_rgb(path) -> np.ndarray:
    """Decode an image to an (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise OSError(f"cannot decode image {path}: {exc}") from exc
