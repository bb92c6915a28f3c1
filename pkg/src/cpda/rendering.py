"""PNG image I/O and map visualization.

Heatmaps use a symmetric diverging palette: values are normalized by the
map's largest magnitude, positive relevance blends white toward pure red,
negative toward pure blue; an all-zero map renders white.  Overlays keep
only positive relevance and use it as per-pixel opacity over black, so the
irrelevant parts of the image are blocked out.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import SaliencyMap, as_image
from .errors import DimensionMismatch, UnsupportedFormat


def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB or grayscale PNG as an (h, w, c) uint8 array."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                if "transparency" in im.info:
                    raise UnsupportedFormat(f"{path}: palette PNG with transparency")
                im = im.convert("RGB")
                mode = "RGB"
            if mode == "L":
                return np.asarray(im, dtype=np.uint8)[:, :, None].copy()
            if mode == "RGB":
                return np.asarray(im, dtype=np.uint8).copy()
            raise UnsupportedFormat(f"{path}: unsupported PNG mode {mode!r}")
    except UnidentifiedImageError as e:
        raise UnsupportedFormat(f"{path}: not a readable image: {e}") from e


def save_png(img, path) -> None:
    a = as_image(img)
    if a.shape[2] == 1:
        Image.fromarray(a[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(a, mode="RGB").save(path, format="PNG")


def _round_u8(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.uint8)


def heatmap(m: SaliencyMap) -> np.ndarray:
    """Diverging white/red/blue rendering of a signed map."""
    v = m.values
    scale = float(np.abs(v).max())
    h, w = v.shape
    out = np.full((h, w, 3), 255, dtype=np.uint8)
    if scale == 0.0:
        return out
    t = np.abs(v) / scale
    fade = _round_u8(255.0 * (1.0 - t))
    pos = v > 0
    neg = v < 0
    out[pos, 1] = fade[pos]
    out[pos, 2] = fade[pos]
    out[neg, 0] = fade[neg]
    out[neg, 1] = fade[neg]
    return out


def overlay_mask(img, m: SaliencyMap) -> np.ndarray:
    """Darken the image by positive relevance: alpha 1 keeps, alpha 0 blacks out."""
    a = as_image(img)
    if m.values.shape != a.shape[:2]:
        raise DimensionMismatch(
            f"map {m.values.shape} does not match image {a.shape[:2]}"
        )
    positive = np.maximum(m.values, 0.0)
    top = float(positive.max())
    if top == 0.0:
        return np.zeros_like(a)
    alpha = np.clip(positive / top, 0.0, 1.0)[:, :, None]
    return _round_u8(alpha * a.astype(np.float64))
