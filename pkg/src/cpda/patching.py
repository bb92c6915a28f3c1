"""Sliding-window geometry and resampling.

The resize convention used throughout the toolkit is bilinear interpolation
with half-pixel-center coordinate mapping (source = (dst + 0.5) * scale - 0.5)
and clamp-to-edge borders, with output samples rounded half-up to 8-bit.
Resizing to the identical size is bit-exact.

Patches are always cropped from the *original* image, not from the processed
one: the patch rectangle is mapped back to the original frame (independent
axis scales, bounds rounded to nearest, at least one source pixel per axis)
and the crop is then resized to the full processed size.  Enlarging from the
original avoids compounding two resampling passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import PatchGrid, as_image
from .errors import InvalidGeometry


@dataclass(frozen=True)
class PatchRef:
    """One grid patch: its ordinal in the grid and its square rect."""

    grid_index: int
    top: int
    left: int
    size: int


def build_grid(n: int, k: int, s: int) -> PatchGrid:
    """Row-major corners {0, s, 2s, ...} per axis, last corner <= n - k."""
    if not (1 <= k <= n):
        raise InvalidGeometry(f"need 1 <= k <= n, got k={k}, n={n}")
    if s < 1:
        raise InvalidGeometry(f"need stride >= 1, got s={s}")
    corners = np.arange(0, n - k + 1, s, dtype=np.int64)
    rows = np.repeat(corners, len(corners))
    cols = np.tile(corners, len(corners))
    return PatchGrid(n=n, k=k, s=s, positions=np.stack([rows, cols], axis=1))


def iter_patches(grid: PatchGrid):
    """Yield a PatchRef for every grid position, in grid (row-major) order."""
    for i, (top, left) in enumerate(grid.positions):
        yield PatchRef(grid_index=i, top=int(top), left=int(left), size=grid.k)


@lru_cache(maxsize=256)
def _axis_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) interpolation matrix for one axis, half-pixel centers."""
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    centers = np.clip(centers, 0.0, src - 1.0)
    lo = np.floor(centers).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = (centers - lo).astype(np.float32)
    w = np.zeros((dst, src), dtype=np.float32)
    idx = np.arange(dst)
    w[idx, lo] += 1.0 - frac
    w[idx, hi] += frac
    return w


def bilinear_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (h, w, c) uint8 image to (out_h, out_w, c).

    Separable implementation: one interpolation matrix per axis applied as
    matrix products, equivalent to the 2-D bilinear weight formula.
    """
    src = as_image(img)
    h, w, c = src.shape
    if out_h < 1 or out_w < 1:
        raise InvalidGeometry(f"output dims must be >= 1, got {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return src.copy()
    wy = _axis_weights(h, out_h)                      # (out_h, h)
    wx = _axis_weights(w, out_w)                      # (out_w, w)
    flat = src.reshape(h, w * c).astype(np.float32)
    rows = (wy @ flat).reshape(out_h, w, c)           # row pass
    rows = np.ascontiguousarray(rows.transpose(0, 2, 1)).reshape(out_h * c, w)
    out = rows @ wx.T                                 # column pass
    out = out.reshape(out_h, c, out_w).transpose(0, 2, 1)
    return np.ascontiguousarray(np.floor(out + 0.5)).astype(np.uint8)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def original_frame_rect(top: int, left: int, k: int, n: int, height: int, width: int):
    """Map a processed-frame patch rect to original-frame bounds.

    Rows scale by height/n and columns by width/n; both bounds round to the
    nearest integer, the rect is clamped into the image, and each axis keeps
    at least one source pixel.  Returns (r0, r1, c0, c1) half-open bounds.
    """
    r0 = _round_half_up(top * height / n)
    r1 = _round_half_up((top + k) * height / n)
    c0 = _round_half_up(left * width / n)
    c1 = _round_half_up((left + k) * width / n)
    r0 = min(max(r0, 0), height - 1)
    c0 = min(max(c0, 0), width - 1)
    r1 = min(max(r1, r0 + 1), height)
    c1 = min(max(c1, c0 + 1), width)
    return r0, r1, c0, c1


def crop_patch_from_original(original, n: int, patch: PatchRef) -> np.ndarray:
    """Crop the original-frame counterpart of a patch and resize it to n-by-n."""
    img = as_image(original)
    k = patch.size
    if not (1 <= k <= n) or patch.top < 0 or patch.left < 0 or patch.top > n - k or patch.left > n - k:
        raise InvalidGeometry(f"patch {patch} invalid for processed side {n}")
    height, width = img.shape[0], img.shape[1]
    r0, r1, c0, c1 = original_frame_rect(patch.top, patch.left, k, n, height, width)
    return bilinear_resize(img[r0:r1, c0:c1], n, n)


def coverage_counts(grid: PatchGrid) -> np.ndarray:
    """(n, n) int array: how many grid patches contain each pixel.

    Computed per axis (a coordinate t is covered by corners in
    [t - k + 1, t]) and combined as an outer product; pixels beyond the last
    patch edge have count zero.
    """
    corners = np.arange(0, grid.n - grid.k + 1, grid.s, dtype=np.int64)
    axis = np.zeros(grid.n, dtype=np.int64)
    for c in corners:
        axis[c:c + grid.k] += 1
    return np.outer(axis, axis)
