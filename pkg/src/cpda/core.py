"""Core value types: images, class distributions, patch grids, saliency maps.

Images are plain ``numpy`` arrays of shape ``(height, width, channels)`` with
dtype ``uint8`` and 1 or 3 channels; the dtype makes the [0, 255] sample range
a property of the representation.  Class distributions are 1-D ``float64``
arrays whose entries lie in [0, 1]; they are deliberately *not* required to
sum to one so that single-output and multi-label backends fit the same
contract, and they are never renormalized.

The module also owns the ``.sal`` on-disk saliency-map format: one UTF-8 JSON
header line followed by the raw row-major ``float32`` little-endian payload.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import InvalidGeometry, MalformedMap, OutOfRange

METHOD_TAGS = ("cpda", "pda-occlusion", "pda-marginal")

DIFFERENCE_MEASURES = ("probability", "bits")

# Probabilities are floored here before taking logarithms in the bit measure.
LOG_FLOOR = 1e-12


def as_image(arr) -> np.ndarray:
    """Validate and normalize an image array to contiguous (h, w, c) uint8.

    Accepts (h, w) grayscale input and returns it as (h, w, 1).
    """
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise TypeError(f"image samples must be uint8, got {a.dtype}")
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"image must have shape (h, w, c), got {a.shape}")
    h, w, c = a.shape
    if h < 1 or w < 1:
        raise ValueError(f"image dimensions must be positive, got {a.shape}")
    if c not in (1, 3):
        raise ValueError(f"image must have 1 or 3 channels, got {c}")
    return np.ascontiguousarray(a)


def validate_distribution(d) -> np.ndarray:
    """Check a class-probability vector and return it as a float64 array.

    Every entry must be finite and within [0, 1].  There is no sum-to-one
    requirement.  Raises :class:`OutOfRange` naming the first bad entry.
    """
    probs = np.asarray(d, dtype=np.float64)
    if probs.ndim != 1 or probs.size < 1:
        raise ValueError(f"distribution must be a non-empty vector, got shape {probs.shape}")
    bad = ~(np.isfinite(probs) & (probs >= 0.0) & (probs <= 1.0))
    if bad.any():
        i = int(np.argmax(bad))
        raise OutOfRange(i, float(probs[i]))
    return probs


@dataclass(frozen=True)
class PatchGrid:
    """Sliding-window geometry over an n-by-n processed image.

    ``positions`` holds the (row, col) top-left corner of every patch in
    row-major order.  Corners advance by ``s`` and never overshoot: the last
    corner per axis is at most ``n - k``, so every patch is a full k-by-k
    square and the per-axis count is ``(n - k) // s + 1``.
    """

    n: int
    k: int
    s: int
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (1 <= self.k <= self.n):
            raise InvalidGeometry(f"patch size k={self.k} must satisfy 1 <= k <= n={self.n}")
        if self.s < 1:
            raise InvalidGeometry(f"stride s={self.s} must be >= 1")
        per_axis = (self.n - self.k) // self.s + 1
        if len(self.positions) != per_axis * per_axis:
            raise InvalidGeometry(
                f"grid has {len(self.positions)} positions, expected {per_axis * per_axis}"
            )

    @property
    def per_axis(self) -> int:
        return (self.n - self.k) // self.s + 1

    @property
    def count(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class SaliencyMap:
    """Signed per-pixel relevance for one (image, class, method) triple.

    ``values`` is a float64 (height, width) array kept at accumulation
    precision in memory; the on-disk payload is float32 (see
    :func:`write_map`).  Negative values mark negative evidence.
    """

    values: np.ndarray
    class_index: int
    method: str
    patch_size: int
    stride: int
    base_score: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"map values must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("map values must all be finite")
        if self.class_index < 0:
            raise ValueError(f"class_index must be >= 0, got {self.class_index}")
        if self.method not in METHOD_TAGS:
            raise ValueError(f"unknown method tag {self.method!r}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class ExplainConfig:
    """Hyper-parameters shared by the image explainers.

    The defaults (patch size 20, stride 5) are the empirically good choices
    for 224-input classifiers; smaller patches sharpen maps, larger ones
    smooth them, and the stride trades resolution for inference count.
    """

    patch_size: int = 20
    stride: int = 5
    class_selection: Union[int, str] = "auto"
    difference_measure: str = "probability"

    def __post_init__(self):
        if self.patch_size < 1:
            raise InvalidGeometry(f"patch_size must be >= 1, got {self.patch_size}")
        if self.stride < 1:
            raise InvalidGeometry(f"stride must be >= 1, got {self.stride}")
        if self.difference_measure not in DIFFERENCE_MEASURES:
            raise ValueError(f"unknown difference measure {self.difference_measure!r}")
        if isinstance(self.class_selection, str) and self.class_selection != "auto":
            raise ValueError(f"class_selection must be an index or 'auto', got {self.class_selection!r}")


def difference(base: float, other: float, measure: str = "probability") -> float:
    """Score difference D(base, other) under the configured measure.

    ``probability`` is the plain difference of the two probabilities;
    ``bits`` is the base-2 log-odds-style information difference, with
    probabilities floored at ``LOG_FLOOR`` so zero scores stay finite.
    """
    if measure == "probability":
        return base - other
    if measure == "bits":
        return math.log2(max(base, LOG_FLOOR)) - math.log2(max(other, LOG_FLOOR))
    raise ValueError(f"unknown difference measure {measure!r}")


_HEADER_KEYS = ("height", "width", "class_index", "method", "k", "s", "base_score")


def write_map(m: SaliencyMap, path) -> None:
    """Serialize a map: JSON header line + row-major float32 LE payload.

    The payload is fixed at 32-bit precision, so a read-back map reproduces
    ``m`` bit-exactly whenever its values are float32-representable (always
    true for maps that came from :func:`read_map`).
    """
    header = {
        "height": m.height,
        "width": m.width,
        "class_index": m.class_index,
        "method": m.method,
        "k": m.patch_size,
        "s": m.stride,
        "base_score": m.base_score,
    }
    payload = m.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_map(path) -> SaliencyMap:
    """Read a ``.sal`` file back into a :class:`SaliencyMap`.

    Raises :class:`MalformedMap` on any structural problem: missing or
    unparseable header, wrong payload length, or non-finite values.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise MalformedMap(f"{path}: missing header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedMap(f"{path}: bad header: {e}") from e
    if not isinstance(header, dict) or any(key not in header for key in _HEADER_KEYS):
        raise MalformedMap(f"{path}: header missing keys {_HEADER_KEYS}")
    h, w = header["height"], header["width"]
    if not (isinstance(h, int) and isinstance(w, int) and h >= 1 and w >= 1):
        raise MalformedMap(f"{path}: bad dimensions {h}x{w}")
    payload = blob[newline + 1:]
    if len(payload) != h * w * 4:
        raise MalformedMap(
            f"{path}: payload is {len(payload)} bytes, expected {h * w * 4}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w)
    if not np.isfinite(values).all():
        raise MalformedMap(f"{path}: payload contains non-finite values")
    try:
        return SaliencyMap(
            values=values,
            class_index=header["class_index"],
            method=header["method"],
            patch_size=header["k"],
            stride=header["s"],
            base_score=header["base_score"],
        )
    except (TypeError, ValueError) as e:
        raise MalformedMap(f"{path}: bad header values: {e}") from e
