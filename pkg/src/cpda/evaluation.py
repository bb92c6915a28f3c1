"""Quantitative evaluation and inference-cost accounting.

The log-odds protocol scores a saliency method without ground truth: explain
the argmax class, blank a 9x9 window at the map's argmax with the image's
per-channel mean, reclassify, and report log((p/(1-p)) / (q/(1-q))).  A
method that finds truly relevant pixels drives q below p and the ratio up.

Call-count models mirror how the explainers actually consume the backend:
one call per patch plus one base call for the contextual method and the
occlusion baseline, and samples * (stride-1 grid) + 1 for the marginal
baseline, whose cost is conventionally accounted at stride 1.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ExplainConfig, SaliencyMap, as_image
from .errors import CpdaError, InvalidGeometry
from . import explainers
from .explainers import _channel_means_u8, _fill_rect
from .patching import build_grid

_CLAMP = 1e-9


def log_odds_ratio(p: float, q: float) -> float:
    """Natural-log odds ratio of p against q, clamped away from {0, 1}.

    Computed as logit(p) - logit(q), which makes antisymmetry exact in
    floating point.
    """
    p = min(max(p, _CLAMP), 1.0 - _CLAMP)
    q = min(max(q, _CLAMP), 1.0 - _CLAMP)
    return math.log(p / (1.0 - p)) - math.log(q / (1.0 - q))


def perturb_at_argmax(img, m: SaliencyMap, patch_side: int = 9) -> np.ndarray:
    """Blank a patch_side square centered at the map's argmax.

    The window is clamped to stay fully inside the image (shrunk to the
    image if the image is smaller than the window) and filled with the
    image's per-channel mean (rounded half-up), so exactly patch_side^2
    pixels change (fewer visibly if they already equal the mean).
    """
    a = as_image(img)
    h, w = a.shape[0], a.shape[1]
    if m.values.shape != (h, w):
        raise ValueError(f"map {m.values.shape} does not match image {h}x{w}")
    patch_side = min(patch_side, h, w)
    r, c = np.unravel_index(int(np.argmax(m.values)), m.values.shape)
    top = min(max(r - patch_side // 2, 0), h - patch_side)
    left = min(max(c - patch_side // 2, 0), w - patch_side)
    out = a.copy()
    out[top:top + patch_side, left:left + patch_side] = _channel_means_u8(a)
    return out


def _explain(method: str, img, classifier, cfg, class_index, samples, seed):
    if method == "cpda":
        m, _ = explainers.cpda_image(img, classifier, cfg, class_index)
        return m
    if method == "pda-occlusion":
        return explainers.pda_image_occlusion(img, classifier, cfg, class_index, seed=seed)
    if method == "pda-marginal":
        return explainers.pda_image_marginal(
            img, classifier, cfg, class_index, samples=samples, seed=seed
        )
    raise ValueError(f"unknown method {method!r}")


@dataclass
class LogOddsReport:
    method: str
    patch_size: int
    stride: int
    samples: int
    per_image: list = field(default_factory=list)   # {"path", "p", "q", "ratio"}
    failures: list = field(default_factory=list)    # {"path", "error"}
    calls: int = 0

    @property
    def ratios(self) -> np.ndarray:
        return np.array([entry["ratio"] for entry in self.per_image], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(self.ratios.mean())

    @property
    def std(self) -> float:
        return float(self.ratios.std())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "config": {
                "patch_size": self.patch_size,
                "stride": self.stride,
                "samples": self.samples,
            },
            "per_image": list(self.per_image),
            "mean": self.mean,
            "std": self.std,
            "calls": self.calls,
        }


def evaluate_logodds(
    corpus: Sequence,
    classifier,
    method: str,
    cfg: Optional[ExplainConfig] = None,
    samples: int = 10,
    seed: int = 0,
) -> LogOddsReport:
    """Score a method over a corpus of (name, image) pairs (or bare images).

    Per image: classify, explain the argmax class, blank the map argmax,
    reclassify, record the log-odds ratio.  Images whose backend calls fail
    are recorded and skipped; an entirely failed corpus raises.
    """
    cfg = cfg or ExplainConfig()
    items = []
    for i, entry in enumerate(corpus):
        if isinstance(entry, tuple):
            items.append((str(entry[0]), entry[1]))
        else:
            items.append((f"image-{i}", entry))
    if not items:
        raise ValueError("corpus is empty")
    report = LogOddsReport(
        method=method, patch_size=cfg.patch_size, stride=cfg.stride,
        samples=samples if method == "pda-marginal" else 0,
    )
    calls_before = classifier.counter.snapshot()[0]
    for name, img in items:
        try:
            n = classifier.input_side
            from .patching import bilinear_resize
            processed = bilinear_resize(as_image(img), n, n)
            base_dist = classifier.classify(processed)
            c = int(np.argmax(base_dist))
            p = float(base_dist[c])
            m = _explain(method, img, classifier, cfg, c, samples, seed)
            perturbed = perturb_at_argmax(processed, m)
            q = float(classifier.classify(perturbed)[c])
            report.per_image.append(
                {"path": name, "p": p, "q": q, "ratio": log_odds_ratio(p, q)}
            )
        except CpdaError as e:
            report.failures.append({"path": name, "error": str(e)})
    if not report.per_image:
        raise CpdaError(f"all {len(items)} corpus images failed; first: {report.failures[0]}")
    report.calls = classifier.counter.snapshot()[0] - calls_before
    return report


@dataclass
class SaturationProbeResult:
    """Scores of an image with rectangular regions blanked out, versus base."""

    base_score: float
    regions: list
    scores: list
    deltas: list


def saturation_probe(img, regions, classifier, class_index: int = 0, filler: str = "mean",
                     seed: int = 0) -> SaturationProbeResult:
    """Blank each region in turn and report score and delta against base.

    A saturated classifier barely moves when a region that shares support
    with other evidence is removed; the deltas make that visible.
    """
    from .patching import bilinear_resize
    n = classifier.input_side
    processed = bilinear_resize(as_image(img), n, n)
    base = float(classifier.classify(processed)[class_index])
    means = _channel_means_u8(processed)
    rng = np.random.default_rng(seed)
    scores, deltas = [], []
    for (t, l, h, w) in regions:
        if t < 0 or l < 0 or t + h > n or l + w > n:
            raise InvalidGeometry(f"region {(t, l, h, w)} outside {n}x{n}")
        probe = processed.copy()
        if h == w:
            _fill_rect(probe, t, l, h, filler, means, rng)
        else:
            if filler == "mean":
                probe[t:t + h, l:l + w] = means
            elif filler == "gray":
                probe[t:t + h, l:l + w] = 128
            elif filler == "noise":
                probe[t:t + h, l:l + w] = rng.integers(0, 256, size=(h, w, probe.shape[2]),
                                                       dtype=np.uint8)
            else:
                raise ValueError(f"unknown filler {filler!r}")
        score = float(classifier.classify(probe)[class_index])
        scores.append(score)
        deltas.append(score - base)
    return SaturationProbeResult(base_score=base, regions=list(regions),
                                 scores=scores, deltas=deltas)


METHODS = ("cpda", "pda-occlusion", "pda-marginal")


def predict_calls(method: str, n: int, k: int, s: int, samples: int = 10) -> int:
    """Classifier calls needed to produce one explanation (incl. base call)."""
    if method == "cpda":
        return build_grid(n, k, s).count + 1
    if method == "pda-occlusion":
        return build_grid(n, k, s).count + 1
    if method == "pda-marginal":
        # Cost accounted at stride 1: samples per patch of the dense grid.
        return samples * build_grid(n, k, 1).count + 1
    raise ValueError(f"unknown method {method!r}")


@dataclass
class CostModel:
    method: str
    n: int
    k: int
    s: int
    samples: int
    predicted_calls: int
    measured_calls: int
    seconds: float


def run_cost_comparison(
    img,
    classifier,
    methods: Sequence[str],
    cfg: Optional[ExplainConfig] = None,
    samples: int = 10,
    seed: int = 0,
) -> list[CostModel]:
    """Run each method once and check measured against predicted calls.

    The marginal baseline runs at stride 1 to match its cost model; the
    other methods run at the configured stride.
    """
    cfg = cfg or ExplainConfig()
    n = classifier.input_side
    out = []
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        run_cfg = cfg
        eff_samples = samples
        if method == "pda-marginal":
            run_cfg = ExplainConfig(
                patch_size=cfg.patch_size, stride=1,
                class_selection=cfg.class_selection,
                difference_measure=cfg.difference_measure,
            )
        else:
            eff_samples = 0
        before = classifier.counter.snapshot()[0]
        t0 = time.perf_counter()
        _explain(method, img, classifier, run_cfg, None, samples, seed)
        seconds = time.perf_counter() - t0
        measured = classifier.counter.snapshot()[0] - before
        out.append(
            CostModel(
                method=method, n=n, k=cfg.patch_size,
                s=run_cfg.stride, samples=eff_samples,
                predicted_calls=predict_calls(method, n, cfg.patch_size, cfg.stride, samples),
                measured_calls=measured, seconds=seconds,
            )
        )
    return out


def speedup_ratio(marginal: CostModel, cpda: CostModel) -> float:
    """Marginal-to-contextual call ratio, base calls excluded."""
    return (marginal.measured_calls - 1) / (cpda.measured_calls - 1)
