"""Saliency methods: contextual prediction difference (CPDA) and the
prediction-difference baselines (occlusion and marginal sampling).

Feature-level operations work on abstract feature vectors and are exact;
they exist both as the generic API and as the ground truth for the image
operations' property tests.

Image-level relevance follows the contextual scheme: for every sliding
patch j the full-image score B and the standalone patch score F_j yield a
context relevance R_j = D(B, F_j), which is distributed in equal shares to
every pixel *outside* the patch (the context, n^2 - k^2 pixels).  The two
prediction-difference baselines distribute D(B, score of the image with
patch j replaced) over the pixels *inside* the patch, averaged by how many
patches cover each pixel.

Accumulation runs at float64 in fixed grid order, so results are
bit-reproducible and independent of any batching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import ExplainConfig, SaliencyMap, as_image, difference
from .errors import (
    CpdaError,
    EnumerationBudgetExceeded,
    InsufficientBank,
    InvalidGeometry,
)
from .patching import (
    bilinear_resize,
    build_grid,
    coverage_counts,
    crop_patch_from_original,
    iter_patches,
)


# ---------------------------------------------------------------------------
# Feature-level analysis (exact, for small problems)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureProblem:
    """A predictor over feature vectors plus finite per-feature value priors.

    ``domains[i]`` lists the possible values of feature i and ``priors[i]``
    their probabilities (each prior vector sums to 1).  The priors drive the
    exact marginalization in :func:`pda_features_exact`.
    """

    predictor: Callable[[Sequence], float]
    domains: tuple
    priors: tuple

    def __post_init__(self):
        if len(self.domains) != len(self.priors):
            raise ValueError("domains and priors must have equal length")
        for i, (dom, pri) in enumerate(zip(self.domains, self.priors)):
            if len(dom) == 0 or len(dom) != len(pri):
                raise ValueError(f"feature {i}: domain/prior lengths bad")
            if abs(sum(pri) - 1.0) > 1e-9:
                raise ValueError(f"feature {i}: priors must sum to 1, got {sum(pri)}")

    @property
    def n_features(self) -> int:
        return len(self.domains)

    @classmethod
    def uniform_binary(cls, predictor, n: int) -> "FeatureProblem":
        """n features over {0, 1} with uniform priors."""
        return cls(
            predictor=predictor,
            domains=tuple((0, 1) for _ in range(n)),
            priors=tuple((0.5, 0.5) for _ in range(n)),
        )


def cpda_features(
    problem: FeatureProblem,
    x: Sequence,
    subset_predictor: Callable[[tuple, Sequence], float],
) -> np.ndarray:
    """Contextual relevance for every feature of instance ``x``.

    ``subset_predictor(indices, x)`` must return the model's score given only
    the features named by ``indices`` (here always a single feature).  For
    each feature i the context relevance is R_ctx[i] = f(x) - f(x_i); every
    feature then collects the equal shares of all contexts it belongs to:
    r_i = sum_{j != i} R_ctx[j] / (n - 1).
    """
    x = list(x)
    n = len(x)
    if n != problem.n_features:
        raise ValueError(f"instance has {n} features, problem expects {problem.n_features}")
    if n < 2:
        raise ValueError("contextual analysis needs at least 2 features")
    base = float(problem.predictor(x))
    r_ctx = np.array([base - float(subset_predictor((i,), x)) for i in range(n)])
    return (r_ctx.sum() - r_ctx) / (n - 1)


def pda_features_exact(
    problem: FeatureProblem,
    x: Sequence,
    measure: str = "probability",
    budget: int = 1_000_000,
) -> np.ndarray:
    """Prediction-difference relevance with exact prior marginalization.

    r_i = D(f(x), sum_k prior_i[k] * f(x with x_i = v_k)).  Aborts if the
    enumeration would exceed ``budget`` predictor evaluations.
    """
    x = list(x)
    n = len(x)
    if n != problem.n_features:
        raise ValueError(f"instance has {n} features, problem expects {problem.n_features}")
    evals = sum(len(dom) for dom in problem.domains)
    if evals > budget:
        raise EnumerationBudgetExceeded(
            f"exact marginalization needs {evals} evaluations, budget is {budget}"
        )
    base = float(problem.predictor(x))
    out = np.empty(n)
    for i in range(n):
        marginal = 0.0
        for value, prior in zip(problem.domains[i], problem.priors[i]):
            variant = list(x)
            variant[i] = value
            marginal += prior * float(problem.predictor(variant))
        out[i] = difference(base, marginal, measure)
    return out


# ---------------------------------------------------------------------------
# Image-level analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchScoreTable:
    """Per-patch bookkeeping of one contextual sweep for one class."""

    base_score: float
    standalone: np.ndarray   # f(patch_j)[class] per grid patch
    relevance: np.ndarray    # D(base, standalone_j) per grid patch


def _prepare(img, classifier, cfg: ExplainConfig):
    n = classifier.input_side
    k, s = cfg.patch_size, cfg.stride
    if k > n:
        raise InvalidGeometry(f"patch size {k} exceeds backend input side {n}")
    grid = build_grid(n, k, s)
    processed = bilinear_resize(as_image(img), n, n)
    return processed, grid


def _resolve_class(base_dist: np.ndarray, cfg: ExplainConfig, class_index) -> int:
    if class_index is None:
        class_index = cfg.class_selection
    if isinstance(class_index, str):
        if class_index != "auto":
            raise ValueError(f"bad class selection {class_index!r}")
        return int(np.argmax(base_dist))
    c = int(class_index)
    if not (0 <= c < len(base_dist)):
        raise ValueError(f"class index {c} outside backend's {len(base_dist)} classes")
    return c


def _classify_patch(classifier, image, index):
    try:
        return classifier.classify(image)
    except CpdaError as e:
        try:
            raise type(e)(f"patch {index}: {e}") from e
        except TypeError:
            raise e from None


def _cpda_sweep(img, classifier, cfg: ExplainConfig):
    """Base distribution plus the standalone distribution of every patch."""
    original = as_image(img)
    processed, grid = _prepare(original, classifier, cfg)
    base_dist = classifier.classify(processed)
    dists = np.empty((len(grid), len(base_dist)))
    for patch in iter_patches(grid):
        crop = crop_patch_from_original(original, grid.n, patch)
        dists[patch.grid_index] = _classify_patch(classifier, crop, patch.grid_index)
    return processed, grid, base_dist, dists


def _distribute_context(grid, relevances: np.ndarray) -> np.ndarray:
    """Add each patch's equal context share to every pixel outside the patch.

    Every pixel receives its additions in grid order, one IEEE add per
    contributing patch, which keeps the result bit-identical to the literal
    pixel-by-patch double loop.
    """
    n, k = grid.n, grid.k
    context = n * n - k * k
    if context == 0:
        raise InvalidGeometry("patch covers the whole image; the context is empty")
    values = np.zeros((n, n), dtype=np.float64)
    for j, (top, left) in enumerate(grid.positions):
        share = relevances[j] / context
        t, l = int(top), int(left)
        values[:t, :] += share
        values[t + k:, :] += share
        values[t:t + k, :l] += share
        values[t:t + k, l + k:] += share
    return values


def cpda_image(
    img,
    classifier,
    cfg: Optional[ExplainConfig] = None,
    class_index: Optional[int] = None,
):
    """Contextual saliency map for one class; returns (map, score table).

    Exactly ``len(grid) + 1`` classifier calls: one per patch plus the base.
    Negative map values mark context whose presence lowers the class score.
    """
    cfg = cfg or ExplainConfig()
    processed, grid, base_dist, dists = _cpda_sweep(img, classifier, cfg)
    c = _resolve_class(base_dist, cfg, class_index)
    maps = _cpda_reduce(grid, base_dist, dists, cfg, [c])
    return maps[0]


def cpda_image_multi(
    img,
    classifier,
    cfg: Optional[ExplainConfig] = None,
    classes: Union[Sequence[int], int, None] = None,
):
    """Maps for several classes from a single patch sweep.

    ``classes`` may be a list of indices or an integer m meaning the top-m
    classes of the base prediction.  The patch scores are computed once and
    reused for every class, so the classifier-call count does not depend on
    how many classes are explained.
    """
    cfg = cfg or ExplainConfig()
    processed, grid, base_dist, dists = _cpda_sweep(img, classifier, cfg)
    if classes is None:
        classes = [_resolve_class(base_dist, cfg, None)]
    elif isinstance(classes, int):
        m = min(classes, len(base_dist))
        classes = [int(i) for i in np.argsort(-base_dist, kind="stable")[:m]]
    else:
        classes = [_resolve_class(base_dist, cfg, c) for c in classes]
    return _cpda_reduce(grid, base_dist, dists, cfg, classes)


def _cpda_reduce(grid, base_dist, dists, cfg, classes):
    out = []
    for c in classes:
        base = float(base_dist[c])
        standalone = dists[:, c].copy()
        relevance = np.array(
            [difference(base, float(f), cfg.difference_measure) for f in standalone]
        )
        values = _distribute_context(grid, relevance)
        m = SaliencyMap(
            values=values,
            class_index=c,
            method="cpda",
            patch_size=cfg.patch_size,
            stride=cfg.stride,
            base_score=base,
        )
        out.append((m, PatchScoreTable(base, standalone, relevance)))
    return out


FILLERS = ("mean", "gray", "noise")


def _channel_means_u8(img: np.ndarray) -> np.ndarray:
    means = img.reshape(-1, img.shape[2]).mean(axis=0, dtype=np.float64)
    return np.floor(means + 0.5).astype(np.uint8)


def _fill_rect(buf: np.ndarray, top: int, left: int, k: int, filler: str, means, rng):
    if filler == "mean":
        buf[top:top + k, left:left + k] = means
    elif filler == "gray":
        buf[top:top + k, left:left + k] = 128
    elif filler == "noise":
        buf[top:top + k, left:left + k] = rng.integers(
            0, 256, size=(k, k, buf.shape[2]), dtype=np.uint8
        )
    else:
        raise ValueError(f"unknown filler {filler!r}")


def _distribute_covered(grid, diffs: np.ndarray) -> np.ndarray:
    """Average each pixel's covering-patch differences (zero where uncovered)."""
    n, k = grid.n, grid.k
    acc = np.zeros((n, n), dtype=np.float64)
    for j, (top, left) in enumerate(grid.positions):
        t, l = int(top), int(left)
        acc[t:t + k, l:l + k] += diffs[j]
    cov = coverage_counts(grid).astype(np.float64)
    return np.divide(acc, cov, out=np.zeros_like(acc), where=cov > 0)


def _pda_reduce(grid, base_dist, dists, cfg, classes, method):
    out = []
    for c in classes:
        base = float(base_dist[c])
        diffs = np.array(
            [difference(base, float(f), cfg.difference_measure) for f in dists[:, c]]
        )
        values = _distribute_covered(grid, diffs)
        out.append(
            SaliencyMap(
                values=values,
                class_index=c,
                method=method,
                patch_size=cfg.patch_size,
                stride=cfg.stride,
                base_score=base,
            )
        )
    return out


def _occlusion_sweep(img, classifier, cfg, filler, seed):
    processed, grid = _prepare(as_image(img), classifier, cfg)
    base_dist = classifier.classify(processed)
    means = _channel_means_u8(processed)
    rng = np.random.default_rng(seed)
    buf = np.empty_like(processed)
    dists = np.empty((len(grid), len(base_dist)))
    for patch in iter_patches(grid):
        np.copyto(buf, processed)
        _fill_rect(buf, patch.top, patch.left, patch.size, filler, means, rng)
        dists[patch.grid_index] = _classify_patch(classifier, buf, patch.grid_index)
    return processed, grid, base_dist, dists


def pda_image_occlusion(
    img,
    classifier,
    cfg: Optional[ExplainConfig] = None,
    class_index: Optional[int] = None,
    filler: str = "mean",
    seed: int = 0,
) -> SaliencyMap:
    """Occlusion baseline: relevance of a patch = score drop when it is
    replaced by a pre-defined filler (per-channel image mean, gray 128, or
    seeded uniform noise)."""
    cfg = cfg or ExplainConfig()
    if filler not in FILLERS:
        raise ValueError(f"unknown filler {filler!r}, want one of {FILLERS}")
    processed, grid, base_dist, dists = _occlusion_sweep(img, classifier, cfg, filler, seed)
    c = _resolve_class(base_dist, cfg, class_index)
    return _pda_reduce(grid, base_dist, dists, cfg, [c], "pda-occlusion")[0]


def pda_image_occlusion_multi(img, classifier, cfg=None, classes=None, filler="mean", seed=0):
    cfg = cfg or ExplainConfig()
    if filler not in FILLERS:
        raise ValueError(f"unknown filler {filler!r}, want one of {FILLERS}")
    processed, grid, base_dist, dists = _occlusion_sweep(img, classifier, cfg, filler, seed)
    classes = _expand_classes(base_dist, cfg, classes)
    return _pda_reduce(grid, base_dist, dists, cfg, classes, "pda-occlusion")


def _expand_classes(base_dist, cfg, classes):
    if classes is None:
        return [_resolve_class(base_dist, cfg, None)]
    if isinstance(classes, int):
        m = min(classes, len(base_dist))
        return [int(i) for i in np.argsort(-base_dist, kind="stable")[:m]]
    return [_resolve_class(base_dist, cfg, c) for c in classes]


def _bank_patches(bank, processed, grid):
    """Normalize the bank argument to (patches array, excludes_own flag)."""
    k = grid.k
    if bank is None:
        own = np.stack(
            [processed[int(t):int(t) + k, int(l):int(l) + k] for (t, l) in grid.positions]
        )
        return own, True
    if isinstance(bank, str) and bank == "self":
        return None, False
    patches = np.asarray(bank)
    if patches.ndim != 4 or patches.shape[1] != k or patches.shape[2] != k:
        raise ValueError(f"bank patches must be (m, {k}, {k}, c), got {patches.shape}")
    return patches.astype(np.uint8), False


def _marginal_sweep(img, classifier, cfg, samples, bank, seed):
    processed, grid = _prepare(as_image(img), classifier, cfg)
    base_dist = classifier.classify(processed)
    patches_bank, exclude_own = _bank_patches(bank, processed, grid)
    rng = np.random.default_rng(seed)
    buf = np.empty_like(processed)
    k = grid.k
    dists = np.empty((len(grid), len(base_dist)))
    for patch in iter_patches(grid):
        j, t, l = patch.grid_index, patch.top, patch.left
        if patches_bank is None:                       # "self" bank
            if samples > 1:
                raise InsufficientBank("self bank holds a single patch")
            fills = processed[t:t + k, l:l + k][None]
        else:
            pool = len(patches_bank)
            avail = pool - 1 if exclude_own else pool
            if avail < samples:
                raise InsufficientBank(
                    f"bank supplies {avail} patches for patch {j}, need {samples}"
                )
            if exclude_own:
                candidates = np.concatenate(
                    [np.arange(0, j), np.arange(j + 1, pool)]
                )
                picks = rng.choice(candidates, size=samples, replace=False)
            else:
                picks = rng.choice(pool, size=samples, replace=False)
            fills = patches_bank[picks]
        acc = np.zeros(len(base_dist), dtype=np.float64)
        for fill in fills:
            np.copyto(buf, processed)
            buf[t:t + k, l:l + k] = fill
            acc += _classify_patch(classifier, buf, j)
        dists[j] = acc / len(fills)
    return processed, grid, base_dist, dists


def pda_image_marginal(
    img,
    classifier,
    cfg: Optional[ExplainConfig] = None,
    class_index: Optional[int] = None,
    samples: int = 10,
    bank=None,
    seed: int = 0,
) -> SaliencyMap:
    """Marginal baseline: each patch is marginalized by averaging the scores
    of ``samples`` replacement fillings drawn from a patch bank.

    The default bank is the same image's other grid locations; pass "self"
    for the degenerate identity bank or an (m, k, k, c) array of patches.
    Makes ``samples * len(grid) + 1`` classifier calls, deterministic for a
    given seed.
    """
    cfg = cfg or ExplainConfig()
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    processed, grid, base_dist, dists = _marginal_sweep(img, classifier, cfg, samples, bank, seed)
    c = _resolve_class(base_dist, cfg, class_index)
    return _pda_reduce(grid, base_dist, dists, cfg, [c], "pda-marginal")[0]


def pda_image_marginal_multi(img, classifier, cfg=None, classes=None, samples=10, bank=None, seed=0):
    cfg = cfg or ExplainConfig()
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    processed, grid, base_dist, dists = _marginal_sweep(img, classifier, cfg, samples, bank, seed)
    classes = _expand_classes(base_dist, cfg, classes)
    return _pda_reduce(grid, base_dist, dists, cfg, classes, "pda-marginal")


def split_signed(m: SaliencyMap):
    """Split a signed map into its positive and negative parts.

    positive + negative == values exactly (elementwise max/min against 0).
    """
    pos = SaliencyMap(
        values=np.maximum(m.values, 0.0),
        class_index=m.class_index,
        method=m.method,
        patch_size=m.patch_size,
        stride=m.stride,
        base_score=m.base_score,
    )
    neg = SaliencyMap(
        values=np.minimum(m.values, 0.0),
        class_index=m.class_index,
        method=m.method,
        patch_size=m.patch_size,
        stride=m.stride,
        base_score=m.base_score,
    )
    return pos, neg
