"""Model-agnostic saliency toolkit.

Explains individual image classifications of any black-box classifier by
sliding a square patch over the image and comparing the classifier's score
on the full image against its scores on the isolated patches (contextual
prediction difference) or on the image with patches removed (the occlusion
and marginal prediction-difference baselines).
"""

from .core import (
    ExplainConfig,
    PatchGrid,
    SaliencyMap,
    as_image,
    difference,
    read_map,
    validate_distribution,
    write_map,
)
from .classifiers import (
    Classifier,
    ConstantClassifier,
    ExternalClassifier,
    GroupDef,
    InferenceCounter,
    LinearRegionClassifier,
    MaxGroupClassifier,
    SaturatedOrClassifier,
    linear_region_eval,
    max_group_eval,
    parse_backend_spec,
    saturated_or_eval,
)
from .patching import (
    PatchRef,
    bilinear_resize,
    build_grid,
    coverage_counts,
    crop_patch_from_original,
    iter_patches,
)
from .explainers import (
    FeatureProblem,
    PatchScoreTable,
    cpda_features,
    cpda_image,
    cpda_image_multi,
    pda_features_exact,
    pda_image_marginal,
    pda_image_occlusion,
    split_signed,
)
from .evaluation import (
    CostModel,
    LogOddsReport,
    SaturationProbeResult,
    evaluate_logodds,
    log_odds_ratio,
    perturb_at_argmax,
    predict_calls,
    run_cost_comparison,
    saturation_probe,
    speedup_ratio,
)
from .rendering import heatmap, load_png, overlay_mask, save_png
from . import errors

__version__ = "0.1.0"
