"""Command-line surface: explain, demo-saturation, evaluate, compare.

Exit codes: 0 success, 1 failed self-test, 2 flag/usage errors, 3 backend
errors, 4 I/O errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import evaluation, explainers, rendering
from .classifiers import GroupDef, SaturatedOrClassifier, parse_backend_spec
from .core import ExplainConfig, write_map
from .errors import (
    BackendUnavailable,
    CpdaError,
    MalformedMap,
    ProtocolError,
    UnsupportedFormat,
)
from .explainers import FeatureProblem, cpda_features, pda_features_exact, split_signed
from .patching import bilinear_resize


def _parse_class_flag(text: str):
    if text == "auto":
        return ("auto", None)
    if text.startswith("all-topk="):
        m = int(text.split("=", 1)[1])
        if m < 1:
            raise ValueError("all-topk wants a positive count")
        return ("topk", m)
    return ("index", int(text))


def _add_common(p):
    p.add_argument("--backend", required=True, help="backend spec string")
    p.add_argument("--input-side", type=int, default=224, help="backend input size n")
    p.add_argument("--patch", type=int, default=20, help="patch side k")
    p.add_argument("--stride", type=int, default=5, help="stride s")
    p.add_argument("--samples", type=int, default=10, help="marginal sample count S")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=30.0, help="external backend timeout (s)")


def _write_outputs(prefix: str, m, processed):
    parent = os.path.dirname(prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_map(m, prefix + ".sal")
    rendering.save_png(rendering.heatmap(m), prefix + "-heat.png")
    rendering.save_png(rendering.overlay_mask(processed, m), prefix + "-overlay.png")
    if float(m.values.min()) < 0.0:
        _, neg = split_signed(m)
        rendering.save_png(rendering.heatmap(neg), prefix + "-neg-heat.png")


def cmd_explain(args) -> int:
    selection = _parse_class_flag(args.class_flag)
    backend = parse_backend_spec(args.backend, args.input_side, args.timeout)
    with backend:
        img = rendering.load_png(args.image)
        cfg = ExplainConfig(patch_size=args.patch, stride=args.stride)
        processed = bilinear_resize(img, args.input_side, args.input_side)
        before = backend.counter.snapshot()[0]
        t0 = time.perf_counter()
        if selection[0] == "topk":
            classes = selection[1]
        elif selection[0] == "index":
            classes = [selection[1]]
        else:
            classes = None
        if args.method == "cpda":
            pairs = explainers.cpda_image_multi(img, backend, cfg, classes)
            maps = [m for (m, _table) in pairs]
        elif args.method == "pda-occlusion":
            maps = explainers.pda_image_occlusion_multi(
                img, backend, cfg, classes, filler=args.filler, seed=args.seed
            )
        else:
            maps = explainers.pda_image_marginal_multi(
                img, backend, cfg, classes, samples=args.samples, seed=args.seed
            )
        seconds = time.perf_counter() - t0
        calls = backend.counter.snapshot()[0] - before
    if selection[0] == "topk":
        for m in maps:
            _write_outputs(f"{args.out_prefix}-class{m.class_index}", m, processed)
        summary = {
            "class": [m.class_index for m in maps],
            "base_score": [m.base_score for m in maps],
            "calls": calls,
            "seconds": round(seconds, 6),
        }
    else:
        _write_outputs(args.out_prefix, maps[0], processed)
        summary = {
            "class": maps[0].class_index,
            "base_score": maps[0].base_score,
            "calls": calls,
            "seconds": round(seconds, 6),
        }
    print(json.dumps(summary))
    return 0


# The saturation walkthrough doubles as a self-test: expected values are
# exact, so any drift in the analysis code flips the exit status.
def cmd_demo_saturation(args) -> int:
    problem = FeatureProblem.uniform_binary(lambda xs: float(max(xs)), 3)
    instance = (1, 1, 0)
    pda = pda_features_exact(problem, instance)
    cpda_r = cpda_features(
        problem, instance, lambda idx, xs: float(max(xs[i] for i in idx))
    )
    print("feature demo: 3 binary features, score = max(x1, x2, x3), instance (1, 1, 0)")
    print(f"  pda relevance per feature:  ({pda[0]:g}, {pda[1]:g}, {pda[2]:g})")
    print(f"  cpda relevance per feature: ({cpda_r[0]:g}, {cpda_r[1]:g}, {cpda_r[2]:g})")

    n = 64
    rects = [(8, 8, 16, 16), (40, 40, 16, 16)]
    groups = GroupDef.from_rects(rects, n)
    backend = SaturatedOrClassifier(groups, n)
    img = np.zeros((n, n, 3), dtype=np.uint8)
    for (t, l, h, w) in rects:
        img[t:t + h, l:l + w] = 255
    regions = rects + [(8, 40, 16, 16), (8, 8, 48, 48)]
    labels = ["group 1", "group 2", "empty corner", "both groups"]
    probe = evaluation.saturation_probe(img, regions, backend, class_index=0, filler="mean")
    print("image probe: noisy-OR backend, two bright 16x16 groups, regions blanked with the mean")
    print(f"  base score: {probe.base_score:g}")
    print(f"  {'region':<14} {'score':>10} {'delta':>10}")
    for label, score, delta in zip(labels, probe.scores, probe.deltas):
        print(f"  {label:<14} {score:>10.4f} {delta:>+10.4f}")

    ok = (
        pda.tolist() == [0.0, 0.0, 0.0]
        and cpda_r.tolist() == [0.5, 0.5, 0.0]
        and probe.deltas[0] == 0.0
        and probe.deltas[1] == 0.0
        and probe.deltas[2] == 0.0
        and probe.deltas[3] < 0.0
    )
    print("self-test:", "ok" if ok else "MISMATCH")
    return 0 if ok else 1


def cmd_evaluate(args) -> int:
    names = sorted(f for f in os.listdir(args.corpus) if f.lower().endswith(".png"))
    if not names:
        print(f"error: no PNG files in {args.corpus}", file=sys.stderr)
        return 2
    backend = parse_backend_spec(args.backend, args.input_side, args.timeout)
    with backend:
        corpus = [
            (name, rendering.load_png(os.path.join(args.corpus, name))) for name in names
        ]
        cfg = ExplainConfig(patch_size=args.patch, stride=args.stride)
        report = evaluation.evaluate_logodds(
            corpus, backend, args.method, cfg, samples=args.samples, seed=args.seed
        )
    out_parent = os.path.dirname(args.out)
    if out_parent:
        os.makedirs(out_parent, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    print(f"{args.method}: log odds ratio {report.mean:.6f} +- {report.std:.6f} "
          f"over {len(report.per_image)} images ({report.calls} calls)")
    if report.failures:
        print(f"warning: {len(report.failures)} images failed", file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in evaluation.METHODS:
            raise ValueError(f"unknown method {m!r}")
    backend = parse_backend_spec(args.backend, args.input_side, args.timeout)
    with backend:
        if args.image:
            img = rendering.load_png(args.image)
        else:
            rng = np.random.default_rng(args.seed)
            img = rng.integers(0, 256, (args.input_side, args.input_side, 3), dtype=np.uint8)
        cfg = ExplainConfig(patch_size=args.patch, stride=args.stride)
        rows = evaluation.run_cost_comparison(
            img, backend, methods, cfg, samples=args.samples, seed=args.seed
        )
    print(f"  {'method':<16} {'stride':>6} {'predicted':>10} {'measured':>10} {'seconds':>9}")
    for r in rows:
        print(f"  {r.method:<16} {r.s:>6} {r.predicted_calls:>10} {r.measured_calls:>10} "
              f"{r.seconds:>9.3f}")
    by_method = {r.method: r for r in rows}
    if "cpda" in by_method and "pda-marginal" in by_method:
        measured = evaluation.speedup_ratio(by_method["pda-marginal"], by_method["cpda"])
        reference = args.samples * args.stride * args.stride
        print(f"  call ratio pda-marginal/cpda (base calls excluded): "
              f"{measured:g} (reference S*s^2 = {reference})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpda",
        description="Model-agnostic saliency maps for black-box image classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="explain one classification, write map + renders")
    p.add_argument("--image", required=True, help="input PNG")
    _add_common(p)
    p.add_argument("--method", choices=list(evaluation.METHODS), default="cpda")
    p.add_argument("--class", dest="class_flag", default="auto",
                   help="auto | <index> | all-topk=<m>")
    p.add_argument("--filler", choices=list(explainers.FILLERS), default="mean")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("demo-saturation", help="saturation walkthrough and self-test")
    p.set_defaults(func=cmd_demo_saturation)

    p = sub.add_parser("evaluate", help="log-odds evaluation over a PNG corpus")
    p.add_argument("--corpus", required=True, help="directory of PNG files")
    _add_common(p)
    p.add_argument("--method", choices=list(evaluation.METHODS), default="cpda")
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="predicted vs measured inference counts")
    p.add_argument("--methods", default="cpda,pda-occlusion,pda-marginal")
    _add_common(p)
    p.add_argument("--image", default=None, help="optional PNG (default: seeded noise)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BackendUnavailable, ProtocolError) as e:
        print(f"backend error: {e}", file=sys.stderr)
        return 3
    except (UnsupportedFormat, MalformedMap, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4
    except (CpdaError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
