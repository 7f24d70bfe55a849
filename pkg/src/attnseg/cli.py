"""Command-line surface for the attention segmentation pipeline.

Commands: segment (manifest -> label mask), eval (mask dirs -> metric
report), synth-gen (planted fixture), render (boundary overlay), info
(manifest summary). Exit codes: 0 success, 1 user or data error,
2 internal invariant violation.

Pipeline defaults live here and are echoed into every run summary.
Summaries are deterministic; wall-clock timings go to a separate
timings.json and stderr so repeated runs stay byte-identical.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from .attention_core import WeightVector, aggregate, compute_weights
from .mask import (
    BinaryMask,
    LabelMask,
    load_label_raster,
    nms_mask,
    render_overlay,
    select_region,
    write_label_mask,
    write_pgm,
    write_png,
)
from .merging import MergeConfig, iterative_merge
from .metrics import evaluate_dataset
from .synth import DEFAULT_CENSUS, generate_tensor_set, random_scene
from .tensor_io import (
    AdztError,
    load_tensor_set,
    write_manifest,
    write_tensor_file,
)


class UserError(Exception):
    """Anything the invoker can fix: bad flags, bad paths, bad data."""


@dataclass
class PipelineConfig:
    grid_size: int = 16
    iterations: int = 3
    threshold: float = 1.0
    epsilon: float = 1e-12
    target_resolution: int | None = None  # default: manifest latent resolution
    out_width: int = 512
    out_height: int = 512
    weights: list[float] | None = None  # explicit; default: resolution-proportional
    point: tuple[int, int] | None = None

    def merge_config(self) -> MergeConfig:
        return MergeConfig(
            grid_size=self.grid_size,
            iterations=self.iterations,
            threshold=self.threshold,
            epsilon=self.epsilon,
        )

    def weight_vector(self, resolutions: list[int]) -> WeightVector:
        if self.weights is None:
            return compute_weights(resolutions)
        if len(self.weights) != len(resolutions):
            raise UserError(
                f"{len(self.weights)} explicit weights for "
                f"{len(resolutions)} tensors"
            )
        vec = WeightVector(np.asarray(self.weights, dtype=np.float64))
        try:
            vec.validate()
        except ValueError as exc:
            raise UserError(str(exc)) from None
        return vec


def thread_cap() -> int:
    raw = os.environ.get("ATTNSEG_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, os.cpu_count() or 1)


def _write_text(path, text) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _tau_repr(threshold: float):
    return threshold if math.isfinite(threshold) else "inf"


def _parse_tau(raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise UserError(f"--tau: not a number: {raw!r}") from None
    if math.isnan(value) or value < 0:
        raise UserError("--tau must be >= 0")
    return value


def _parse_out_size(raw: str) -> tuple[int, int]:
    try:
        w, h = raw.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise UserError(f"--out-size must look like 512x512, got {raw!r}") from None


def _parse_point(raw: str) -> tuple[int, int]:
    try:
        x, y = raw.split(",")
        return int(x), int(y)
    except ValueError:
        raise UserError(f"--point must look like X,Y, got {raw!r}") from None


def _parse_census(raw: str) -> dict[int, int]:
    census = {}
    try:
        for part in raw.split(","):
            res, count = part.split(":")
            census[int(res)] = int(count)
    except ValueError:
        raise UserError(
            f"--census must look like 64:5,32:5,16:5,8:1, got {raw!r}"
        ) from None
    return census


def build_pipeline_config(args) -> PipelineConfig:
    config = PipelineConfig()
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except OSError as exc:
            raise UserError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UserError(f"{args.config}: invalid JSON ({exc})") from None
        known = {f.name for f in fields(PipelineConfig)}
        for key, value in doc.items():
            if key not in known:
                raise UserError(f"{args.config}: unknown config key {key!r}")
            if key == "threshold" and value == "inf":
                value = math.inf
            if key == "point" and value is not None:
                value = tuple(value)
            setattr(config, key, value)
    # flags win over the config file
    if getattr(args, "tau", None) is not None:
        config.threshold = args.tau
    if getattr(args, "grid", None) is not None:
        config.grid_size = args.grid
    if getattr(args, "iters", None) is not None:
        config.iterations = args.iters
    if getattr(args, "epsilon", None) is not None:
        config.epsilon = args.epsilon
    if getattr(args, "target_res", None) is not None:
        config.target_resolution = args.target_res
    if getattr(args, "out_size", None) is not None:
        config.out_width, config.out_height = args.out_size
    if getattr(args, "weights", None) is not None:
        config.weights = [float(x) for x in args.weights.split(",")]
    if getattr(args, "point", None) is not None:
        config.point = args.point
    return config


# ---------------------------------------------------------------- segment

def cmd_segment(args) -> int:
    config = build_pipeline_config(args)
    os.makedirs(args.out, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    try:
        loaded = load_tensor_set(args.manifest)
    except FileNotFoundError as exc:
        raise UserError(str(exc)) from None
    timings["load_s"] = time.perf_counter() - t0

    target = config.target_resolution or loaded.manifest.latent_resolution
    weights = config.weight_vector([t.resolution for t in loaded.tensors])

    t0 = time.perf_counter()
    agg = aggregate(loaded.tensors, weights, target)
    timings["aggregate_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    proposals = iterative_merge(agg, config.merge_config())
    timings["merge_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    mask = nms_mask(proposals, config.out_width, config.out_height)
    mask_path = write_label_mask(mask, os.path.join(args.out, "mask"))
    timings["mask_s"] = time.perf_counter() - t0

    outputs = {"mask": os.path.basename(mask_path)}
    if config.point is not None:
        try:
            region = select_region(mask, config.point)
        except ValueError as exc:
            raise UserError(str(exc)) from None
        selected_path = os.path.join(args.out, "selected.pgm")
        write_pgm(region.membership.astype(np.uint8) * 255, selected_path)
        outputs["selected"] = "selected.pgm"

    summary = {
        "image_id": loaded.manifest.image_id,
        "num_proposals": len(proposals),
        "grid_size": config.grid_size,
        "iterations": config.iterations,
        "threshold": _tau_repr(config.threshold),
        "epsilon": config.epsilon,
        "target_resolution": target,
        "out_width": config.out_width,
        "out_height": config.out_height,
        "weights_mode": "explicit" if config.weights else "resolution-proportional",
        "num_tensors": len(loaded.tensors),
        "per_resolution_counts": {
            str(k): v for k, v in loaded.per_resolution_counts.items()
        },
        "renormalized_slices": loaded.renormalized_slices,
        "outputs": outputs,
        "timings_file": "timings.json",
    }
    _write_text(
        os.path.join(args.out, "summary.json"), json.dumps(summary, indent=2) + "\n"
    )
    _write_text(
        os.path.join(args.out, "timings.json"), json.dumps(timings, indent=2) + "\n"
    )
    print(
        f"segment: {loaded.manifest.image_id}: {len(proposals)} proposals "
        f"-> {mask_path}",
        file=sys.stderr,
    )
    return 0


# ------------------------------------------------------------------- eval

MASK_SUFFIXES = (".pgm", ".u16")


def _mask_stems(directory) -> dict[str, str]:
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise UserError(str(exc)) from None
    stems = {}
    for name in names:
        base, ext = os.path.splitext(name)
        if ext in MASK_SUFFIXES:
            stems[base] = os.path.join(directory, name)
    return stems


def cmd_eval(args) -> int:
    preds = _mask_stems(args.pred)
    truths = _mask_stems(args.truth)
    if not preds:
        raise UserError(f"no mask files in {args.pred}")
    missing_truth = sorted(set(preds) - set(truths))
    missing_pred = sorted(set(truths) - set(preds))
    if missing_truth or missing_pred:
        raise UserError(
            "unpaired stems: "
            f"missing truths {missing_truth}, missing predictions {missing_pred}"
        )
    stems = sorted(preds)
    pairs = []
    for stem in stems:
        pred_raster = load_label_raster(preds[stem])
        truth_raster = load_label_raster(truths[stem])
        mask = LabelMask(
            width=pred_raster.shape[1],
            height=pred_raster.shape[0],
            labels=pred_raster,
            num_labels=int(pred_raster.max()) + 1,
        )
        pairs.append((mask, truth_raster))
    try:
        report = evaluate_dataset(
            pairs, mode=args.mode, names=stems, workers=thread_cap()
        )
    except ValueError as exc:
        raise UserError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "report.json"), report.to_json() + "\n")
    _write_text(os.path.join(args.out, "report.txt"), report.to_text())
    print(report.to_text(), end="")
    return 0


# -------------------------------------------------------------- synth-gen

def cmd_synth_gen(args) -> int:
    if not 0.0 <= args.noise <= 1.0:
        raise UserError("--noise must lie in [0, 1]")
    census = _parse_census(args.census) if args.census else dict(DEFAULT_CENSUS)
    if args.size != 64 and args.census is None:
        census = {args.size: 5, args.size // 2: 5, args.size // 4: 5, args.size // 8: 1}
    try:
        scene = random_scene(
            args.regions, args.size, seed=args.seed, noise=args.noise,
            block=args.block,
        )
        result = generate_tensor_set(scene, census)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    for tensor, entry in zip(result.tensors, result.manifest.entries):
        write_tensor_file(tensor, os.path.join(args.out, entry.file))
    write_manifest(result.manifest, os.path.join(args.out, "manifest.json"))
    write_pgm(scene.region_map + 1, os.path.join(args.out, "truth.pgm"))
    print(
        f"synth-gen: {result.manifest.image_id}: {len(result.tensors)} tensors, "
        f"truth.pgm with {scene.num_regions} regions -> {args.out}",
        file=sys.stderr,
    )
    if result.dropped:
        print(f"synth-gen: dropped regions: {result.dropped}", file=sys.stderr)
    return 0


# ----------------------------------------------------------------- render

def cmd_render(args) -> int:
    from PIL import Image, UnidentifiedImageError

    try:
        image = np.asarray(Image.open(args.image).convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise UserError(f"cannot read image {args.image}: {exc}") from None
    try:
        labels = load_label_raster(args.mask)
    except (OSError, ValueError) as exc:
        raise UserError(str(exc)) from None
    mask = LabelMask(
        width=labels.shape[1],
        height=labels.shape[0],
        labels=labels,
        num_labels=int(labels.max()) + 1,
    )
    selected = None
    if args.truth:
        try:
            truth = load_label_raster(args.truth)
        except (OSError, ValueError) as exc:
            raise UserError(str(exc)) from None
        selected = BinaryMask(
            width=truth.shape[1], height=truth.shape[0], membership=truth > 0
        )
    try:
        overlay = render_overlay(image, mask, selected, fill_opacity=args.opacity)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    write_png(overlay, args.out)
    print(f"render: {args.out}", file=sys.stderr)
    return 0


# ------------------------------------------------------------------- info

def cmd_info(args) -> int:
    loaded = load_tensor_set(args.manifest)
    manifest = loaded.manifest
    resolutions = [t.resolution for t in loaded.tensors]
    weights = compute_weights(resolutions)
    print(f"image_id: {manifest.image_id}")
    print(f"timestep: {manifest.timestep}")
    print(f"latent_resolution: {manifest.latent_resolution}")
    print(f"extractor_info: {manifest.extractor_info}")
    print("tensors:")
    for res, count in loaded.per_resolution_counts.items():
        idx = resolutions.index(res)
        print(f"  {count} x {res}x{res}  R({res}) = {weights.weights[idx]:.6f}")
    print(f"renormalized_slices: {loaded.renormalized_slices}")
    print(f"max_sum_drift: {loaded.max_sum_drift:.3e}")
    return 0


# ------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attnseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="manifest -> label mask")
    seg.add_argument("--manifest", required=True)
    seg.add_argument("--out", required=True)
    seg.add_argument("--config", help="JSON file with PipelineConfig fields")
    seg.add_argument("--tau", type=_parse_tau)
    seg.add_argument("--grid", type=int)
    seg.add_argument("--iters", type=int)
    seg.add_argument("--epsilon", type=float)
    seg.add_argument("--target-res", dest="target_res", type=int)
    seg.add_argument("--out-size", dest="out_size", type=_parse_out_size)
    seg.add_argument("--point", type=_parse_point)
    seg.add_argument("--weights", help="comma-separated explicit weights")
    seg.set_defaults(func=cmd_segment)

    ev = sub.add_parser("eval", help="mask directories -> metric report")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--mode", choices=("matched", "point"), default="matched")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    gen = sub.add_parser("synth-gen", help="generate a planted fixture")
    gen.add_argument("--regions", type=int, required=True)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--size", type=int, default=64)
    gen.add_argument("--block", type=int, default=8)
    gen.add_argument("--census", help="resolution:count list, e.g. 64:5,32:5,16:5,8:1")
    gen.set_defaults(func=cmd_synth_gen)

    ren = sub.add_parser("render", help="draw mask boundaries over an image")
    ren.add_argument("--image", required=True)
    ren.add_argument("--mask", required=True)
    ren.add_argument("--truth")
    ren.add_argument("--opacity", type=float, default=0.0)
    ren.add_argument("--out", required=True)
    ren.set_defaults(func=cmd_render)

    inf = sub.add_parser("info", help="summarize a tensor-set manifest")
    inf.add_argument("--manifest", required=True)
    inf.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UserError, AdztError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    except Exception as exc:  # internal invariant violation
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
