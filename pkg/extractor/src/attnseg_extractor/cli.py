"""Extractor command line: one image in, a tensor set out.

    attnseg-extract --image photo.png --model CompVis/stable-diffusion-v1-4 \
        --timestep 300 --out tensors/

Requires the [sd] extras (diffusers + transformers) and model weights.
"""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractionJob, run_extraction
from .host import StableDiffusionHost


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="attnseg-extract", description=__doc__)
    parser.add_argument("--image", required=True)
    parser.add_argument("--model", required=True, help="checkpoint id or local path")
    parser.add_argument("--timestep", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--out", required=True)
    try:
        args = parser.parse_args(argv)
        host = StableDiffusionHost(args.model, device=args.device)
        result = run_extraction(
            host,
            ExtractionJob(
                image_path=args.image,
                output_dir=args.out,
                timestep=args.timestep,
                seed=args.seed,
            ),
        )
    except (RuntimeError, ValueError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    census = ",".join(f"{r}:{n}" for r, n in result.census.items())
    print(f"extracted {len(result.tensor_paths)} tensors ({census}) "
          f"-> {result.manifest_path}", file=sys.stderr)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
