#!/usr/bin/env python3
"""Sensitivity of the proposal count to the merge threshold.

Builds one planted scene, then sweeps tau (and optionally the anchor grid
size) reporting N_p after each pass. Useful for picking thresholds on new
data: too small fragments regions, too large collapses them.

    python3 scripts/tau_sweep.py --regions 3 --seed 3 --noise 0.2
"""

import argparse
import math
import sys

from attnseg.attention_core import aggregate, compute_weights
from attnseg.merging import MergeConfig, iterative_merge
from attnseg.synth import DEFAULT_CENSUS, generate_tensor_set, random_scene


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--regions", type=int, default=3)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--noise", type=float, default=0.2)
    parser.add_argument(
        "--tau", type=float, nargs="*",
        default=[0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, math.inf],
    )
    parser.add_argument("--grid", type=int, nargs="*", default=[16])
    args = parser.parse_args(argv)

    scene = random_scene(args.regions, 64, seed=args.seed, noise=args.noise)
    ts = generate_tensor_set(scene, DEFAULT_CENSUS)
    weights = compute_weights([t.resolution for t in ts.tensors])
    agg = aggregate(ts.tensors, weights, 64)

    print(f"regions={args.regions} seed={args.seed} noise={args.noise}")
    for grid in args.grid:
        counts = []
        for tau in args.tau:
            cfg = MergeConfig(grid_size=grid, threshold=tau)
            counts.append(len(iterative_merge(agg, cfg)))
        row = "  ".join(
            f"tau={tau:g}:{n}" for tau, n in zip(args.tau, counts)
        )
        print(f"grid={grid:3d}  {row}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
