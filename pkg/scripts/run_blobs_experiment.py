#!/usr/bin/env python3
"""2D pool experiment: a-optimal selection vs the random baselines.

Runs the adaptive loop on the overlapping-blobs pool over several seeds and
prints the final clustering error per policy, writing the per-iteration
accuracy curves as JSONL (one file per policy and seed).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from graphoed import LoopConfig, SimulatedOracle, data_io, run_loop


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--classes", type=int, default=3)
    parser.add_argument("--budget", type=int, default=300)
    parser.add_argument("--batch", type=int, default=3)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--policies", nargs="+",
                        default=["a-optimal", "random", "balanced-random"])
    parser.add_argument("--out", type=Path, default=Path("runs/blobs"))
    args = parser.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    errors = {p: [] for p in args.policies}
    for seed in range(args.seeds):
        dataset = data_io.make_blobs_2d(args.n, args.classes, seed=seed)
        oracle = SimulatedOracle(dataset.true_labels, args.classes, seed=seed)
        for policy in args.policies:
            config = LoopConfig(budget=args.budget, batch_size=args.batch,
                                policy=policy, seed=seed, initial_per_class=1)
            _, _, records = run_loop(dataset, config, oracle)
            errors[policy].append(1.0 - records[-1].clustering_accuracy)
            data_io.write_run_records(args.out / f"{policy}-seed{seed}.jsonl", records)
            print(f"seed={seed} policy={policy} "
                  f"final_error={errors[policy][-1]:.4f}", flush=True)

    print()
    for policy, errs in errors.items():
        spread = f" +/- {np.std(errs, ddof=1):.4f}" if len(errs) > 1 else ""
        print(f"{policy}: mean error {np.mean(errs):.4f}{spread} over {len(errs)} seed(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
