#!/usr/bin/env python3
"""Digit-scale pool experiment: IDX load, stratified subset, PCA-50, loop.

Point --images/--labels at real IDX files, or pass --synthetic to generate an
image-blob stand-in of the same shape (10 classes, 28x28) on the fly.
"""

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from graphoed import LoopConfig, SimulatedOracle, data_io, run_loop


def make_synthetic_idx(dir_path, seed, n_full=12000, C=10, radius=5.0, noise=0.3):
    angles = 2 * np.pi * np.arange(C) / C
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    covs = []
    for t in angles + np.pi / 4:
        rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        covs.append(rot @ np.diag([1.5, 0.6]) @ rot.T)
    latent = data_io.make_blobs_2d(n_full, C, means=means, covariances=covs, seed=seed)
    rng = np.random.default_rng(seed + 991)
    basis = rng.standard_normal((2, 784)) / np.sqrt(2)
    feats = latent.features @ basis + noise * rng.standard_normal((n_full, 784))
    lo, hi = feats.min(), feats.max()
    images = ((feats - lo) / (hi - lo) * 255).astype(np.uint8).reshape(n_full, 28, 28)
    images_path = Path(dir_path) / f"images-{seed}.idx"
    labels_path = Path(dir_path) / f"labels-{seed}.idx"
    data_io.write_idx_images(images_path, images)
    data_io.write_idx_labels(labels_path, latent.true_labels.astype(np.uint8))
    return images_path, labels_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", type=Path, default=None)
    parser.add_argument("--labels", type=Path, default=None)
    parser.add_argument("--synthetic", action="store_true")
    parser.add_argument("--subset-n", type=int, default=5000)
    parser.add_argument("--pca-dim", type=int, default=50)
    parser.add_argument("--budget", type=int, default=520)
    parser.add_argument("--batch", type=int, default=5)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--policies", nargs="+", default=["a-optimal", "balanced-random"])
    parser.add_argument("--out", type=Path, default=Path("runs/digits"))
    args = parser.parse_args(argv)
    if not args.synthetic and (args.images is None or args.labels is None):
        parser.error("pass --images/--labels or --synthetic")

    args.out.mkdir(parents=True, exist_ok=True)
    accs = {p: [] for p in args.policies}
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(args.seeds):
            if args.synthetic:
                images, labels = make_synthetic_idx(tmp, seed)
            else:
                images, labels = args.images, args.labels
            dataset = data_io.load_idx_mnist(images, labels,
                                             subset_n=args.subset_n, seed=seed)
            dataset, ratios = data_io.pca_reduce(dataset, args.pca_dim)
            print(f"seed={seed} pool n={dataset.n} m={dataset.m} "
                  f"(PCA keeps {ratios.sum():.1%} of variance)", flush=True)
            oracle = SimulatedOracle(dataset.true_labels, dataset.class_count, seed=seed)
            for policy in args.policies:
                config = LoopConfig(budget=args.budget, batch_size=args.batch,
                                    policy=policy, seed=seed, initial_per_class=2)
                _, _, records = run_loop(dataset, config, oracle)
                accs[policy].append(records[-1].clustering_accuracy)
                data_io.write_run_records(args.out / f"{policy}-seed{seed}.jsonl", records)
                print(f"seed={seed} policy={policy} "
                      f"final_accuracy={accs[policy][-1]:.4f}", flush=True)

    print()
    for policy, values in accs.items():
        spread = f" +/- {np.std(values, ddof=1):.4f}" if len(values) > 1 else ""
        print(f"{policy}: mean accuracy {np.mean(values):.4f}{spread} "
              f"over {len(values)} seed(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
