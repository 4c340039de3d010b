"""Command-line front end: batch runs, one-shot designs, exports, serving.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  stdout carries data and per-iteration progress; diagnostics go to
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import active_loop, data_io, design, graph
from .errors import ConfigError, DataError, DesignError, SolverError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphoed")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="adaptive labeling run with a simulated oracle")
    _add_dataset_flags(run)
    _add_config_flags(run)
    run.add_argument("--out", type=Path, default=Path("runs/latest"),
                     help="output directory for records.jsonl, labels.csv, state.npz")
    run.add_argument("--initial-labels-file", type=Path, default=None,
                     help="JSONL of {'index': ...} rows used as the initial label set")
    run.add_argument("--label-noise", type=float, default=0.0,
                     help="Gaussian noise level on simulated one-hot answers")
    run.add_argument("--uncertainty-probes", type=int, default=None,
                     help="probe count for the exported uncertainty diagonal")

    dsg = sub.add_parser("design", help="one-shot label-free design")
    _add_dataset_flags(dsg)
    dsg.add_argument("--config", type=Path, default=None)
    dsg.add_argument("--alpha", type=float, default=None)
    dsg.add_argument("--beta", type=float, default=None)
    dsg.add_argument("--tau", type=float, default=None)
    dsg.add_argument("--eta", type=int, default=None)
    dsg.add_argument("--k-neighbors", type=int, default=None)
    dsg.add_argument("--budget", type=int, default=None)
    dsg.add_argument("--seed", type=int, default=None)
    dsg.add_argument("--out", type=Path, default=Path("design.jsonl"))

    exp = sub.add_parser("export", help="write the pseudo-label CSV from a saved state")
    exp.add_argument("state_path", type=Path)
    exp.add_argument("--format", choices=["csv"], default="csv")
    exp.add_argument("--out", type=Path, default=None, help="default: stdout")

    srv = sub.add_parser("serve", help="run the labeling HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8321)
    srv.add_argument("--data-dir", type=Path, default=Path("runs/server"))
    srv.add_argument("--ui-dir", type=Path, default=None,
                     help="serve this directory (the built frontend) at /ui")
    return parser


def _add_dataset_flags(p: argparse.ArgumentParser):
    p.add_argument("--dataset", choices=["blobs", "csv", "idx"], default="blobs")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--csv", type=Path, default=None)
    p.add_argument("--has-labels", action="store_true")
    p.add_argument("--images", type=Path, default=None, help="IDX image file")
    p.add_argument("--labels-file", type=Path, default=None, help="IDX label file")
    p.add_argument("--subset-n", type=int, default=None)
    p.add_argument("--pca-dim", type=int, default=None)
    p.add_argument("--data-seed", type=int, default=None,
                   help="dataset generation seed; defaults to --seed")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--batch", type=int, default=None, dest="batch_size")
    p.add_argument("--policy", choices=list(active_loop.POLICIES), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--initial-per-class", type=int, default=None)
    p.add_argument("--certainty-stop", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--eta", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--k-neighbors", type=int, default=None)
    p.add_argument("--probe-count", type=int, default=None)


def _merge_config(args, extra: dict | None = None) -> active_loop.LoopConfig:
    """Config-file values first, flags override, per conventional precedence."""
    raw: dict = {}
    if args.config is not None:
        tomllib = active_loop.tomllib
        try:
            with open(args.config, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"no such config file: {args.config}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    for key in ("budget", "batch_size", "policy", "seed", "initial_per_class",
                "certainty_stop", "tau", "eta", "alpha", "sigma", "beta",
                "k_neighbors", "probe_count"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if extra:
        raw.update(extra)
    raw.setdefault("seed", 0)
    return active_loop.config_from_dict(raw, source="cli")


def _load_dataset(args) -> data_io.Dataset:
    seed = args.data_seed
    if seed is None:
        seed = getattr(args, "seed", None) or 0
    if args.dataset == "blobs":
        ds = data_io.make_blobs_2d(args.n, args.classes, seed=seed)
    elif args.dataset == "csv":
        if args.csv is None:
            raise ConfigError("--csv is required with --dataset csv")
        ds = data_io.load_csv(args.csv, has_labels=args.has_labels)
    else:
        if args.images is None or args.labels_file is None:
            raise ConfigError("--images and --labels-file are required with --dataset idx")
        ds = data_io.load_idx_mnist(args.images, args.labels_file,
                                    subset_n=args.subset_n, seed=seed)
    if args.pca_dim is not None:
        ds, _ = data_io.pca_reduce(ds, args.pca_dim)
    return ds


def _read_initial_indices(path: Path) -> tuple[int, ...]:
    indices = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                indices.append(int(json.loads(line)["index"]))
    if not indices:
        raise ConfigError(f"{path}: no indices found")
    return tuple(indices)


def cmd_run(args) -> int:
    dataset = _load_dataset(args)
    extra = {}
    if args.initial_labels_file is not None:
        extra["initial_indices"] = _read_initial_indices(args.initial_labels_file)
    config = _merge_config(args, extra)
    if dataset.true_labels is None:
        raise ConfigError("the batch runner needs ground-truth labels to simulate the oracle")
    oracle = active_loop.SimulatedOracle(
        dataset.true_labels, dataset.class_count,
        noise_sigma=args.label_noise, seed=config.seed,
    )
    runner = active_loop.LoopRunner(dataset, config, quiet=False)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        while not runner.finished:
            runner.submit(oracle.answer_batch(runner.pending))
        runner.finalize(probe_count=args.uncertainty_probes)
    except (SolverError, DesignError):
        # keep the partial record stream when a run aborts mid-loop
        data_io.write_run_records(out / "records.jsonl", runner.records)
        raise
    data_io.write_run_records(out / "records.jsonl", runner.records)
    run_state = active_loop.RunState(
        state=runner.state,
        estimate=runner.estimate,
        class_count=dataset.class_count,
        ids=dataset.ids,
        label_values=dataset.label_values,
        display_xy=dataset.display_xy,
        config_dict=active_loop.config_to_dict(config),
    )
    active_loop.save_run_state(out / "state.npz", run_state)
    (out / "labels.csv").write_text(run_state.export_csv())
    if runner.last_eval is not None:
        excluded = runner.last_batch.excluded if runner.last_batch else []
        design.write_design_scores_jsonl(out / "design_scores.jsonl",
                                         runner.last_eval.gradient, excluded)
    final = runner.records[-1]
    acc = final.clustering_accuracy
    print(f"done labeled={final.labeled_count} iterations={final.iteration} "
          f"accuracy={'n/a' if acc is None else f'{acc:.4f}'}")
    return EXIT_OK


def cmd_design(args) -> int:
    dataset = _load_dataset(args)
    hp = active_loop.Hyperparams(
        tau=args.tau if args.tau is not None else 1e-2,
        eta=args.eta if args.eta is not None else 2,
        alpha=args.alpha if args.alpha is not None else 1.0,
        beta=args.beta if args.beta is not None else 0.0,
        k_neighbors=args.k_neighbors if args.k_neighbors is not None else 10,
    )
    hp.validate()
    if args.budget is None and hp.beta <= 0:
        raise ConfigError("design needs --budget or a positive --beta")
    g = graph.build_knn_graph(dataset, hp.k_neighbors)
    L = graph.build_regularizer(graph.build_laplacian(g), hp.tau, hp.eta)
    w = design.bayesian_design(
        L, alpha=hp.alpha, beta=hp.beta, budget=args.budget,
        probe_seed=args.seed if args.seed is not None else 0,
    )
    selected = np.flatnonzero(w > 0)
    ranked = selected[np.argsort(-w[selected], kind="stable")]
    with open(args.out, "w") as fh:
        for i in ranked:
            fh.write(json.dumps({"index": int(i), "w": float(w[i])}) + "\n")
    print(f"selected {len(ranked)} points -> {args.out}")
    return EXIT_OK


def cmd_export(args) -> int:
    run_state = active_loop.load_run_state(args.state_path)
    text = run_state.export_csv()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    if args.ui_dir is not None and not args.ui_dir.is_dir():
        raise ConfigError(f"--ui-dir {args.ui_dir} is not a directory")
    app = create_app(args.data_dir, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "run": cmd_run,
        "design": cmd_design,
        "export": cmd_export,
        "serve": cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, DesignError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
