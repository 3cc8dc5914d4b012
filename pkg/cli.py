"""
whitebed command line.

    python cli.py train       --config configs/wmse4.json --seed 0
    python cli.py eval-knn    --ckpt runs/wmse4/checkpoint.ckpt
    python cli.py eval-linear --ckpt runs/wmse4/checkpoint.ckpt
    python cli.py bench       --config configs/wmse2.json --ks 16,32,64
    python cli.py plot        --csv runs/wmse4/metrics.csv --cols loss,knn_acc --smooth 0.3
    python cli.py gen-data    --data-dir data/synthetic

Every command accepts --set section.key=value overrides (JSON values).
Module errors end the process with exit status 1 and a one-line diagnostic.
"""

import argparse
import csv
import logging
import os
import sys
from typing import Dict, List, Optional

import config
from benchmark import bench_step, whitening_scaling, write_timing_csv
from checkpoint import load_checkpoint
from config_manager import EVAL_CONFIG_FILE, parse_config, parse_overrides, save_resolved_config
from data import load_dataset, save_cifar_batch
from evaluation import fit_linear_probe, knn_classify, write_results
from exceptions import ConfigError, WhitebedError
from model import load_model
from plot_metrics import plot_columns
from run_dtos import RunConfig
from training import fit

logger = logging.getLogger(__name__)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="run seed (overrides the config)")
    parser.add_argument("--data-dir", help=f"dataset directory (default ${{WHITEBED_DATA}} or '{config.DATA_DIR}')")
    parser.add_argument("--out-dir", help="output directory for artifacts")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set train.epochs=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="whitebed", description="W-MSE self-supervised learning workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="self-supervised training")
    _add_run_flags(p)
    p.add_argument("--ckpt", help="resume from this checkpoint")

    for name, text in (("eval-linear", "linear probe on frozen features"),
                       ("eval-knn", "k-nearest-neighbour accuracy")):
        p = sub.add_parser(name, help=text)
        _add_run_flags(p)
        p.add_argument("--ckpt", required=True, help="trained (or initial) checkpoint")

    p = sub.add_parser("bench", help="per-step timing breakdown")
    _add_run_flags(p)
    p.add_argument("--ks", help="also measure whitening cost for these embedding sizes, e.g. 16,32,64")

    p = sub.add_parser("plot", help="SVG chart of metrics columns")
    p.add_argument("--csv", required=True, help="metrics CSV")
    p.add_argument("--cols", default="loss", help="comma-separated columns")
    p.add_argument("--smooth", type=float, default=0.0,
                   help="< 1: exponential moving average weight; >= 1: window length")
    p.add_argument("--out", help="SVG path (default: next to the CSV)")

    p = sub.add_parser("gen-data", help="write the synthetic dataset as binary batch files")
    _add_run_flags(p)
    return parser


def _run_config(args: argparse.Namespace, base: Optional[Dict] = None) -> RunConfig:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.data_dir:
        overrides["data.data_dir"] = args.data_dir
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    return parse_config(args.config, overrides, base=base)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    train_set, test_set = load_dataset(cfg.data, cfg.seed)
    fit(cfg, train_set, test_set, cfg.out_dir, resume=args.ckpt)
    return 0


def _checkpoint_model(args: argparse.Namespace):
    _, meta = load_checkpoint(args.ckpt)
    cfg = _run_config(args, base=meta.get("config"))
    model, _, _ = load_model(args.ckpt, cfg.encoder, cfg.projector)
    # the training run owns resolved_config.json in its out_dir
    save_resolved_config(cfg, cfg.out_dir, EVAL_CONFIG_FILE)
    return cfg, model


def cmd_eval_knn(args: argparse.Namespace) -> int:
    cfg, model = _checkpoint_model(args)
    train_set, test_set = load_dataset(cfg.data, cfg.seed)
    accuracy = knn_classify(model, train_set, test_set, cfg.eval.knn_k)
    write_results(cfg.out_dir, "knn", train_set.name, accuracy, cfg,
                  {"k": cfg.eval.knn_k, "checkpoint": args.ckpt})
    print(f"{cfg.eval.knn_k}-NN accuracy: {accuracy:.4f}")
    return 0


def cmd_eval_linear(args: argparse.Namespace) -> int:
    cfg, model = _checkpoint_model(args)
    train_set, test_set = load_dataset(cfg.data, cfg.seed)
    result = fit_linear_probe(model, train_set, test_set, cfg.probe, cfg.seed)
    write_results(cfg.out_dir, "linear", train_set.name, result.accuracy, cfg,
                  {"train_accuracy": result.train_accuracy, "checkpoint": args.ckpt})
    print(f"Linear probe accuracy: {result.accuracy:.4f}")
    return 0


def _parse_ks(text: str) -> List[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError as e:
        raise ConfigError(f"--ks must be comma-separated integers, got '{text}'") from e
    if not ks or min(ks) < 1:
        raise ConfigError(f"--ks needs positive sizes, got '{text}'")
    return ks


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    save_resolved_config(cfg, cfg.out_dir)
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    report = bench_step(cfg, train_set, cfg.bench.warmup_steps, cfg.bench.measured_steps)
    path = write_timing_csv(report, cfg.out_dir)
    print(f"Step median {report.step.median_ms:.1f} ms, p90 {report.step.p90_ms:.1f} ms -> {path}")
    if args.ks:
        points = whitening_scaling(_parse_ks(args.ks), seed=cfg.seed)
        scaling_path = os.path.join(cfg.out_dir, "whitening_scaling.csv")
        with open(scaling_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["k", "rows", "median_ms", "ratio"])
            for point in points:
                writer.writerow([point.k, point.rows, f"{point.median_ms:.4f}", f"{point.ratio:.3f}"])
        for point in points:
            print(f"k={point.k}: {point.median_ms:.3f} ms (x{point.ratio:.2f})")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    cols = [c.strip() for c in args.cols.split(",") if c.strip()]
    path = plot_columns(args.csv, cols, args.smooth, args.out)
    print(f"Plot written to {path}")
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    overrides = ["data.dataset=\"synthetic\""] + list(args.set)
    args.set = overrides
    data_dir = args.data_dir or config.DATA_DIR
    args.data_dir = None
    cfg = _run_config(args)
    train_set, test_set = load_dataset(cfg.data, cfg.seed)
    save_cifar_batch(os.path.join(data_dir, "data_batch_1.bin"), train_set)
    save_cifar_batch(os.path.join(data_dir, "test_batch.bin"), test_set)
    print(f"✅ Wrote {len(train_set)} train and {len(test_set)} test images to {data_dir}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval-linear": cmd_eval_linear,
    "eval-knn": cmd_eval_knn,
    "bench": cmd_bench,
    "plot": cmd_plot,
    "gen-data": cmd_gen_data,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except WhitebedError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
