"""
Per-iteration wall-clock measurement with the whitening cost isolated.

Measurements run single-threaded on the monotonic perf_counter clock;
warm-up steps are discarded before statistics are taken.
"""

import copy
import csv
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from autodiff import Graph, backward, forward_eval
from data import Dataset, epoch_batches
from exceptions import ConfigError
from model import build_model
from run_dtos import RunConfig, SliceplanConfig
from slicing import make_sliceplan, whiten_sliced_node
from training import SEGMENTS, Trainer

logger = logging.getLogger(__name__)

TIMING_FILE = "timing.csv"


@dataclass
class SegmentTiming:
    median_ms: float
    p90_ms: float

    @classmethod
    def of(cls, samples_ms: Sequence[float]) -> 'SegmentTiming':
        samples = np.asarray(samples_ms, dtype=np.float64)
        return cls(float(np.median(samples)), float(np.percentile(samples, 90)))


@dataclass
class BenchReport:
    """Step statistics plus the per-segment breakdown"""
    step: SegmentTiming
    segments: Dict[str, SegmentTiming]
    measured_steps: int
    samples_ms: List[float] = field(default_factory=list)

    @property
    def accounted_fraction(self) -> float:
        """Median segment sum over median step time."""
        return sum(s.median_ms for s in self.segments.values()) / self.step.median_ms


def bench_step(cfg: RunConfig, dataset: Dataset, warmup_steps: int = 2,
               measured_steps: int = 10) -> BenchReport:
    """
    Time full training steps (augment, forward, whitening, backward, optimizer).

    Raises:
        ConfigError: fewer than 10 measured steps
    """
    if measured_steps < 10:
        raise ConfigError(f"bench.measured_steps must be >= 10, got {measured_steps}")
    cfg = copy.deepcopy(cfg)
    cfg.train.workers = 1
    trainer = Trainer(cfg, build_model(cfg.encoder, cfg.projector, cfg.seed, np.dtype(cfg.train.dtype)))
    rng = np.random.default_rng(cfg.seed)
    batches: List[np.ndarray] = []
    steps: List[float] = []
    per_segment: Dict[str, List[float]] = {name: [] for name in SEGMENTS}
    for step in range(warmup_steps + measured_steps):
        if not batches:
            batches = epoch_batches(len(dataset), cfg.train.batch_origins, rng)
        indices = batches.pop(0)
        trainer.train_step(dataset.images[indices], indices)
        if step < warmup_steps:
            continue
        steps.append(trainer.step_ms)
        for name in SEGMENTS:
            per_segment[name].append(trainer.segment_ms[name])
    report = BenchReport(
        step=SegmentTiming.of(steps),
        segments={name: SegmentTiming.of(v) for name, v in per_segment.items()},
        measured_steps=measured_steps,
        samples_ms=steps,
    )
    logger.info(f"Step median {report.step.median_ms:.1f} ms, p90 {report.step.p90_ms:.1f} ms "
                f"(whitening {report.segments['whitening'].median_ms:.1f} ms, "
                f"{report.accounted_fraction:.0%} of the step accounted)")
    return report


def write_timing_csv(report: BenchReport, out_dir: str) -> str:
    """timing.csv with header segment,median_ms,p90_ms; the last row is the whole step."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, TIMING_FILE)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["segment", "median_ms", "p90_ms"])
        for name, timing in report.segments.items():
            writer.writerow([name, f"{timing.median_ms:.4f}", f"{timing.p90_ms:.4f}"])
        writer.writerow(["step", f"{report.step.median_ms:.4f}", f"{report.step.p90_ms:.4f}"])
    return path


@dataclass
class ScalingPoint:
    k: int
    rows: int
    median_ms: float
    ratio: float


def whitening_cost(k: int, sub_batches: int = 4, repeats: int = 10, seed: int = 0) -> float:
    """Median ms of sliced whitening forward + backward over sub_batches (even) sub-batches of 2k rows."""
    sub_size = 2 * k
    n_origins = sub_size * max(sub_batches // 2, 1)
    rng = np.random.default_rng(seed)
    plan = make_sliceplan(n_origins, SliceplanConfig(d=2, sub_size=sub_size), rng)
    V = rng.standard_normal((n_origins * 2, k))
    samples = []
    for _ in range(repeats):
        graph = Graph()
        z = whiten_sliced_node(graph, graph.input("V"), plan)
        graph.mean(graph.row_dot(z, z))
        forward_eval(graph, {"V": V})
        backward(graph)
        samples.append((graph.op_seconds["whitening"] + graph.op_seconds["whitening_backward"]) * 1000)
    return float(np.median(samples))


def whitening_scaling(ks: Sequence[int], sub_batches: int = 4, repeats: int = 10,
                      seed: int = 0) -> List[ScalingPoint]:
    """Whitening cost per embedding size at a fixed sub-batch count, with ratios to the previous size."""
    points = []
    previous = None
    for k in ks:
        t0 = time.perf_counter()
        cost = whitening_cost(k, sub_batches, repeats, seed)
        ratio = cost / previous if previous else 1.0
        points.append(ScalingPoint(k, 4 * k * max(sub_batches // 2, 1), cost, ratio))
        logger.info(f"k={k}: whitening {cost:.3f} ms (x{ratio:.2f}), measured in {time.perf_counter() - t0:.1f}s")
        previous = cost
    return points
