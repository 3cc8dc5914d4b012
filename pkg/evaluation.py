"""
Frozen-encoder evaluation: k-nearest-neighbour classification, linear
probe, and embedding statistics for the collapse diagnosis.

Features are taken from the encoder output h (projection head removed)
with batch_standardize in evaluation mode, so a sample's features do not
depend on the other samples it is extracted with.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from autodiff import Graph, backward, forward_eval
from config_manager import config_digest
from data import Dataset
from exceptions import ConfigError, ShapeError
from model import SSLModel, build_forward
from run_dtos import ProbeConfig, RunConfig, TrainConfig

logger = logging.getLogger(__name__)

FEATURE_CHUNK = 256


def extract_features(model: SSLModel, images: np.ndarray, projected: bool = False,
                     chunk: int = FEATURE_CHUNK) -> np.ndarray:
    """
    Encoder features h (or projections v) of images, float64, in chunks.

    Args:
        model: trained or initial model; its parameters and buffers are read only
        images: (n, 3, S, S)
        projected: return v = g(h) instead of h
        chunk: rows per forward pass
    """
    dtype = next(iter(model.params.values())).dtype
    parts = []
    for start in range(0, len(images), chunk):
        graph = Graph(model.params, model.buffers, training=False, dtype=dtype)
        h, v, bindings = build_forward(graph, model, images[start:start + chunk])
        graph.set_output(v if projected else h)
        parts.append(np.asarray(forward_eval(graph, bindings), dtype=np.float64))
    if not parts:
        width = model.projector.out_dim if projected else model.encoder.h_dim
        return np.zeros((0, width))
    return np.concatenate(parts)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def knn_predict(train_features: np.ndarray, train_labels: np.ndarray,
                test_features: np.ndarray, k: int) -> np.ndarray:
    """
    Majority vote of the k most cosine-similar training features.

    Neighbours with equal similarity are ordered by training index. A tied
    vote goes to the class whose tied neighbours have the larger summed
    similarity, then to the lower class id.

    Raises:
        ShapeError: k < 1 or fewer than k training points
    """
    if k < 1:
        raise ShapeError(f"k must be >= 1, got {k}")
    if len(train_features) < k:
        raise ShapeError(f"k={k} neighbours requested but only {len(train_features)} training points")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    sims = _unit_rows(np.asarray(test_features, dtype=np.float64)) @ \
        _unit_rows(np.asarray(train_features, dtype=np.float64)).T
    classes = int(train_labels.max()) + 1
    predictions = np.empty(len(sims), dtype=np.int64)
    for i, row in enumerate(sims):
        nearest = np.argsort(-row, kind="stable")[:k]
        votes = np.bincount(train_labels[nearest], minlength=classes)
        weight = np.bincount(train_labels[nearest], weights=row[nearest], minlength=classes)
        tied = np.flatnonzero(votes == votes.max())
        best = tied[weight[tied] == weight[tied].max()]
        predictions[i] = best.min()
    return predictions


def knn_classify(model: SSLModel, train_set: Dataset, test_set: Dataset, k: int) -> float:
    """Top-1 accuracy of k-NN on encoder features."""
    train_h = extract_features(model, train_set.images)
    test_h = extract_features(model, test_set.images)
    predictions = knn_predict(train_h, train_set.labels, test_h, k)
    return float(np.mean(predictions == test_set.labels))


@dataclass
class ProbeResult:
    weight: np.ndarray
    bias: np.ndarray
    accuracy: float
    train_accuracy: float


def probe_lr(epoch: int, cfg: ProbeConfig) -> float:
    """Exponential decay from lr_start (first epoch) to lr_end (last epoch)."""
    if cfg.epochs == 1:
        return cfg.lr_start
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / (cfg.epochs - 1))


def train_probe(train_h: np.ndarray, train_labels: np.ndarray, class_count: int,
                cfg: ProbeConfig, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Softmax regression on fixed features with Adam; returns (weight, bias)."""
    # deferred to keep training -> evaluation the only module-level edge
    from training import AdamState, adam_step

    rng = np.random.default_rng(seed)
    dim = train_h.shape[1]
    bound = 1.0 / np.sqrt(dim)
    params = {
        "probe.weight": rng.uniform(-bound, bound, (dim, class_count)),
        "probe.bias": np.zeros(class_count),
    }
    state = AdamState.zeros_like(params)
    opt_cfg = TrainConfig(weight_decay=cfg.weight_decay)
    labels = np.asarray(train_labels, dtype=np.int64)
    for epoch in range(cfg.epochs):
        lr = probe_lr(epoch, cfg)
        order = rng.permutation(len(train_h))
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            graph = Graph(params, dtype=np.float64)
            x = graph.input("features")
            logits = graph.add_bias(graph.matmul(x, graph.parameter("probe.weight")),
                                    graph.parameter("probe.bias"))
            graph.softmax_cross_entropy(logits, labels[rows])
            forward_eval(graph, {"features": train_h[rows]})
            adam_step(params, backward(graph), state, lr, opt_cfg)
    return params["probe.weight"], params["probe.bias"]


def fit_linear_probe(model: SSLModel, train_set: Dataset, test_set: Dataset,
                     cfg: ProbeConfig, seed: int = 0) -> ProbeResult:
    """
    Train a linear classifier on frozen, unaugmented encoder features and
    report top-1 accuracy on the test split.

    Raises:
        ConfigError: train and test splits disagree on the label set
    """
    if train_set.class_count != test_set.class_count:
        raise ConfigError(f"class mismatch: train has {train_set.class_count} classes, "
                          f"test has {test_set.class_count}")
    train_h = extract_features(model, train_set.images)
    test_h = extract_features(model, test_set.images)
    return probe_features(train_h, train_set.labels, test_h, test_set.labels,
                          train_set.class_count, cfg, seed)


def probe_features(train_h: np.ndarray, train_labels: np.ndarray, test_h: np.ndarray,
                   test_labels: np.ndarray, class_count: int, cfg: ProbeConfig,
                   seed: int = 0) -> ProbeResult:
    """Linear probe on precomputed features."""
    weight, bias = train_probe(train_h, train_labels, class_count, cfg, seed)
    train_acc = float(np.mean(np.argmax(train_h @ weight + bias, axis=1) == train_labels))
    test_acc = float(np.mean(np.argmax(test_h @ weight + bias, axis=1) == test_labels))
    logger.info(f"Linear probe: train accuracy {train_acc:.4f}, test accuracy {test_acc:.4f}")
    return ProbeResult(weight, bias, test_acc, train_acc)


def embedding_stats(features: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Per-dimension unbiased variance and the mean absolute off-diagonal
    correlation. A constant dimension counts as fully correlated.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError(f"embedding_stats needs at least 2 rows, got shape {x.shape}")
    variances = x.var(axis=0, ddof=1)
    k = x.shape[1]
    if k < 2:
        return variances, 0.0
    cov = np.cov(x, rowvar=False)
    std = np.sqrt(np.diag(cov))
    flat = std == 0
    corr = cov / np.outer(np.where(flat, 1.0, std), np.where(flat, 1.0, std))
    corr[flat, :] = 1.0
    corr[:, flat] = 1.0
    off = ~np.eye(k, dtype=bool)
    return variances, float(np.abs(corr[off]).mean())


def write_results(out_dir: str, protocol: str, dataset: str, accuracy: float,
                  cfg: RunConfig, extra: Optional[dict] = None) -> str:
    """Write results_<protocol>.json; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "protocol": protocol,
        "dataset": dataset,
        "seed": cfg.seed,
        "accuracy": accuracy,
        "config_digest": config_digest(cfg),
    }
    payload.update(extra or {})
    path = os.path.join(out_dir, f"results_{protocol}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.info(f"✅ {protocol} accuracy {accuracy:.4f} written to {path}")
    return path
