"""
W-MSE and the compared / ablated self-supervised losses.

Each loss is a graph construction over a K x k batch of projected features
laid out origin-major (row i*d + j is view j of origin i). The *_node
builders append nodes to an existing Graph and return the 1x1 loss node;
the plain functions evaluate a throwaway graph and return a float.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from autodiff import Graph, Node, forward_eval
from exceptions import ConfigError, NumericalError, ShapeError
from run_dtos import LossConfig
from slicing import make_sliceplan, whiten_sliced_node

logger = logging.getLogger(__name__)


def origin_ids(n_origins: int, d: int) -> np.ndarray:
    """Origin index of every batch position."""
    return np.repeat(np.arange(n_origins), d)


def positive_pairs(n_origins: int, d: int) -> Tuple[np.ndarray, np.ndarray]:
    """All N*d*(d-1)/2 unordered positive pairs as two row-index arrays."""
    first, second = np.triu_indices(d, k=1)
    base = (np.arange(n_origins) * d)[:, None]
    return (base + first).ravel(), (base + second).ravel()


def positive_partner(ids: np.ndarray) -> np.ndarray:
    """For every position, the first other position with the same origin."""
    ids = np.asarray(ids)
    partner = np.empty(ids.size, dtype=np.int64)
    for i, origin in enumerate(ids):
        same = np.flatnonzero(ids == origin)
        others = same[same != i]
        if others.size == 0:
            raise ShapeError(f"position {i} (origin {origin}) has no positive view in the batch")
        partner[i] = others[0]
    return partner


def pair_dist(z_i, z_j, normalize: bool = True) -> float:
    """
    Squared distance between two embeddings.

    With normalize set this is 2 - 2*cos(z_i, z_j), in [0, 4].

    Raises:
        NumericalError: zero vector with normalize
    """
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if normalize:
        n_i, n_j = np.linalg.norm(z_i), np.linalg.norm(z_j)
        if n_i == 0 or n_j == 0:
            raise NumericalError("pair_dist: cannot normalize a zero vector")
        z_i, z_j = z_i / n_i, z_j / n_j
    diff = z_i - z_j
    return float(diff @ diff)


def triplet_loss(z_i, z_j, z_k, margin: float) -> float:
    """Hinge max(z_i.z_k - z_i.z_j + margin, 0) for anchor i, positive j, negative k."""
    z_i, z_j, z_k = (np.asarray(z, dtype=np.float64) for z in (z_i, z_j, z_k))
    return float(max(z_i @ z_k - z_i @ z_j + margin, 0.0))


def _pair_mse(graph: Graph, z: Node, n_origins: int, d: int) -> Node:
    first, second = positive_pairs(n_origins, d)
    return graph.mse_mean(graph.slice_rows(z, first), graph.slice_rows(z, second))


def _average(graph: Graph, terms) -> Node:
    if len(terms) == 1:
        return terms[0]
    weight = 1.0 / len(terms)
    total = graph.scale_add(terms[0], alpha=weight)
    for term in terms[1:]:
        total = graph.scale_add(total, term, alpha=1.0, beta=weight)
    return total


def wmse_node(graph: Graph, v: Node, n_origins: int, cfg: LossConfig, rng: np.random.Generator) -> Node:
    """W-MSE: sliced whitening, optional L2 normalization, mean positive-pair distance."""
    terms = []
    for _ in range(cfg.sliceplan.iterations):
        plan = make_sliceplan(n_origins, cfg.sliceplan, rng)
        z = whiten_sliced_node(graph, v, plan, cfg.ridge)
        if cfg.normalize:
            z = graph.l2_normalize_rows(z)
        terms.append(_pair_mse(graph, z, n_origins, cfg.d))
    return _average(graph, terms)


def contrastive_node(graph: Graph, v: Node, ids: np.ndarray, cfg: LossConfig,
                     rng: Optional[np.random.Generator] = None) -> Node:
    """InfoNCE over all ordered anchors; optionally whitened and/or normalized first."""
    ids = np.asarray(ids)
    if cfg.tau is None or cfg.tau <= 0:
        raise ConfigError("contrastive loss needs tau > 0")
    z = v
    if cfg.whiten:
        n_origins = ids.size // cfg.d
        plan = make_sliceplan(n_origins, cfg.sliceplan, rng if rng is not None else np.random.default_rng(0))
        z = whiten_sliced_node(graph, z, plan, cfg.ridge)
    if cfg.normalize:
        z = graph.l2_normalize_rows(z)
    logits = graph.scale_add(graph.matmul(z, graph.transpose(z)), alpha=1.0 / cfg.tau)
    return graph.softmax_cross_entropy(logits, positive_partner(ids), exclude=np.eye(ids.size, dtype=bool))


def triplet_node(graph: Graph, v: Node, ids: np.ndarray, cfg: LossConfig, rng: np.random.Generator) -> Node:
    """Mean hinge over anchors, each with its positive and a random negative."""
    ids = np.asarray(ids)
    margin = 0.0 if cfg.margin is None else cfg.margin
    positives = positive_partner(ids)
    negatives = np.empty(ids.size, dtype=np.int64)
    for i, origin in enumerate(ids):
        candidates = np.flatnonzero(ids != origin)
        if candidates.size == 0:
            raise ShapeError("triplet loss needs at least two origins in the batch")
        negatives[i] = rng.choice(candidates)
    z = graph.l2_normalize_rows(v) if cfg.normalize else v
    pos = graph.row_dot(z, graph.slice_rows(z, positives))
    neg = graph.row_dot(z, graph.slice_rows(z, negatives))
    hinge = graph.relu(graph.scale_add(neg, pos, alpha=1.0, beta=-1.0, shift=margin))
    return graph.mean(hinge)


def bn_mse_node(graph: Graph, v: Node, n_origins: int, d: int, normalize: bool = True) -> Node:
    """Ablation: per-dimension batch standardization in place of whitening."""
    z = graph.batch_standardize(v)
    if normalize:
        z = graph.l2_normalize_rows(z)
    return _pair_mse(graph, z, n_origins, d)


def build_loss(graph: Graph, v: Node, cfg: LossConfig, n_origins: int,
               rng: np.random.Generator) -> Node:
    """Append the configured loss on top of projected features v."""
    ids = origin_ids(n_origins, cfg.d)
    if cfg.kind == "wmse":
        loss = wmse_node(graph, v, n_origins, cfg, rng)
    elif cfg.kind == "contrastive":
        loss = contrastive_node(graph, v, ids, cfg, rng)
    elif cfg.kind == "triplet":
        loss = triplet_node(graph, v, ids, cfg, rng)
    elif cfg.kind == "bn_mse":
        loss = bn_mse_node(graph, v, n_origins, cfg.d, cfg.normalize)
    else:
        raise ConfigError(f"unknown loss kind '{cfg.kind}'")
    graph.set_output(loss)
    return loss


def _evaluate(build, V) -> float:
    V = np.asarray(V, dtype=np.float64)
    graph = Graph()
    v = graph.input("V")
    graph.set_output(build(graph, v))
    return float(forward_eval(graph, {"V": V})[0, 0])


def wmse_loss(V, cfg: LossConfig, rng: Optional[np.random.Generator] = None) -> float:
    """W-MSE value of a K x k batch (K = N*d, origin-major layout)."""
    V = np.asarray(V)
    if V.shape[0] % cfg.d:
        raise ShapeError(f"batch of {V.shape[0]} rows is not a multiple of d={cfg.d}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return _evaluate(lambda g, v: wmse_node(g, v, V.shape[0] // cfg.d, cfg, rng), V)


def contrastive_loss(V, ids, cfg: LossConfig, rng: Optional[np.random.Generator] = None) -> float:
    """InfoNCE value of a K x k batch with the given origin ids."""
    return _evaluate(lambda g, v: contrastive_node(g, v, ids, cfg, rng), V)


def bn_mse_loss(V, ids, d: int, normalize: bool = True) -> float:
    """Value of the batch-standardization ablation loss."""
    ids = np.asarray(ids)
    if not np.array_equal(ids, origin_ids(ids.size // d, d)):
        raise ShapeError("bn_mse_loss expects the origin-major batch layout")
    return _evaluate(lambda g, v: bn_mse_node(g, v, ids.size // d, d, normalize), V)
