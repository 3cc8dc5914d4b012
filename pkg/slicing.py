"""
Batch slicing for sub-batch whitening.

Batch layout: position i*d + j holds view j of origin i. Partition j
collects every view j (one view per origin, so no positive pair shares a
partition). One random permutation of the origins is drawn and reused for
all d partitions, then each permuted partition is cut into consecutive
sub-batches of sub_size rows that are whitened independently.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

import linalg
from autodiff import Graph, Node
from exceptions import ConfigError, FactorizationError, ShapeError, WhiteningError
from run_dtos import SliceplanConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sliceplan:
    """Partition / sub-batch assignment of every batch position"""
    n_origins: int
    d: int
    sub_size: int
    permutation: np.ndarray
    partition: np.ndarray
    sub_batch: np.ndarray

    @property
    def size(self) -> int:
        return self.n_origins * self.d

    @property
    def subs_per_partition(self) -> int:
        return self.n_origins // self.sub_size

    def groups(self) -> List[np.ndarray]:
        """Row indices of each sub-batch, ordered by (partition, sub-batch)."""
        out = []
        for p in range(self.d):
            for s in range(self.subs_per_partition):
                origins = self.permutation[s * self.sub_size:(s + 1) * self.sub_size]
                out.append(origins * self.d + p)
        return out


def make_sliceplan(n_origins: int, cfg: SliceplanConfig, rng: np.random.Generator) -> Sliceplan:
    """
    Draw a slicing plan for a batch of n_origins * cfg.d views.

    Raises:
        ConfigError: if n_origins is not divisible by cfg.sub_size
    """
    sub_size = cfg.sub_size if cfg.sub_size is not None else n_origins
    if sub_size < 1 or n_origins % sub_size != 0:
        raise ConfigError(
            f"batch of {n_origins} origins cannot be split into sub-batches of {sub_size}"
        )
    permutation = rng.permutation(n_origins)
    sub_of_origin = np.empty(n_origins, dtype=np.int64)
    sub_of_origin[permutation] = np.arange(n_origins) // sub_size
    partition = np.tile(np.arange(cfg.d), n_origins)
    sub_batch = np.repeat(sub_of_origin, cfg.d)
    return Sliceplan(
        n_origins=n_origins,
        d=cfg.d,
        sub_size=sub_size,
        permutation=permutation,
        partition=partition,
        sub_batch=sub_batch,
    )


def whiten_sliced(V, plan: Sliceplan, ridge: Optional[float] = None, workers: int = 1) -> np.ndarray:
    """
    Whiten every sub-batch with its own statistics; rows keep their positions.

    Raises:
        WhiteningError: carrying the index of the failing sub-batch
    """
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[0] != plan.size:
        raise ShapeError(f"plan covers {plan.size} rows, batch has shape {V.shape}")
    groups = plan.groups()

    def _one(index: int):
        try:
            return linalg.whiten_batch(V[groups[index]], ridge)[0]
        except FactorizationError as e:
            raise WhiteningError(index, e) from e

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_one, range(len(groups))))
    else:
        parts = [_one(i) for i in range(len(groups))]
    Z = np.empty(V.shape, dtype=parts[0].dtype)
    for rows, part in zip(groups, parts):
        Z[rows] = part
    return Z


def whiten_sliced_node(graph: Graph, v: Node, plan: Sliceplan, ridge: Optional[float] = None) -> Node:
    """Graph version of whiten_sliced: one whitening node per sub-batch."""
    groups = plan.groups()
    parts = [
        graph.whitening(graph.slice_rows(v, rows), ridge=ridge, sub_batch=index)
        for index, rows in enumerate(groups)
    ]
    if len(parts) == 1 and np.array_equal(groups[0], np.arange(plan.size)):
        return parts[0]
    order = np.concatenate(groups)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return graph.slice_rows(graph.concat_rows(parts), inverse)
