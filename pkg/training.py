"""
Self-supervised training loop: Adam with linear warm-up and step drops,
multi-view batching, loss dispatch, metrics CSV and checkpoints.
"""

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from itertools import islice
from typing import Dict, List, Optional

import numpy as np

import config
from augment import augment_batch
from autodiff import Graph, backward, forward_eval
from config_manager import save_resolved_config
from data import Dataset, batch_origins
from evaluation import embedding_stats, extract_features, knn_classify
from exceptions import ConfigError, DivergenceError, TrainingError, WhitebedError, WhiteningError
from losses import build_loss
from model import SSLModel, build_forward, build_model, load_model, save_model
from run_dtos import RunConfig, TrainConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.ckpt"
METRICS_FILE = "metrics.csv"
SEGMENTS = ("augment", "forward", "whitening", "backward", "optimizer")


@dataclass
class MetricsRow:
    """One line of the metrics CSV"""
    epoch: int
    iteration: int
    loss: float
    lr: float
    ms_per_iter: Optional[float] = None
    knn_acc: Optional[float] = None
    linear_acc: Optional[float] = None

    def to_csv(self) -> List[str]:
        def fmt(value):
            return "" if value is None else repr(float(value))
        return [str(self.epoch), str(self.iteration), fmt(self.loss), fmt(self.lr),
                fmt(self.ms_per_iter), fmt(self.knn_acc), fmt(self.linear_acc)]


@dataclass
class AdamState:
    """First/second moments per parameter and the number of steps taken"""
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> 'AdamState':
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def lr_at(iteration: int, epoch: int, cfg: TrainConfig) -> float:
    """
    Learning rate for a global iteration inside an epoch.

    Linear ramp from 0 over the first warmup_iters iterations, then the base
    rate, times drop_factor once for every drop point (epochs - offset,
    clamped at 0) already reached.
    """
    lr = cfg.lr
    if cfg.warmup_iters and iteration < cfg.warmup_iters:
        lr *= iteration / cfg.warmup_iters
    for offset in cfg.drop_epochs:
        if epoch >= max(cfg.epochs - offset, 0):
            lr *= cfg.drop_factor
    return lr


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float, cfg: TrainConfig) -> AdamState:
    """
    One bias-corrected Adam update, in place.

    Weight decay is added to the gradient (wd * theta) before the moment
    update unless cfg.decoupled_weight_decay is set, in which case
    lr * wd * theta is subtracted after it. Parameters without a gradient
    are treated as having a zero gradient.

    Raises:
        DivergenceError: a gradient holds NaN or inf (nothing is updated)
    """
    for name in sorted(params):
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient", parameter=name)

    beta1, beta2 = cfg.betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    wd = cfg.weight_decay
    for name in sorted(params):
        theta = params[name]
        g = grads.get(name)
        g = np.zeros_like(theta) if g is None else g.astype(theta.dtype, copy=False)
        if wd and not cfg.decoupled_weight_decay:
            g = g + wd * theta
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        if wd and cfg.decoupled_weight_decay:
            update = update + lr * wd * theta
        theta -= update.astype(theta.dtype, copy=False)
    return state


class Trainer:
    """Owns the model, optimizer state and schedule position of one run"""

    def __init__(self, cfg: RunConfig, model: SSLModel, state: Optional[AdamState] = None,
                 epoch: int = 0, iteration: int = 0, batch: int = 0):
        self.cfg = cfg
        self.model = model
        self.state = state or AdamState.zeros_like(model.params)
        self.epoch = epoch
        self.iteration = iteration
        # batches of the current epoch already taken
        self.batch = batch
        self.dtype = np.dtype(cfg.train.dtype)
        self.segment_ms: Dict[str, float] = {}
        self.step_ms = 0.0

    def _step_rng(self) -> np.random.Generator:
        # slicing permutations and triplet negatives; independent of the view seeds
        return np.random.default_rng(np.random.SeedSequence([self.cfg.seed, self.epoch, self.iteration, 1]))

    def train_step(self, images: np.ndarray, indices: np.ndarray) -> MetricsRow:
        """
        Augment d views per origin, forward, loss, backward and Adam update.
        A failed step leaves parameters, BN buffers and Adam state untouched.

        Raises:
            TrainingError: whitening failed (carries epoch and iteration)
            DivergenceError: loss or a gradient is non-finite
        """
        buffers = dict(self.model.buffers)
        try:
            return self._train_step(images, indices)
        except WhitebedError:
            self.model.buffers.clear()
            self.model.buffers.update(buffers)
            raise

    def _train_step(self, images: np.ndarray, indices: np.ndarray) -> MetricsRow:
        train = self.cfg.train
        loss_cfg = train.loss
        n_origins = len(indices)
        t_start = time.perf_counter()

        views = augment_batch(images, indices, loss_cfg.d, self.cfg.seed, self.epoch, train.workers)
        t_aug = time.perf_counter()

        graph = Graph(self.model.params, self.model.buffers, training=True, dtype=self.dtype)
        _, v, bindings = build_forward(graph, self.model, views)
        build_loss(graph, v, loss_cfg, n_origins, self._step_rng())
        try:
            loss = float(forward_eval(graph, bindings)[0, 0])
        except WhiteningError as e:
            logger.error(f"❌ Whitening failed at epoch {self.epoch}, iteration {self.iteration}: {e}")
            raise TrainingError(str(e), self.epoch, self.iteration) from e
        if not np.isfinite(loss):
            logger.error(f"❌ Loss diverged at epoch {self.epoch}, iteration {self.iteration}: {loss}")
            raise DivergenceError(f"non-finite loss {loss}", self.epoch, self.iteration)
        t_fwd = time.perf_counter()

        grads = backward(graph)
        t_bwd = time.perf_counter()

        lr = lr_at(self.iteration, self.epoch, train)
        try:
            adam_step(self.model.params, grads, self.state, lr, train)
        except DivergenceError as e:
            logger.error(f"❌ Gradient of '{e.parameter}' diverged at epoch {self.epoch}, iteration {self.iteration}")
            raise DivergenceError("non-finite gradient", self.epoch, self.iteration, e.parameter) from e
        t_end = time.perf_counter()

        whitening = graph.op_seconds["whitening"] + graph.op_seconds["whitening_backward"]
        self.segment_ms = {
            "augment": (t_aug - t_start) * 1000,
            "forward": (t_fwd - t_aug - graph.op_seconds["whitening"]) * 1000,
            "whitening": whitening * 1000,
            "backward": (t_bwd - t_fwd - graph.op_seconds["whitening_backward"]) * 1000,
            "optimizer": (t_end - t_bwd) * 1000,
        }
        self.step_ms = (t_end - t_start) * 1000
        row = MetricsRow(
            epoch=self.epoch,
            iteration=self.iteration,
            loss=loss,
            lr=lr,
            ms_per_iter=self.step_ms if train.log_timing else None,
        )
        self.iteration += 1
        return row

    def run_epoch(self, dataset: Dataset, rows: Optional[List[MetricsRow]] = None) -> List[MetricsRow]:
        """
        The remaining full batches of the current epoch in a seeded order,
        starting after the self.batch batches already taken. Rows are appended
        to `rows` as steps finish, so the caller keeps them if a step fails.
        """
        rows = [] if rows is None else rows
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, self.epoch]))
        dropped = len(dataset) % self.cfg.train.batch_origins
        if dropped and self.epoch == 0 and self.batch == 0:
            logger.warning(f"⚠️ {dropped} trailing images do not fill a batch and are skipped every epoch")
        for indices, images in islice(batch_origins(dataset, self.cfg.train.batch_origins, rng), self.batch, None):
            rows.append(self.train_step(images, indices))
            self.batch += 1
        return rows

    def optimizer_tensors(self) -> Dict[str, np.ndarray]:
        tensors = {f"adam.m/{k}": v for k, v in self.state.m.items()}
        tensors.update({f"adam.v/{k}": v for k, v in self.state.v.items()})
        return tensors

    def save(self, path: str) -> str:
        meta = {
            "epoch": self.epoch,
            "iteration": self.iteration,
            "batch": self.batch,
            "adam_step": self.state.step,
            "config": self.cfg.to_dict(),
        }
        return save_model(path, self.model, self.optimizer_tensors(), meta)

    @classmethod
    def from_checkpoint(cls, cfg: RunConfig, path: str) -> 'Trainer':
        """Restore parameters, BN buffers, Adam moments and counters."""
        model, tensors, meta = load_model(path, cfg.encoder, cfg.projector)
        m = {k[len("adam.m/"):]: v for k, v in tensors.items() if k.startswith("adam.m/")}
        v = {k[len("adam.v/"):]: v for k, v in tensors.items() if k.startswith("adam.v/")}
        if set(m) != set(model.params) or set(v) != set(model.params):
            logger.warning(f"⚠️ {path} has no complete optimizer state, moments restart from zero")
            state = AdamState.zeros_like(model.params)
        else:
            state = AdamState(m, v, int(meta.get("adam_step", 0)))
        return cls(cfg, model, state, int(meta.get("epoch", 0)), int(meta.get("iteration", 0)),
                   int(meta.get("batch", 0)))


@dataclass
class FitResult:
    checkpoint_path: str
    metrics_path: str
    rows: List[MetricsRow] = field(default_factory=list)
    trainer: Optional[Trainer] = None


def _open_metrics(path: str, append: bool):
    exists = append and os.path.exists(path)
    handle = open(path, "a" if exists else "w", newline="", encoding="utf-8")
    writer = csv.writer(handle, lineterminator="\n")
    if not exists:
        writer.writerow(config.METRICS_COLUMNS)
    return handle, writer


def _write_rows(handle, writer, rows: List[MetricsRow]) -> None:
    for row in rows:
        writer.writerow(row.to_csv())
    handle.flush()


def fit(cfg: RunConfig, train_set: Dataset, test_set: Optional[Dataset] = None,
        out_dir: Optional[str] = None, resume: Optional[str] = None) -> FitResult:
    """
    Train for cfg.train.epochs epochs and write checkpoint.ckpt + metrics.csv.

    Args:
        cfg: validated run configuration
        train_set: unlabelled training images (labels only used for k-NN)
        test_set: queried by the periodic k-NN evaluation when eval.eval_every > 0
        out_dir: output directory (cfg.out_dir when omitted)
        resume: checkpoint to continue from (a checkpoint written by a failed
            run continues at the batch after the last completed step); metrics
            are appended

    Returns:
        FitResult with the written paths and the rows of this call
    """
    if len(train_set) == 0:
        raise TrainingError("training dataset is empty")
    if cfg.train.batch_origins > len(train_set):
        raise ConfigError(f"train.batch_origins={cfg.train.batch_origins} exceeds the {len(train_set)} training images")
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    save_resolved_config(cfg, out_dir)
    ckpt_path = os.path.join(out_dir, CHECKPOINT_FILE)
    metrics_path = os.path.join(out_dir, METRICS_FILE)

    if resume:
        trainer = Trainer.from_checkpoint(cfg, resume)
        logger.info(f"Resuming from {resume} at epoch {trainer.epoch}, iteration {trainer.iteration}")
    else:
        dtype = np.dtype(cfg.train.dtype)
        trainer = Trainer(cfg, build_model(cfg.encoder, cfg.projector, cfg.seed, dtype))

    handle, writer = _open_metrics(metrics_path, append=bool(resume))
    rows: List[MetricsRow] = []
    # rows of the current epoch not yet written
    epoch_rows: List[MetricsRow] = []
    try:
        while trainer.epoch < cfg.train.epochs:
            trainer.run_epoch(train_set, epoch_rows)
            epoch = trainer.epoch
            every = cfg.eval.eval_every
            if every and test_set is not None and epoch_rows and (epoch + 1) % every == 0:
                acc = knn_classify(trainer.model, train_set, test_set, cfg.eval.knn_k)
                epoch_rows[-1].knn_acc = acc
                logger.info(f"Epoch {epoch}: {cfg.eval.knn_k}-NN accuracy {acc:.4f}")
            if epoch_rows:
                logger.info(f"Epoch {epoch + 1}/{cfg.train.epochs} done: loss {epoch_rows[-1].loss:.4f}, "
                            f"lr {epoch_rows[-1].lr:.2e}")
            _write_rows(handle, writer, epoch_rows)
            rows.extend(epoch_rows)
            epoch_rows = []
            trainer.epoch += 1
            trainer.batch = 0
    except WhitebedError:
        logger.error(f"❌ Training stopped at epoch {trainer.epoch}, batch {trainer.batch}; "
                     f"checkpoint resumes from there")
        raise
    finally:
        _write_rows(handle, writer, epoch_rows)
        rows.extend(epoch_rows)
        handle.close()
        trainer.save(ckpt_path)

    if len(train_set) >= 2:
        sample = train_set.images[:min(len(train_set), 512)]
        v = extract_features(trainer.model, sample, projected=True)
        variances, corr = embedding_stats(v)
        logger.info(f"Embedding stats: min variance {variances.min():.4f}, "
                    f"mean |off-diagonal corr| {corr:.4f}")
    logger.info(f"✅ Training finished: {ckpt_path}, {metrics_path}")
    return FitResult(ckpt_path, metrics_path, rows, trainer)
