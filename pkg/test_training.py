"""
Tests for the training loop (training.py)
"""

import csv
import os

import numpy as np
import pytest

import autodiff
import linalg
import training
from checkpoint import load_checkpoint, split_namespace
from data import Dataset, load_dataset
from exceptions import ConfigError, DivergenceError, FactorizationError, TrainingError
from model import build_model
from run_dtos import TrainConfig
from training import AdamState, MetricsRow, Trainer, adam_step, fit, lr_at


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_lr_schedule_examples():
    cfg = TrainConfig(lr=3e-3, warmup_iters=500, epochs=200, drop_epochs=[50, 25])
    assert lr_at(0, 0, cfg) == 0.0
    assert lr_at(250, 0, cfg) == pytest.approx(1.5e-3)
    assert lr_at(5000, 149, cfg) == pytest.approx(3e-3)
    assert lr_at(5000, 150, cfg) == pytest.approx(3e-3 * 0.2)
    assert lr_at(5000, 175, cfg) == pytest.approx(3e-3 * 0.04)


def test_lr_drops_clamp_for_short_schedules():
    cfg = TrainConfig(lr=1.0, warmup_iters=0, epochs=30, drop_epochs=[50, 25])
    assert lr_at(10, 0, cfg) == pytest.approx(0.2)
    assert lr_at(10, 5, cfg) == pytest.approx(0.04)


def test_adam_first_step_is_bias_corrected():
    params = {"w": np.array([1.0])}
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": np.array([1.0])}, state, 0.1, TrainConfig(weight_decay=0.0))
    assert params["w"][0] == pytest.approx(0.9, abs=1e-6)
    assert state.step == 1


def test_zero_gradient_only_applies_weight_decay():
    cfg = TrainConfig(weight_decay=0.0)
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params), 0.1, cfg)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    coupled = {"w": np.array([1.0, -2.0])}
    adam_step(coupled, {}, AdamState.zeros_like(coupled), 0.1, TrainConfig(weight_decay=0.01))
    assert np.all(np.abs(coupled["w"]) < [1.0, 2.0])

    decoupled = {"w": np.array([1.0, -2.0])}
    adam_step(decoupled, {"w": np.zeros(2)}, AdamState.zeros_like(decoupled), 0.1,
              TrainConfig(weight_decay=0.01, decoupled_weight_decay=True))
    np.testing.assert_allclose(decoupled["w"], [1.0 - 1e-3, -2.0 + 2e-3])


def test_non_finite_gradient_names_parameter_and_updates_nothing():
    params = {"a": np.ones(2), "b": np.ones(2)}
    state = AdamState.zeros_like(params)
    with pytest.raises(DivergenceError) as excinfo:
        adam_step(params, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, state, 0.1, TrainConfig())
    assert excinfo.value.parameter == "b"
    np.testing.assert_array_equal(params["a"], np.ones(2))
    assert state.step == 0


def test_metrics_row_leaves_unevaluated_columns_empty():
    row = MetricsRow(epoch=1, iteration=7, loss=0.5, lr=1e-3)
    assert row.to_csv() == ["1", "7", "0.5", "0.001", "", "", ""]


def test_train_step_feeds_n_times_d_views(tiny_run, monkeypatch):
    cfg = tiny_run(**{"loss.d": 4, "train.batch_origins": 16, "data.per_class": 8})
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    seen = []
    original = training.augment_batch

    def spy(*args, **kwargs):
        views = original(*args, **kwargs)
        seen.append(views.shape)
        return views

    monkeypatch.setattr(training, "augment_batch", spy)
    trainer = Trainer(cfg, build_model(cfg.encoder, cfg.projector, cfg.seed, np.float64))
    row = trainer.train_step(train_set.images[:16], np.arange(16))
    assert seen == [(64, 3, 32, 32)]
    assert np.isfinite(row.loss) and 0.0 <= row.loss <= 4.0
    assert (row.epoch, row.iteration) == (0, 0)
    assert trainer.iteration == 1
    assert set(trainer.segment_ms) == set(training.SEGMENTS)


def test_whitening_failure_reports_position(tiny_run, monkeypatch):
    cfg = tiny_run()
    train_set, _ = load_dataset(cfg.data, cfg.seed)

    def fail(x, ridge=None):
        raise FactorizationError(0)

    monkeypatch.setattr(linalg, "whiten_batch", fail)
    trainer = Trainer(cfg, build_model(cfg.encoder, cfg.projector, cfg.seed, np.float64), epoch=3, iteration=12)
    with pytest.raises(TrainingError) as excinfo:
        trainer.train_step(train_set.images[:8], np.arange(8))
    assert (excinfo.value.epoch, excinfo.value.iteration) == (3, 12)


def test_non_finite_loss_aborts(tiny_run, monkeypatch):
    cfg = tiny_run()
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    monkeypatch.setitem(autodiff.FORWARD, "mse_mean", lambda node, vals, graph: np.array([[np.nan]]))
    model = build_model(cfg.encoder, cfg.projector, cfg.seed, np.float64)
    before = {k: v.copy() for k, v in model.params.items()}
    with pytest.raises(DivergenceError):
        Trainer(cfg, model).train_step(train_set.images[:8], np.arange(8))
    for name, value in before.items():
        np.testing.assert_array_equal(model.params[name], value)


def test_fit_writes_metrics_and_checkpoint(tiny_run):
    cfg = tiny_run()
    train_set, test_set = load_dataset(cfg.data, cfg.seed)
    result = fit(cfg, train_set, test_set)
    assert os.path.exists(os.path.join(cfg.out_dir, "resolved_config.json"))
    with open(result.metrics_path, encoding="utf-8") as f:
        assert f.readline().strip() == "epoch,iter,loss,lr,ms_per_iter,knn_acc,linear_acc"
    rows = read_rows(result.metrics_path)
    assert [int(r["iter"]) for r in rows] == [0, 1, 2, 3]
    assert [int(r["epoch"]) for r in rows] == [0, 0, 1, 1]
    assert all(0.0 <= float(r["loss"]) <= 4.0 for r in rows)
    assert all(r["ms_per_iter"] == "" for r in rows)
    assert [r["knn_acc"] != "" for r in rows] == [False, True, False, True]
    assert float(rows[0]["lr"]) == 0.0 and float(rows[2]["lr"]) == pytest.approx(1e-3)
    _, meta = load_checkpoint(result.checkpoint_path)
    assert (meta["epoch"], meta["iteration"], meta["adam_step"]) == (2, 4, 4)


def test_timing_column_when_enabled(tiny_run):
    cfg = tiny_run(**{"train.log_timing": True, "train.epochs": 1, "eval.eval_every": 0})
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    rows = read_rows(fit(cfg, train_set).metrics_path)
    assert all(float(r["ms_per_iter"]) > 0 for r in rows)


def test_zero_epochs_checkpoint_equals_initialisation(tiny_run):
    cfg = tiny_run(**{"train.epochs": 0})
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    result = fit(cfg, train_set)
    tensors, _ = load_checkpoint(result.checkpoint_path)
    initial = build_model(cfg.encoder, cfg.projector, cfg.seed, np.float64)
    params = split_namespace(tensors, "param")
    assert sorted(params) == sorted(initial.params)
    for name, value in initial.params.items():
        np.testing.assert_array_equal(params[name], value)
    assert read_rows(result.metrics_path) == []


def test_identical_runs_give_identical_metrics(tiny_run, tmp_path):
    cfg = tiny_run(**{"eval.eval_every": 0})
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    first = fit(cfg, train_set, out_dir=str(tmp_path / "a"))
    second = fit(cfg, train_set, out_dir=str(tmp_path / "b"))
    with open(first.metrics_path, "rb") as a, open(second.metrics_path, "rb") as b:
        assert a.read() == b.read()
    for name, value in first.trainer.model.params.items():
        np.testing.assert_array_equal(second.trainer.model.params[name], value)


def test_resume_continues_with_identical_state(tiny_run, tmp_path):
    cfg = tiny_run()
    train_set, test_set = load_dataset(cfg.data, cfg.seed)
    straight = fit(cfg, train_set, test_set, out_dir=str(tmp_path / "straight"))

    resumed_dir = str(tmp_path / "resumed")
    half = fit(tiny_run(**{"train.epochs": 1}), train_set, test_set, out_dir=resumed_dir)
    resumed = fit(cfg, train_set, test_set, out_dir=resumed_dir, resume=half.checkpoint_path)

    with open(straight.metrics_path, "rb") as a, open(resumed.metrics_path, "rb") as b:
        assert a.read() == b.read()
    for name, value in straight.trainer.model.params.items():
        np.testing.assert_array_equal(resumed.trainer.model.params[name], value)
    for name, value in straight.trainer.state.m.items():
        np.testing.assert_array_equal(resumed.trainer.state.m[name], value)
    assert resumed.trainer.state.step == straight.trainer.state.step


def test_resume_after_mid_epoch_failure_matches_uninterrupted_run(tiny_run, tmp_path, monkeypatch):
    cfg = tiny_run(**{"train.epochs": 4, "eval.eval_every": 0})
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    straight = fit(cfg, train_set, out_dir=str(tmp_path / "straight"))

    step = Trainer.train_step

    def diverge_at_sixth_step(self, images, indices):
        if self.iteration == 5:
            raise DivergenceError("non-finite loss nan", self.epoch, self.iteration)
        return step(self, images, indices)

    failed_dir = str(tmp_path / "failed")
    monkeypatch.setattr(Trainer, "train_step", diverge_at_sixth_step)
    with pytest.raises(DivergenceError):
        fit(cfg, train_set, out_dir=failed_dir)
    monkeypatch.undo()

    ckpt = os.path.join(failed_dir, "checkpoint.ckpt")
    _, meta = load_checkpoint(ckpt)
    assert (meta["epoch"], meta["iteration"], meta["batch"], meta["adam_step"]) == (2, 5, 1, 5)
    assert [int(r["iter"]) for r in read_rows(os.path.join(failed_dir, "metrics.csv"))] == [0, 1, 2, 3, 4]

    resumed = fit(cfg, train_set, out_dir=failed_dir, resume=ckpt)
    assert [(r.epoch, r.iteration) for r in resumed.rows] == [(2, 5), (3, 6), (3, 7)]
    with open(straight.metrics_path, "rb") as a, open(resumed.metrics_path, "rb") as b:
        assert a.read() == b.read()
    for name, value in straight.trainer.model.params.items():
        np.testing.assert_array_equal(resumed.trainer.model.params[name], value)
    for name, value in straight.trainer.model.buffers.items():
        np.testing.assert_array_equal(resumed.trainer.model.buffers[name], value)
    assert resumed.trainer.state.step == straight.trainer.state.step == 8


def test_failed_step_leaves_buffers_untouched(tiny_run, monkeypatch):
    cfg = tiny_run()
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    trainer = Trainer(cfg, build_model(cfg.encoder, cfg.projector, cfg.seed, np.float64))
    trainer.train_step(train_set.images[:8], np.arange(8))
    before = {k: v.copy() for k, v in trainer.model.buffers.items()}
    monkeypatch.setitem(autodiff.FORWARD, "mse_mean", lambda node, vals, graph: np.array([[np.nan]]))
    with pytest.raises(DivergenceError):
        trainer.train_step(train_set.images[8:16], np.arange(8, 16))
    assert sorted(trainer.model.buffers) == sorted(before)
    for name, value in before.items():
        np.testing.assert_array_equal(trainer.model.buffers[name], value)


def test_fit_rejects_unusable_datasets(tiny_run):
    cfg = tiny_run()
    empty = Dataset(np.zeros((0, 3, 32, 32), dtype=np.float32), np.zeros(0, dtype=np.int64), 2)
    with pytest.raises(TrainingError):
        fit(cfg, empty)
    train_set, _ = load_dataset(cfg.data, cfg.seed)
    with pytest.raises(ConfigError):
        fit(cfg, train_set.subset(4))
