"""
Tests for the encoder and projection head (model.py)
"""

import numpy as np
import pytest

from autodiff import Graph, forward_eval, grad_check
from exceptions import ShapeError
from model import build_forward, build_model, init_params, load_model, save_model
from run_dtos import EncoderConfig, ProjectorConfig

TINY_MLP = EncoderConfig(kind="mlp", h_dim=6, mlp_hidden=[5], image_size=4)
TINY_CONV = EncoderConfig(kind="smallconv", h_dim=4, conv_widths=[3, 4], image_size=8)
TINY_HEAD = ProjectorConfig(hidden_dim=7, out_dim=3)


def forward(model, images, training=True):
    graph = Graph(model.params, model.buffers, training=training, dtype=model.params["projector.fc1.weight"].dtype)
    h, v, bindings = build_forward(graph, model, images)
    graph.set_output(v)
    out = forward_eval(graph, bindings)
    return h.value, out


def test_default_shapes():
    model = build_model(EncoderConfig(), ProjectorConfig(), seed=0)
    images = np.random.default_rng(0).uniform(0, 1, (8, 3, 32, 32)).astype(np.float32)
    h, v = forward(model, images)
    assert h.shape == (8, 256)
    assert v.shape == (8, 64)
    assert v.dtype == np.float32


def test_wider_embedding_and_mlp_encoder():
    model = build_model(EncoderConfig(kind="mlp", h_dim=256, mlp_hidden=[64]), ProjectorConfig(out_dim=128), seed=0)
    images = np.random.default_rng(1).uniform(0, 1, (4, 3, 32, 32)).astype(np.float32)
    h, v = forward(model, images)
    assert h.shape == (4, 256)
    assert v.shape == (4, 128)


def test_zero_input_gives_finite_output():
    model = build_model(TINY_CONV, TINY_HEAD, seed=0)
    _, v = forward(model, np.zeros((4, 3, 8, 8), dtype=np.float32))
    assert np.all(np.isfinite(v))


def test_forward_is_reproducible():
    images = np.random.default_rng(2).uniform(0, 1, (6, 3, 8, 8)).astype(np.float32)
    _, first = forward(build_model(TINY_CONV, TINY_HEAD, seed=3), images)
    _, second = forward(build_model(TINY_CONV, TINY_HEAD, seed=3), images)
    assert first.tobytes() == second.tobytes()


def test_init_is_deterministic_per_seed():
    first = init_params(TINY_CONV, TINY_HEAD, seed=0)
    second = init_params(TINY_CONV, TINY_HEAD, seed=0)
    other = init_params(TINY_CONV, TINY_HEAD, seed=1)
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])
    assert not np.array_equal(first["encoder.conv1.weight"], other["encoder.conv1.weight"])
    np.testing.assert_array_equal(first["projector.bn1.gamma"], np.ones(7))
    np.testing.assert_array_equal(first["projector.bn1.beta"], np.zeros(7))


def test_init_variance_matches_uniform_bound():
    params = init_params(EncoderConfig(), ProjectorConfig(), seed=0, dtype=np.float64)
    fan_in = {
        "encoder.conv2.weight": 32 * 9,
        "encoder.conv4.weight": 128 * 9,
        "projector.fc1.weight": 256,
        "projector.fc2.weight": 1024,
    }
    for name, fan in fan_in.items():
        bound = 1.0 / np.sqrt(fan)
        w = params[name]
        assert np.abs(w).max() <= bound
        assert w.var() == pytest.approx(bound ** 2 / 3, rel=0.05), name


@pytest.mark.parametrize("encoder", [TINY_MLP, TINY_CONV], ids=["mlp", "smallconv"])
def test_gradients_through_encoder_and_projector(encoder):
    rng = np.random.default_rng(4)
    model = build_model(encoder, TINY_HEAD, seed=5, dtype=np.float64)
    size = encoder.image_size
    images = rng.uniform(0, 1, (6, 3, size, size))
    graph = Graph(model.params, model.buffers, training=True, dtype=np.float64)
    _, v, bindings = build_forward(graph, model, images)
    c = graph.constant(rng.standard_normal((6, TINY_HEAD.out_dim)))
    graph.mean(graph.row_dot(v, c))
    assert grad_check(graph, bindings, eps=1e-5) <= 1e-4


def test_evaluation_forward_does_not_depend_on_batch():
    rng = np.random.default_rng(6)
    model = build_model(TINY_CONV, TINY_HEAD, seed=0, dtype=np.float64)
    images = rng.uniform(0, 1, (10, 3, 8, 8))
    forward(model, images, training=True)  # populate running statistics
    buffers = {k: v.copy() for k, v in model.buffers.items()}
    _, together = forward(model, images, training=False)
    _, alone = forward(model, images[3:4], training=False)
    np.testing.assert_allclose(alone[0], together[3], atol=1e-12)
    for key, value in buffers.items():
        np.testing.assert_array_equal(model.buffers[key], value)


def test_resolution_mismatch_is_rejected():
    model = build_model(TINY_CONV, TINY_HEAD, seed=0)
    graph = Graph(model.params, model.buffers)
    with pytest.raises(ShapeError):
        build_forward(graph, model, np.zeros((2, 3, 16, 16), dtype=np.float32))
    with pytest.raises(ShapeError):
        build_forward(graph, model, np.zeros((2, 8, 8), dtype=np.float32))


def test_save_and_load_round_trip(tmp_path):
    model = build_model(TINY_MLP, TINY_HEAD, seed=0)
    path = save_model(str(tmp_path / "model.ckpt"), model, meta={"epoch": 0})
    loaded, tensors, meta = load_model(path, TINY_MLP, TINY_HEAD)
    assert meta == {"epoch": 0}
    assert sorted(loaded.params) == sorted(model.params)
    for name in model.params:
        np.testing.assert_array_equal(loaded.params[name], model.params[name])
    for name in model.buffers:
        np.testing.assert_array_equal(loaded.buffers[name], model.buffers[name])
    with pytest.raises(ShapeError):
        load_model(path, TINY_MLP, ProjectorConfig(hidden_dim=7, out_dim=2))
