"""
Desk-scale encoder E(.) and projection head g(.); f = g(E(x)).

smallconv: conv3x3 stride 2 -> batch_standardize (affine) -> relu per
block, then global average pooling. mlp: flatten, then linear ->
batch_standardize (affine) -> relu per layer. Layers that feed a
normalization carry no bias (it would be removed by the mean subtraction).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from autodiff import Graph, Node
from checkpoint import load_checkpoint, save_checkpoint, split_namespace
from exceptions import ShapeError
from run_dtos import EncoderConfig, ProjectorConfig

logger = logging.getLogger(__name__)


@dataclass
class SSLModel:
    """Encoder + projector configuration with parameters and BN running statistics"""
    encoder: EncoderConfig
    projector: ProjectorConfig
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def encoder_params(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith("encoder.")}


def _layer_shapes(encoder: EncoderConfig, projector: ProjectorConfig) -> List[Tuple[str, Tuple[int, ...], int]]:
    """(name, shape, fan_in) for every weight; BN affine pairs are listed with fan_in 0."""
    shapes = []
    if encoder.kind == "smallconv":
        cin = 3
        for b, cout in enumerate(encoder.conv_widths, start=1):
            shapes.append((f"encoder.conv{b}.weight", (cout, cin, 3, 3), cin * 9))
            shapes.append((f"encoder.bn{b}.gamma", (cout,), 0))
            shapes.append((f"encoder.bn{b}.beta", (cout,), 0))
            cin = cout
    else:
        fan_in = 3 * encoder.image_size * encoder.image_size
        for b, width in enumerate(list(encoder.mlp_hidden) + [encoder.h_dim], start=1):
            shapes.append((f"encoder.fc{b}.weight", (fan_in, width), fan_in))
            shapes.append((f"encoder.bn{b}.gamma", (width,), 0))
            shapes.append((f"encoder.bn{b}.beta", (width,), 0))
            fan_in = width
    shapes.append(("projector.fc1.weight", (encoder.h_dim, projector.hidden_dim), encoder.h_dim))
    shapes.append(("projector.bn1.gamma", (projector.hidden_dim,), 0))
    shapes.append(("projector.bn1.beta", (projector.hidden_dim,), 0))
    shapes.append(("projector.fc2.weight", (projector.hidden_dim, projector.out_dim), projector.hidden_dim))
    return shapes


def init_params(encoder: EncoderConfig, projector: ProjectorConfig, seed: int,
                dtype=np.float32) -> Dict[str, np.ndarray]:
    """
    Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, BN gamma = 1 and beta = 0.
    Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in in _layer_shapes(encoder, projector):
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, shape).astype(dtype)
    return params


def init_buffers(encoder: EncoderConfig, projector: ProjectorConfig, dtype=np.float32) -> Dict[str, np.ndarray]:
    """Running mean 0 and running variance 1 for every batch_standardize layer."""
    buffers = {}
    for name, shape, _ in _layer_shapes(encoder, projector):
        if name.endswith(".gamma"):
            key = name[:-len(".gamma")]
            buffers[f"{key}.running_mean"] = np.zeros(shape, dtype=dtype)
            buffers[f"{key}.running_var"] = np.ones(shape, dtype=dtype)
    return buffers


def build_model(encoder: EncoderConfig, projector: ProjectorConfig, seed: int, dtype=np.float32) -> SSLModel:
    model = SSLModel(encoder, projector, init_params(encoder, projector, seed, dtype),
                     init_buffers(encoder, projector, dtype))
    logger.info(f"Model initialised: {encoder.kind} encoder, {model.parameter_count:,} parameters")
    return model


def validate_images(images: np.ndarray, encoder: EncoderConfig) -> None:
    """Raise ShapeError unless images are (K, 3, S, S) at the configured resolution."""
    expected = (3, encoder.image_size, encoder.image_size)
    if images.ndim != 4 or tuple(images.shape[1:]) != expected:
        raise ShapeError(f"encoder expects images of shape (K, {', '.join(map(str, expected))}), got {images.shape}")


def encoder_forward(graph: Graph, model: SSLModel, x: Node) -> Node:
    """h = E(x): K x h_dim features."""
    cfg = model.encoder
    p = graph.parameter
    if cfg.kind == "smallconv":
        out = x
        for b in range(1, len(cfg.conv_widths) + 1):
            out = graph.conv2d(out, p(f"encoder.conv{b}.weight"), stride=2, padding=1)
            out = graph.batch_standardize(out, key=f"encoder.bn{b}",
                                          gamma=p(f"encoder.bn{b}.gamma"), beta=p(f"encoder.bn{b}.beta"))
            out = graph.relu(out)
        return graph.global_avg_pool(out)
    out = graph.flatten(x)
    for b in range(1, len(cfg.mlp_hidden) + 2):
        out = graph.matmul(out, p(f"encoder.fc{b}.weight"))
        out = graph.batch_standardize(out, key=f"encoder.bn{b}",
                                      gamma=p(f"encoder.bn{b}.gamma"), beta=p(f"encoder.bn{b}.beta"))
        out = graph.relu(out)
    return out


def projector_forward(graph: Graph, model: SSLModel, h: Node) -> Node:
    """v = g(h): linear -> batch_standardize -> relu -> linear."""
    p = graph.parameter
    out = graph.matmul(h, p("projector.fc1.weight"))
    out = graph.batch_standardize(out, key="projector.bn1",
                                  gamma=p("projector.bn1.gamma"), beta=p("projector.bn1.beta"))
    out = graph.relu(out)
    return graph.matmul(out, p("projector.fc2.weight"))


def build_forward(graph: Graph, model: SSLModel, images: np.ndarray) -> Tuple[Node, Node, Dict[str, np.ndarray]]:
    """Input node + encoder + projector; returns (h, v, bindings)."""
    validate_images(images, model.encoder)
    x = graph.input("images")
    h = encoder_forward(graph, model, x)
    v = projector_forward(graph, model, h)
    return h, v, {"images": images}


def save_model(path: str, model: SSLModel, extra_tensors: Optional[Dict[str, np.ndarray]] = None,
               meta: Optional[Dict] = None) -> str:
    tensors = {f"param/{k}": v for k, v in model.params.items()}
    tensors.update({f"buffer/{k}": v for k, v in model.buffers.items()})
    tensors.update(extra_tensors or {})
    return save_checkpoint(path, tensors, meta or {})


def load_model(path: str, encoder: EncoderConfig, projector: ProjectorConfig) -> Tuple[SSLModel, Dict[str, np.ndarray], Dict]:
    """Rebuild a model from a checkpoint; returns (model, all tensors, meta)."""
    tensors, meta = load_checkpoint(path)
    params = split_namespace(tensors, "param")
    expected = {name: shape for name, shape, _ in _layer_shapes(encoder, projector)}
    for name, shape in expected.items():
        if name not in params or params[name].shape != shape:
            got = params[name].shape if name in params else "missing"
            raise ShapeError(f"checkpoint {path}: parameter '{name}' expected {shape}, got {got}")
    model = SSLModel(encoder, projector, params, split_namespace(tensors, "buffer"))
    return model, tensors, meta
