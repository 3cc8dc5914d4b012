"""
Minimal reverse-mode automatic differentiation over dense arrays.

A Graph is a Wengert list: nodes are appended in topological order while
the model and loss are built, forward_eval fills every node value in
insertion order, and backward walks the list in reverse, accumulating
gradients additively. Each op kind has one forward rule and one
vector-Jacobian rule in the FORWARD / BACKWARD tables.

The whitening node does not differentiate through the factorization; its
backward rule is the closed form in whitening_backward.
"""

import logging
import time
from collections import defaultdict
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import config
import linalg
from exceptions import (
    ConfigError,
    FactorizationError,
    GraphStateError,
    NumericalError,
    ShapeError,
    WhiteningError,
)

logger = logging.getLogger(__name__)

OP_KINDS = (
    "parameter", "input", "constant", "matmul", "add_bias", "relu",
    "batch_standardize", "l2_normalize_rows", "whitening", "mse_mean",
    "scale_add", "softmax_cross_entropy", "concat_rows", "slice_rows",
    "transpose", "row_dot", "mean", "conv2d", "global_avg_pool", "flatten",
)


class Node:
    """One record of the graph: op kind, inputs, value and accumulated grad"""

    __slots__ = ("index", "op", "inputs", "attrs", "name", "value", "grad", "cache")

    def __init__(self, index: int, op: str, inputs: Sequence['Node'], attrs: Dict, name: Optional[str]):
        self.index = index
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs
        self.name = name
        self.value: Optional[np.ndarray] = None
        self.grad: Optional[np.ndarray] = None
        self.cache: Dict = {}

    @property
    def label(self) -> str:
        return f"#{self.index} {self.op}" + (f" '{self.name}'" if self.name else "")

    def __repr__(self) -> str:
        shape = None if self.value is None else self.value.shape
        return f"Node({self.label}, shape={shape})"


def p_matrix(k: int) -> np.ndarray:
    """k x k mask with 1 below the diagonal, 1/2 on it and 0 above."""
    return np.tril(np.ones((k, k)), -1) + 0.5 * np.eye(k)


def whitening_backward(dL_dZ, V, stats: linalg.WhiteningStats) -> np.ndarray:
    """
    Gradient of the loss w.r.t. the raw batch V given dL/dZ, Z = W (V - mu).

    Inputs are row-major (K x k, one sample per row); internally the batch is
    handled with samples as columns (k x K):

        dL/dW     = dL/dZ . Vc^T
        dL/dSigma = -1/2 W^T (P o (dL/dW W^T) + (P o (dL/dW W^T))^T) W
        dL/dVc    = 2/(K-1) dL/dSigma . Vc + W^T dL/dZ

    followed by the mean-subtraction Jacobian (each sample's gradient minus
    the per-feature average over samples).
    """
    G = np.asarray(dL_dZ, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if G.shape != V.shape or V.ndim != 2:
        raise ShapeError(f"whitening_backward: dL_dZ {G.shape} and V {V.shape} must be equal 2-D shapes")
    if V.shape[1] != stats.dim:
        raise ShapeError(f"whitening_backward: V has {V.shape[1]} features, stats have {stats.dim}")
    K = V.shape[0]
    W = stats.w
    Vc = (V - stats.mu).T          # k x K
    Gz = G.T                       # k x K
    dW = Gz @ Vc.T
    A = p_matrix(stats.dim) * (dW @ W.T)
    dSigma = -0.5 * W.T @ (A + A.T) @ W
    dVc = (2.0 / (K - 1)) * dSigma @ Vc + W.T @ Gz
    dVc = dVc - dVc.mean(axis=1, keepdims=True)
    return dVc.T


# ---------------------------------------------------------------------------
# Forward rules: fn(node, values, graph) -> value
# ---------------------------------------------------------------------------

def _expect(node: Node, ok: bool, expected: str, actual) -> None:
    if not ok:
        raise ShapeError(f"{node.label}: expected {expected}, got {actual}")


def _fwd_matmul(node, vals, graph):
    a, b = vals
    _expect(node, a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0],
            f"(m, n) @ (n, p)", f"{a.shape} @ {b.shape}")
    return a @ b


def _fwd_add_bias(node, vals, graph):
    x, b = vals
    _expect(node, b.ndim == 1 and x.shape[-1] == b.shape[0] and x.ndim == 2,
            f"bias of length {x.shape[-1]} on a 2-D input", f"{x.shape} + {b.shape}")
    return x + b


def _fwd_relu(node, vals, graph):
    return np.maximum(vals[0], 0)


def _bn_axes(x: np.ndarray):
    if x.ndim == 2:
        return (0,), (1, -1)
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    raise ShapeError(f"batch_standardize expects 2-D or 4-D input, got {x.shape}")


def _fwd_batch_standardize(node, vals, graph):
    x = vals[0]
    axes, bshape = _bn_axes(x)
    key = node.attrs["key"]
    eps = node.attrs["eps"]
    if graph.training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if graph.update_buffers and key is not None:
            n = x.size // mean.size
            unbiased = var * n / max(n - 1, 1)
            m = config.BN_MOMENTUM
            run_mean = graph.buffers.get(f"{key}.running_mean")
            run_var = graph.buffers.get(f"{key}.running_var")
            if run_mean is None:
                run_mean, run_var = np.zeros_like(mean), np.ones_like(var)
            graph.buffers[f"{key}.running_mean"] = m * run_mean + (1 - m) * mean
            graph.buffers[f"{key}.running_var"] = m * run_var + (1 - m) * unbiased
    else:
        if f"{key}.running_mean" not in graph.buffers:
            raise GraphStateError(f"{node.label}: no running statistics for '{key}' in evaluation mode")
        mean = graph.buffers[f"{key}.running_mean"]
        var = graph.buffers[f"{key}.running_var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    node.cache["xhat"] = xhat
    node.cache["inv_std"] = inv_std
    node.cache["batch_stats"] = graph.training
    out = xhat
    if len(vals) == 3:
        gamma, beta = vals[1], vals[2]
        out = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return out.astype(x.dtype, copy=False)


def _fwd_l2_normalize_rows(node, vals, graph):
    x = vals[0]
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        row = int(np.flatnonzero(norms[:, 0] == 0)[0])
        raise NumericalError(f"{node.label}: row {row} has zero norm and cannot be normalized")
    node.cache["norms"] = norms
    return x / norms


def _fwd_whitening(node, vals, graph):
    x = vals[0]
    _expect(node, x.ndim == 2, "a 2-D batch", x.shape)
    t0 = time.perf_counter()
    try:
        z, stats = linalg.whiten_batch(x, node.attrs["ridge"])
    except FactorizationError as e:
        raise WhiteningError(node.attrs.get("sub_batch", 0), e) from e
    node.cache["stats"] = stats
    graph.op_seconds["whitening"] += time.perf_counter() - t0
    return z


def _fwd_mse_mean(node, vals, graph):
    a, b = vals
    _expect(node, a.shape == b.shape and a.ndim == 2, "two equal 2-D shapes", f"{a.shape} vs {b.shape}")
    diff = a - b
    node.cache["diff"] = diff
    return np.array([[np.sum(diff * diff) / a.shape[0]]], dtype=a.dtype)


def _fwd_scale_add(node, vals, graph):
    alpha, beta, shift = node.attrs["alpha"], node.attrs["beta"], node.attrs["shift"]
    out = alpha * vals[0] + shift
    if len(vals) == 2:
        _expect(node, vals[0].shape == vals[1].shape, "equal shapes", f"{vals[0].shape} vs {vals[1].shape}")
        out = out + beta * vals[1]
    return out


def _fwd_softmax_cross_entropy(node, vals, graph):
    logits = vals[0]
    labels = node.attrs["labels"]
    mask = node.attrs["exclude"]
    _expect(node, logits.ndim == 2 and labels.shape == (logits.shape[0],),
            f"(K, C) logits with K labels", f"{logits.shape} with {labels.shape} labels")
    masked = np.where(mask, -np.inf, logits) if mask is not None else logits
    shifted = masked - masked.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    probs = expd / denom
    rows = np.arange(logits.shape[0])
    losses = np.log(denom[:, 0]) - shifted[rows, labels]
    node.cache["probs"] = probs
    return np.array([[losses.mean()]], dtype=logits.dtype)


def _fwd_concat_rows(node, vals, graph):
    widths = {v.shape[1:] for v in vals}
    _expect(node, len(widths) == 1, "equal trailing shapes", [v.shape for v in vals])
    return np.concatenate(vals, axis=0)


def _fwd_slice_rows(node, vals, graph):
    return vals[0][node.attrs["rows"]]


def _fwd_transpose(node, vals, graph):
    _expect(node, vals[0].ndim == 2, "a 2-D input", vals[0].shape)
    return vals[0].T


def _fwd_row_dot(node, vals, graph):
    a, b = vals
    _expect(node, a.shape == b.shape and a.ndim == 2, "two equal 2-D shapes", f"{a.shape} vs {b.shape}")
    return np.sum(a * b, axis=1, keepdims=True)


def _fwd_mean(node, vals, graph):
    return np.array([[vals[0].mean()]], dtype=vals[0].dtype)


def _im2col(x: np.ndarray, size: int, stride: int, padding: int):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    K, C, Ho, Wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(K * Ho * Wo, C * size * size)
    return cols, (Ho, Wo), xp.shape


def _fwd_conv2d(node, vals, graph):
    x, w = vals
    _expect(node, x.ndim == 4 and w.ndim == 4 and x.shape[1] == w.shape[1],
            "(K, C, H, W) input and (F, C, s, s) weights", f"{x.shape} * {w.shape}")
    size, stride, padding = w.shape[2], node.attrs["stride"], node.attrs["padding"]
    cols, (Ho, Wo), padded_shape = _im2col(x, size, stride, padding)
    out = cols @ w.reshape(w.shape[0], -1).T
    node.cache.update(cols=cols, out_hw=(Ho, Wo), padded_shape=padded_shape)
    return out.reshape(x.shape[0], Ho, Wo, w.shape[0]).transpose(0, 3, 1, 2)


def _fwd_global_avg_pool(node, vals, graph):
    _expect(node, vals[0].ndim == 4, "a 4-D input", vals[0].shape)
    return vals[0].mean(axis=(2, 3))


def _fwd_flatten(node, vals, graph):
    return vals[0].reshape(vals[0].shape[0], -1)


# ---------------------------------------------------------------------------
# Backward rules: fn(node, grad, values, graph) -> list of input grads
# ---------------------------------------------------------------------------

def _bwd_matmul(node, g, vals, graph):
    a, b = vals
    return [g @ b.T, a.T @ g]


def _bwd_add_bias(node, g, vals, graph):
    return [g, g.sum(axis=0)]


def _bwd_relu(node, g, vals, graph):
    return [g * (vals[0] > 0)]


def _bwd_batch_standardize(node, g, vals, graph):
    x = vals[0]
    axes, bshape = _bn_axes(x)
    xhat, inv_std = node.cache["xhat"], node.cache["inv_std"]
    grads = []
    if len(vals) == 3:
        gamma = vals[1]
        dxhat = g * gamma.reshape(bshape)
        dgamma = np.sum(g * xhat, axis=axes)
        dbeta = np.sum(g, axis=axes)
    else:
        dxhat = g
    if node.cache["batch_stats"]:
        n = x.size // inv_std.size
        sum_d = dxhat.sum(axis=axes).reshape(bshape)
        sum_dx = (dxhat * xhat).sum(axis=axes).reshape(bshape)
        dx = inv_std.reshape(bshape) / n * (n * dxhat - sum_d - xhat * sum_dx)
    else:
        dx = dxhat * inv_std.reshape(bshape)
    grads.append(dx)
    if len(vals) == 3:
        grads.extend([dgamma, dbeta])
    return grads


def _bwd_l2_normalize_rows(node, g, vals, graph):
    y = node.value
    norms = node.cache["norms"]
    return [(g - y * np.sum(g * y, axis=1, keepdims=True)) / norms]


def _bwd_whitening(node, g, vals, graph):
    t0 = time.perf_counter()
    dx = whitening_backward(g, vals[0], node.cache["stats"])
    graph.op_seconds["whitening_backward"] += time.perf_counter() - t0
    return [dx.astype(vals[0].dtype, copy=False)]


def _bwd_mse_mean(node, g, vals, graph):
    diff = node.cache["diff"]
    da = g[0, 0] * 2.0 * diff / diff.shape[0]
    return [da, -da]


def _bwd_scale_add(node, g, vals, graph):
    grads = [node.attrs["alpha"] * g]
    if len(vals) == 2:
        grads.append(node.attrs["beta"] * g)
    return grads


def _bwd_softmax_cross_entropy(node, g, vals, graph):
    probs = node.cache["probs"].copy()
    labels = node.attrs["labels"]
    probs[np.arange(len(labels)), labels] -= 1.0
    return [g[0, 0] * probs / len(labels)]


def _bwd_concat_rows(node, g, vals, graph):
    bounds = np.cumsum([v.shape[0] for v in vals])[:-1]
    return np.split(g, bounds, axis=0)


def _bwd_slice_rows(node, g, vals, graph):
    dx = np.zeros_like(vals[0])
    np.add.at(dx, node.attrs["rows"], g)
    return [dx]


def _bwd_transpose(node, g, vals, graph):
    return [g.T]


def _bwd_row_dot(node, g, vals, graph):
    a, b = vals
    return [g * b, g * a]


def _bwd_mean(node, g, vals, graph):
    return [np.full_like(vals[0], g[0, 0] / vals[0].size)]


def _bwd_conv2d(node, g, vals, graph):
    x, w = vals
    F, C, size, _ = w.shape
    stride, padding = node.attrs["stride"], node.attrs["padding"]
    Ho, Wo = node.cache["out_hw"]
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, F)
    dw = (g2.T @ node.cache["cols"]).reshape(w.shape)
    dcols = (g2 @ w.reshape(F, -1)).reshape(x.shape[0], Ho, Wo, C, size, size)
    dxp = np.zeros(node.cache["padded_shape"], dtype=x.dtype)
    for i in range(size):
        for j in range(size):
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    H, W = x.shape[2], x.shape[3]
    return [dxp[:, :, padding:padding + H, padding:padding + W], dw]


def _bwd_global_avg_pool(node, g, vals, graph):
    x = vals[0]
    area = x.shape[2] * x.shape[3]
    return [np.broadcast_to(g[:, :, None, None] / area, x.shape).copy()]


def _bwd_flatten(node, g, vals, graph):
    return [g.reshape(vals[0].shape)]


FORWARD: Dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add_bias": _fwd_add_bias,
    "relu": _fwd_relu,
    "batch_standardize": _fwd_batch_standardize,
    "l2_normalize_rows": _fwd_l2_normalize_rows,
    "whitening": _fwd_whitening,
    "mse_mean": _fwd_mse_mean,
    "scale_add": _fwd_scale_add,
    "softmax_cross_entropy": _fwd_softmax_cross_entropy,
    "concat_rows": _fwd_concat_rows,
    "slice_rows": _fwd_slice_rows,
    "transpose": _fwd_transpose,
    "row_dot": _fwd_row_dot,
    "mean": _fwd_mean,
    "conv2d": _fwd_conv2d,
    "global_avg_pool": _fwd_global_avg_pool,
    "flatten": _fwd_flatten,
}

BACKWARD: Dict[str, Callable] = {
    "matmul": _bwd_matmul,
    "add_bias": _bwd_add_bias,
    "relu": _bwd_relu,
    "batch_standardize": _bwd_batch_standardize,
    "l2_normalize_rows": _bwd_l2_normalize_rows,
    "whitening": _bwd_whitening,
    "mse_mean": _bwd_mse_mean,
    "scale_add": _bwd_scale_add,
    "softmax_cross_entropy": _bwd_softmax_cross_entropy,
    "concat_rows": _bwd_concat_rows,
    "slice_rows": _bwd_slice_rows,
    "transpose": _bwd_transpose,
    "row_dot": _bwd_row_dot,
    "mean": _bwd_mean,
    "conv2d": _bwd_conv2d,
    "global_avg_pool": _bwd_global_avg_pool,
    "flatten": _bwd_flatten,
}


class Graph:
    """
    Computation record for one forward/backward pass.

    Args:
        params: name -> array; parameter nodes read from (and grads refer to) it
        buffers: name -> array for batch_standardize running statistics
        training: batch statistics (True) or running statistics (False)
        dtype: dtype inputs and constants are cast to
    """

    def __init__(self, params: Optional[Dict[str, np.ndarray]] = None,
                 buffers: Optional[Dict[str, np.ndarray]] = None,
                 training: bool = True, dtype=np.float64):
        self.nodes: List[Node] = []
        self.params = params if params is not None else {}
        self.buffers = buffers if buffers is not None else {}
        self.training = training
        self.update_buffers = training
        self.dtype = np.dtype(dtype)
        self.output: Optional[Node] = None
        self.op_seconds: Dict[str, float] = defaultdict(float)
        self._evaluated = False

    # -- construction -----------------------------------------------------

    def _add(self, op: str, inputs: Sequence[Node] = (), name: Optional[str] = None, **attrs) -> Node:
        for inp in inputs:
            if not isinstance(inp, Node) or inp.index >= len(self.nodes) or self.nodes[inp.index] is not inp:
                raise GraphStateError(f"input of new '{op}' node does not belong to this graph")
        node = Node(len(self.nodes), op, inputs, attrs, name)
        self.nodes.append(node)
        self.output = node
        self._evaluated = False
        return node

    def parameter(self, name: str) -> Node:
        return self._add("parameter", name=name)

    def input(self, name: str) -> Node:
        return self._add("input", name=name)

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self._add("constant", name=name, value=np.asarray(value, dtype=self.dtype))

    def matmul(self, a: Node, b: Node) -> Node:
        return self._add("matmul", (a, b))

    def add_bias(self, x: Node, b: Node) -> Node:
        return self._add("add_bias", (x, b))

    def relu(self, x: Node) -> Node:
        return self._add("relu", (x,))

    def batch_standardize(self, x: Node, key: Optional[str] = None,
                          gamma: Optional[Node] = None, beta: Optional[Node] = None,
                          eps: float = config.BN_EPS) -> Node:
        """Per-feature (per-channel for 4-D) standardization, optional affine"""
        inputs = (x,) if gamma is None else (x, gamma, beta)
        return self._add("batch_standardize", inputs, key=key, eps=eps)

    def l2_normalize_rows(self, x: Node) -> Node:
        return self._add("l2_normalize_rows", (x,))

    def whitening(self, x: Node, ridge: Optional[float] = None, sub_batch: int = 0) -> Node:
        return self._add("whitening", (x,), ridge=ridge, sub_batch=sub_batch)

    def mse_mean(self, a: Node, b: Node) -> Node:
        """Mean over rows of the squared Euclidean row distance"""
        return self._add("mse_mean", (a, b))

    def scale_add(self, a: Node, b: Optional[Node] = None, alpha: float = 1.0,
                  beta: float = 1.0, shift: float = 0.0) -> Node:
        """alpha * a + beta * b + shift"""
        inputs = (a,) if b is None else (a, b)
        return self._add("scale_add", inputs, alpha=alpha, beta=beta, shift=shift)

    def softmax_cross_entropy(self, logits: Node, labels, exclude=None) -> Node:
        """Mean cross-entropy; entries where `exclude` is True leave the softmax"""
        labels = np.asarray(labels, dtype=np.int64)
        exclude = None if exclude is None else np.asarray(exclude, dtype=bool)
        return self._add("softmax_cross_entropy", (logits,), labels=labels, exclude=exclude)

    def concat_rows(self, parts: Sequence[Node]) -> Node:
        return self._add("concat_rows", tuple(parts))

    def slice_rows(self, x: Node, rows) -> Node:
        return self._add("slice_rows", (x,), rows=np.asarray(rows, dtype=np.int64))

    def transpose(self, x: Node) -> Node:
        return self._add("transpose", (x,))

    def row_dot(self, a: Node, b: Node) -> Node:
        return self._add("row_dot", (a, b))

    def mean(self, x: Node) -> Node:
        return self._add("mean", (x,))

    def conv2d(self, x: Node, w: Node, stride: int = 1, padding: int = 1) -> Node:
        return self._add("conv2d", (x, w), stride=stride, padding=padding)

    def global_avg_pool(self, x: Node) -> Node:
        return self._add("global_avg_pool", (x,))

    def flatten(self, x: Node) -> Node:
        return self._add("flatten", (x,))

    def set_output(self, node: Node) -> None:
        self.output = node

    # -- evaluation -------------------------------------------------------

    def forward(self, bindings: Optional[Dict[str, np.ndarray]] = None) -> np.ndarray:
        bindings = bindings or {}
        if self.output is None:
            raise GraphStateError("graph has no nodes")
        for node in self.nodes:
            t0 = time.perf_counter()
            if node.op == "parameter":
                if node.name not in self.params:
                    raise GraphStateError(f"{node.label}: parameter not found")
                node.value = self.params[node.name]
            elif node.op == "input":
                if node.name not in bindings:
                    raise GraphStateError(f"{node.label}: input is not bound")
                node.value = np.asarray(bindings[node.name], dtype=self.dtype)
            elif node.op == "constant":
                node.value = node.attrs["value"]
            else:
                node.cache = {}
                node.value = FORWARD[node.op](node, [i.value for i in node.inputs], self)
            node.grad = None
            self.op_seconds["forward"] += time.perf_counter() - t0
        self._evaluated = True
        return self.output.value

    def backward(self) -> Dict[str, np.ndarray]:
        if not self._evaluated:
            raise GraphStateError("backward called before forward_eval")
        out = self.output
        if out.value.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 output, got {out.value.shape} at {out.label}")
        t_start = time.perf_counter()
        out.grad = np.ones_like(out.value)
        grads: Dict[str, np.ndarray] = {}
        for node in reversed(self.nodes[:out.index + 1]):
            g = node.grad
            if g is None:
                continue
            if node.op == "parameter":
                grads[node.name] = grads[node.name] + g if node.name in grads else g
                continue
            if node.op in ("input", "constant"):
                node.grad = None
                continue
            in_grads = BACKWARD[node.op](node, g, [i.value for i in node.inputs], self)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None:
                    continue
                inp.grad = ig if inp.grad is None else inp.grad + ig
            node.grad = None
        self.op_seconds["backward"] += time.perf_counter() - t_start
        return grads


def forward_eval(graph: Graph, bindings: Optional[Dict[str, np.ndarray]] = None) -> np.ndarray:
    """Evaluate every node in insertion order; returns the output node value."""
    return graph.forward(bindings)


def backward(graph: Graph) -> Dict[str, np.ndarray]:
    """Reverse sweep from the 1x1 output; returns parameter name -> gradient."""
    return graph.backward()


def grad_check(graph: Graph, bindings: Optional[Dict[str, np.ndarray]] = None,
               eps: float = 1e-5, names: Optional[Sequence[str]] = None) -> float:
    """
    Compare analytic parameter gradients with central finite differences.

    Returns:
        max_i |analytic_i - fd_i| / max(|analytic_i|, |fd_i|, 1e-8)
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ConfigError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    saved_update = graph.update_buffers
    graph.update_buffers = False
    try:
        forward_eval(graph, bindings)
        analytic = backward(graph)
        worst = 0.0
        for name in (names if names is not None else sorted(analytic)):
            theta = graph.params[name]
            grad = analytic.get(name, np.zeros_like(theta))
            for i in range(theta.size):
                original = theta.flat[i]
                theta.flat[i] = original + eps
                f_plus = float(forward_eval(graph, bindings)[0, 0])
                theta.flat[i] = original - eps
                f_minus = float(forward_eval(graph, bindings)[0, 0])
                theta.flat[i] = original
                fd = (f_plus - f_minus) / (2 * eps)
                a = float(grad.flat[i])
                err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                worst = max(worst, err)
        forward_eval(graph, bindings)
        return worst
    finally:
        graph.update_buffers = saved_update
