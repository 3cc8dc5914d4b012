"""
Shared pytest fixtures: a run configuration small enough for a full
train / evaluate cycle in a few seconds.
"""

import copy

import pytest

from config_manager import parse_config

collect_ignore = ["examples"]

TINY_RUN = {
    "seed": 0,
    "data": {"dataset": "synthetic", "classes": 2, "per_class": 8, "test_per_class": 4},
    "encoder": {"kind": "smallconv", "conv_widths": [4, 8], "h_dim": 8},
    "projector": {"hidden_dim": 16, "out_dim": 4},
    "loss": {"kind": "wmse", "d": 2},
    "train": {"epochs": 2, "lr": 1e-3, "warmup_iters": 2, "drop_epochs": [],
              "batch_origins": 8, "dtype": "float64"},
    "probe": {"epochs": 5, "batch_size": 8},
    "eval": {"knn_k": 3, "eval_every": 1},
    "bench": {"warmup_steps": 1, "measured_steps": 10},
}


@pytest.fixture
def tiny_run(tmp_path):
    """Build a validated tiny RunConfig writing into tmp_path; overrides are dotted keys."""
    def build(**overrides):
        base = copy.deepcopy(TINY_RUN)
        base["out_dir"] = str(tmp_path / "run")
        return parse_config(base=base, overrides={k.replace("__", "."): v for k, v in overrides.items()})
    return build
