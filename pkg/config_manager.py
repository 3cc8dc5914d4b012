"""
Configuration Manager for whitebed runs

Loads JSON run configs, applies command-line overrides, fills derived
defaults, validates, and writes resolved_config.json so that any run can be
repeated from its output directory.
"""

import copy
import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Optional

import config
from exceptions import ConfigError
from run_dtos import RunConfig

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = "resolved_config.json"
EVAL_CONFIG_FILE = "resolved_eval_config.json"


def load_config(path: Optional[str]) -> Dict:
    """
    Load a run configuration dictionary from a JSON file.

    Args:
        path: JSON file path, or None for an empty (all-defaults) config

    Returns:
        Dictionary with the file's settings
    """
    if not path:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data


def _set_dotted(data: Dict, dotted_key: str, value: Any) -> None:
    """Set data['a']['b'] for dotted_key 'a.b', creating sections as needed."""
    parts = dotted_key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set '{dotted_key}': '{part}' is not a section")
        node = child
    node[parts[-1]] = value


def parse_overrides(assignments: List[str]) -> Dict[str, Any]:
    """
    Parse KEY=VALUE override strings; VALUE is read as JSON when possible.

    Args:
        assignments: e.g. ["train.epochs=5", "loss.kind=\"bn_mse\"", "loss.kind=bn_mse"]

    Returns:
        Mapping of dotted keys to values
    """
    overrides: Dict[str, Any] = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like section.key=value")
        key, raw = item.split("=", 1)
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides


def resolve_defaults(cfg: RunConfig) -> RunConfig:
    """
    Fill values whose defaults depend on other settings.

    - sub_size = 2 * embedding size
    - tau = 0.5 (normalized) or 1.0 (unnormalized) for the contrastive loss
    - margin for the triplet loss
    - data_dir from WHITEBED_DATA for file-backed datasets
    """
    loss = cfg.train.loss
    if loss.uses_whitening and loss.sliceplan.sub_size is None:
        loss.sliceplan.sub_size = 2 * cfg.projector.out_dim
    if loss.kind == "contrastive" and loss.tau is None:
        loss.tau = config.CONTRASTIVE_TAU if loss.normalize else config.CONTRASTIVE_TAU_UNNORMALIZED
    if loss.kind == "triplet" and loss.margin is None:
        loss.margin = config.TRIPLET_MARGIN
    if cfg.data.dataset != "synthetic" and cfg.data.data_dir is None:
        cfg.data.data_dir = config.DATA_DIR
    return cfg


def parse_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 base: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a fully validated RunConfig from a JSON file plus flag overrides.

    Args:
        path: JSON config file (optional)
        overrides: dotted-key overrides, applied after the file (flags win)
        base: settings used when no file is given (e.g. a checkpoint's config)

    Returns:
        Validated RunConfig with every default resolved
    """
    data = copy.deepcopy(load_config(path) if path or base is None else base)
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
    try:
        cfg = RunConfig.from_dict(data)
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    resolve_defaults(cfg)
    cfg.validate()
    return cfg


def save_resolved_config(cfg: RunConfig, out_dir: str, filename: str = RESOLVED_CONFIG_FILE) -> str:
    """
    Write the resolved config into out_dir (resolved_config.json unless
    filename says otherwise).

    Returns:
        Path of the written file
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, filename)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Resolved configuration saved to {path}")
    return path


def config_digest(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form of a resolved config."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
