"""
Checkpoint container: named tensors behind a JSON header.

Layout (all integers little-endian):

    bytes 0..7     magic b"WBCKPT01"
    bytes 8..15    header length H (uint64)
    bytes 16..16+H UTF-8 JSON header:
                   {"meta": {...},
                    "tensors": [{"name", "shape", "dtype", "offset", "nbytes"}, ...]}
    remainder      raw C-order tensor bytes; offsets are relative to the
                   first byte after the header

Tensor names are namespaced: "param/...", "buffer/...", "adam.m/...",
"adam.v/...".
"""

import json
import logging
import os
import struct
from typing import Any, Dict, Tuple

import numpy as np

from exceptions import WhitebedError

logger = logging.getLogger(__name__)

MAGIC = b"WBCKPT01"


class CheckpointError(WhitebedError):
    """Checkpoint file is malformed"""


def save_checkpoint(path: str, tensors: Dict[str, np.ndarray], meta: Dict[str, Any]) -> str:
    """Write tensors (sorted by name) and metadata to path."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        blob = arr.astype(dtype, copy=False).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype.str,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    logger.info(f"Checkpoint written: {path} ({len(entries)} tensors, {offset} bytes)")
    return path


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read (tensors, meta) from a checkpoint file."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a whitebed checkpoint")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    data = raw[16 + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(data):
            raise CheckpointError(f"{path}: tensor '{entry['name']}' runs past the end of the file")
        arr = np.frombuffer(data[start:stop], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header["meta"]


def split_namespace(tensors: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Tensors under 'prefix/' with the prefix stripped."""
    lead = prefix + "/"
    return {name[len(lead):]: arr for name, arr in tensors.items() if name.startswith(lead)}
