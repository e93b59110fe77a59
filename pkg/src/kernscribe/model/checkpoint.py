"""Self-describing checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw parameter payload.  The header carries the model config, the
vocabulary hash, run metadata, and one entry per named tensor (dtype, shape,
byte offset); payloads are row-major little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from .config import ModelConfig
from .net import HierarchicalTranscriber

MAGIC = b"KSCHKPT1"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}
_TO_TORCH = {v: k for k, v in _DTYPES.items()}


def save_checkpoint(path, model: HierarchicalTranscriber, vocab_hash: str,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    params = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        dtype = _DTYPES.get(tensor.dtype)
        if dtype is None:
            raise CheckpointError(f"unsupported tensor dtype {tensor.dtype} for {name}")
        blob = np.ascontiguousarray(tensor.detach().cpu().numpy()).astype(dtype).tobytes()
        params.append({
            "name": name,
            "dtype": dtype,
            "shape": list(tensor.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": 1,
        "config": model.cfg.to_payload(),
        "vocab_hash": vocab_hash,
        "meta": meta or {},
        "params": params,
        "payload_bytes": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(header_len).decode("utf-8"))


def load_checkpoint(path, expected_vocab_hash: str | None = None,
                    ) -> tuple[HierarchicalTranscriber, dict]:
    """Rebuild the model from a container; verifies the vocabulary hash."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read(header["payload_bytes"])
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise CheckpointError(
            "vocabulary hash mismatch: checkpoint %s vs current %s"
            % (header["vocab_hash"][:12], expected_vocab_hash[:12]))
    cfg = ModelConfig.from_payload(header["config"])
    model = HierarchicalTranscriber(cfg)
    state = {}
    for entry in header["params"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(arr).to(_TO_TORCH[entry["dtype"]])
    missing = model.load_state_dict(state, strict=True)
    if missing.missing_keys or missing.unexpected_keys:
        raise CheckpointError(f"state mismatch: {missing}")
    return model, header
