"""Single-file checkpoint container.

Layout: an 8-byte magic, an 8-byte little-endian header length, a JSON
header (format version, model config, per-parameter name/shape/offset and
the SHA-256 of the payload), then the payload of concatenated little-endian
float32 arrays. The checksum is verified on load.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .models import ModelConfig, build_model

MAGIC = b"SERACKPT"
VERSION = 1


def save_checkpoint(path, config: ModelConfig, model: torch.nn.Module) -> Path:
    entries = []
    chunks = []
    offset = 0
    for name, param in sorted(model.state_dict().items()):
        arr = np.ascontiguousarray(param.detach().cpu().numpy(), dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": arr.nbytes})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    header = {
        "format_version": VERSION,
        "config": dataclasses.asdict(config),
        "dtype": "<f4",
        "params": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(payload)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        return json.loads(fh.read(header_len).decode("utf-8"))


def load_checkpoint(path) -> tuple[ModelConfig, dict]:
    """Read and verify a checkpoint; returns (config, state_dict)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    if header.get("format_version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')!r}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"checkpoint {path} failed its checksum; file is corrupt")
    config = ModelConfig(**header["config"])
    state = {}
    for entry in header["params"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start:start + nbytes], dtype="<f4")
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    return config, state


def load_model(path) -> tuple[ModelConfig, torch.nn.Module]:
    """Rebuild the stored model with its weights."""
    config, state = load_checkpoint(path)
    model = build_model(config)
    model.load_state_dict(state)
    model.eval()
    return config, model
