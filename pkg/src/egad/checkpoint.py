"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"EGADCKPT"            8-byte magic
    u32  format version
    u64  header length H
    H bytes                UTF-8 JSON header (configs, tensor table, metadata)
    payload                tensors as contiguous little-endian float64
    32 bytes               SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DependencyError

MAGIC = b"EGADCKPT"
VERSION = 1
_DIGEST = 32


class CheckpointError(DependencyError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    params: dict[str, np.ndarray]
    optimizer_m: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    metadata: dict = field(default_factory=dict)


def _pack(groups: dict[str, dict[str, np.ndarray]]):
    table, blobs, offset = [], [], 0
    for group, tensors in groups.items():
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            table.append({"group": group, "name": name, "shape": list(data.shape),
                          "offset": offset, "count": int(data.size)})
            blobs.append(data.tobytes())
            offset += data.nbytes
    return table, b"".join(blobs)


def to_bytes(ckpt: Checkpoint) -> bytes:
    table, payload = _pack({"params": ckpt.params, "m": ckpt.optimizer_m, "v": ckpt.optimizer_v})
    header = json.dumps({
        "model_config": ckpt.model_config,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "metadata": ckpt.metadata,
        "tensors": table,
    }, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + payload
    return body + hashlib.sha256(body).digest()


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 12 + _DIGEST or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not an EGAD checkpoint (bad magic)")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    version, header_len = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 12
    header = json.loads(body[start:start + header_len].decode("utf-8"))
    payload = body[start + header_len:]
    groups: dict[str, dict[str, np.ndarray]] = {"params": {}, "m": {}, "v": {}}
    for entry in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f8", count=entry["count"], offset=entry["offset"])
        groups[entry["group"]][entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return Checkpoint(model_config=header["model_config"], params=groups["params"],
                      optimizer_m=groups["m"], optimizer_v=groups["v"], step=header["step"],
                      seed=header["seed"], metadata=header["metadata"])


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> str:
    blob = to_bytes(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return str(path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise DependencyError(f"checkpoint {path} does not exist") from None
    return from_bytes(blob)
