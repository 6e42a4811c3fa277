"""Binary checkpoint container.

Layout: b"ACRMCKPT", u32 version, u64 manifest byte length, UTF-8 JSON
manifest, then little-endian float32 blobs at the offsets the manifest
lists (relative to the end of the manifest).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig

MAGIC = b"ACRMCKPT"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    d_in: int
    vocabulary: list[str]  # embedding table rows, including <pad>/<unk>
    tensors: dict[str, np.ndarray]  # float32-valued; "embedding" holds the frozen table
    meta: dict = field(default_factory=dict)

    @classmethod
    def quantized(cls, config, d_in, vocabulary, tensors, meta=None) -> "Checkpoint":
        """Round everything to float32 so memory and disk hold the same values."""
        return cls(
            config, d_in, list(vocabulary),
            {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in tensors.items()},
            dict(meta or {}),
        )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    directory = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name], dtype="<f4")
        raw = arr.tobytes(order="C")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {
            "config": ckpt.config.to_dict(),
            "d_in": ckpt.d_in,
            "vocabulary": ckpt.vocabulary,
            "tensors": directory,
            "meta": ckpt.meta,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = _HEAD.size + mlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated manifest")
    manifest = json.loads(raw[_HEAD.size:start].decode("utf-8"))
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        lo = start + entry["offset"]
        if lo + 4 * count > len(raw):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=lo).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float64)
    return Checkpoint(
        ModelConfig.from_dict(manifest["config"]),
        int(manifest["d_in"]),
        list(manifest["vocabulary"]),
        tensors,
        manifest.get("meta", {}),
    )
