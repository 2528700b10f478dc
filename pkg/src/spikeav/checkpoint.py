"""Versioned binary checkpoint container.

Layout: magic, format version, header length, JSON header, raw array bytes.
The header carries the configuration, its hash, and offsets for every named
array, so loading can validate shape compatibility and configuration
identity before touching any weights.
"""

import hashlib
import json
import struct

import numpy as np

from . import errors

MAGIC = b"SAVC"
VERSION = 1


def config_hash(config):
    """Stable fingerprint of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path, arrays, config, extra=None):
    """Write named float arrays plus configuration and metadata."""
    entries = []
    offset = 0
    payload = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        raw = np.ascontiguousarray(arr).tobytes()   # 0-d arrays promote here
        entries.append({"name": name, "dtype": str(arr.dtype),
                        "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {"config": config, "config_hash": config_hash(config),
              "arrays": entries, "extra": extra or {}}
    hblob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(hblob)))
        f.write(hblob)
        for raw in payload:
            f.write(raw)


def load_checkpoint(path):
    """Returns (arrays, config, extra)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise errors.CheckpointError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<IQ", f.read(12))
        if version != VERSION:
            raise errors.CheckpointError(
                f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode())
        base = f.tell()
        arrays = {}
        for ent in header["arrays"]:
            f.seek(base + ent["offset"])
            raw = f.read(ent["nbytes"])
            arrays[ent["name"]] = np.frombuffer(
                raw, dtype=ent["dtype"]).reshape(ent["shape"]).copy()
    if header.get("config_hash") != config_hash(header["config"]):
        raise errors.CheckpointError(f"{path}: corrupted configuration block")
    return arrays, header["config"], header.get("extra", {})
