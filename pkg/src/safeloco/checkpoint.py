"""Checkpoint format: a JSON manifest plus one binary blob of
little-endian float32 values laid out in manifest order.

Manifest schema: {format_version: 1, arrays: [{name, shape, dtype,
byte_offset, byte_len}], training_step, config_hash}.  A checkpoint
base path <base> maps to <base>.json and <base>.bin.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(arrays: dict[str, np.ndarray], training_step: int,
                config_hash: str, base_path: str | Path) -> Path:
    """Write <base>.json + <base>.bin; array order is insertion order."""
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        data = np.asarray(arr, dtype="<f4").tobytes()
        entries.append({
            "name": name,
            "shape": list(np.asarray(arr).shape),
            "dtype": "f32",
            "byte_offset": offset,
            "byte_len": len(data),
        })
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "arrays": entries,
        "training_step": int(training_step),
        "config_hash": config_hash,
    }
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n")
    base.with_suffix(".bin").write_bytes(b"".join(blobs))
    return base


def load_arrays(base_path: str | Path,
                expect_config_hash: str | None = None
                ) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as float64 arrays plus the manifest."""
    base = Path(base_path)
    man_path = base.with_suffix(".json")
    bin_path = base.with_suffix(".bin")
    if not man_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"checkpoint {base} is missing .json or .bin")
    manifest = json.loads(man_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format_version')}")
    if expect_config_hash and manifest.get("config_hash") != expect_config_hash:
        warnings.warn("checkpoint config_hash does not match the current config",
                      stacklevel=2)
    blob = bin_path.read_bytes()
    arrays = {}
    for entry in manifest["arrays"]:
        start = entry["byte_offset"]
        stop = start + entry["byte_len"]
        flat = np.frombuffer(blob[start:stop], dtype="<f4")
        if flat.size != int(np.prod(entry["shape"])) and entry["shape"]:
            raise CheckpointError(f"array {entry['name']!r} has wrong byte length")
        arrays[entry["name"]] = flat.astype(np.float64).reshape(entry["shape"])
    return arrays, manifest
