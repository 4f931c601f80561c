"""Checkpoint blob format: little-endian float64 arrays + text index.

A checkpoint directory holds `params.bin` (raw array bytes), `params.idx`
(one line per array: name, comma-joined shape, byte offset) and an
optional `manifest.json`. Writing is deterministic: arrays are emitted in
sorted name order and the manifest is serialized with sorted keys.
"""
from __future__ import annotations

import json
import os

import numpy as np

BIN_NAME = "params.bin"
IDX_NAME = "params.idx"
MANIFEST_NAME = "manifest.json"


def save_arrays(dir_path: str, arrays: dict[str, np.ndarray]) -> None:
    os.makedirs(dir_path, exist_ok=True)
    offset = 0
    index_lines = []
    with open(os.path.join(dir_path, BIN_NAME), "wb") as blob:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            shape = ",".join(str(d) for d in arr.shape)
            index_lines.append(f"{name}\t{shape}\t{offset}\n")
            blob.write(arr.tobytes())
            offset += arr.nbytes
    with open(os.path.join(dir_path, IDX_NAME), "w", encoding="utf-8") as idx:
        idx.writelines(index_lines)


def load_arrays(dir_path: str) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(os.path.join(dir_path, BIN_NAME), "rb") as blob:
        raw = blob.read()
    with open(os.path.join(dir_path, IDX_NAME), encoding="utf-8") as idx:
        for line in idx:
            line = line.rstrip("\n")
            if not line:
                continue
            name, shape_field, offset_field = line.split("\t")
            shape = tuple(int(d) for d in shape_field.split(",") if d)
            count = int(np.prod(shape)) if shape else 1
            offset = int(offset_field)
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            arrays[name] = arr.reshape(shape).astype(np.float64)
    return arrays


def save_manifest(dir_path: str, manifest: dict) -> None:
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(dir_path: str) -> dict:
    with open(os.path.join(dir_path, MANIFEST_NAME), encoding="utf-8") as f:
        return json.load(f)
