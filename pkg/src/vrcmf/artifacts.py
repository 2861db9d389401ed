"""Versioned on-disk artifacts: plain-text header, JSON metadata, raw arrays.

Every persisted file starts with a magic line (``#vrcmf-<kind> v<n>``)
followed by one compact JSON line. Array payloads, when present, are the
concatenated C-order bytes of each array in the order listed under the
``arrays`` key of the metadata. Writes are deterministic: sorted JSON
keys, fixed separators, no timestamps, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

MODEL_MAGIC = "#vrcmf-model v1"


class ArtifactError(ValueError):
    """Corrupt, truncated, or wrong-kind artifact file."""


def write_blob(path, magic: str, meta: dict, arrays: dict[str, np.ndarray] | None = None) -> None:
    arrays = {name: np.ascontiguousarray(arr) for name, arr in (arrays or {}).items()}
    header = dict(meta)
    header["arrays"] = [[name, arr.dtype.str, list(arr.shape)] for name, arr in arrays.items()]
    with open(path, "wb") as fh:
        fh.write((magic + "\n").encode("utf-8"))
        fh.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8"))
        for arr in arrays.values():
            fh.write(arr.tobytes())


def read_blob(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        first = fh.readline().decode("utf-8", errors="replace").rstrip("\n")
        if first != magic:
            raise ArtifactError(f"{path}: expected header {magic!r}, found {first!r}")
        try:
            meta = json.loads(fh.readline().decode("utf-8"))
        except ValueError:
            raise ArtifactError(f"{path}: unreadable metadata line") from None
        arrays = {}
        for name, dtype, shape in meta.pop("arrays", []):
            dt = np.dtype(dtype)
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = fh.read(count * dt.itemsize)
            if len(buf) != count * dt.itemsize:
                raise ArtifactError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype=dt).reshape(shape).copy()
        if fh.read(1):
            raise ArtifactError(f"{path}: trailing bytes after declared arrays")
    return meta, arrays


def save_model(path, *, U: np.ndarray, V: np.ndarray, user_ids: list[str],
               item_ids: list[str], config: dict, params: dict[str, np.ndarray] | None = None,
               extra_meta: dict | None = None) -> None:
    """Persist a trained model; prediction needs nothing else afterwards."""
    meta = {
        "config": config,
        "user_ids": list(user_ids),
        "item_ids": list(item_ids),
    }
    meta.update(extra_meta or {})
    arrays = {"U": np.asarray(U, dtype=np.float64), "V": np.asarray(V, dtype=np.float64)}
    for name in sorted(params or {}):
        arrays["param:" + name] = np.asarray(params[name], dtype=np.float64)
    write_blob(path, MODEL_MAGIC, meta, arrays)


def load_model(path) -> tuple[dict, np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Return (meta, U, V, params) from a model artifact."""
    meta, arrays = read_blob(path, MODEL_MAGIC)
    try:
        U, V = arrays.pop("U"), arrays.pop("V")
    except KeyError:
        raise ArtifactError(f"{path}: model artifact missing factor matrices") from None
    params = {name[len("param:"):]: arr for name, arr in arrays.items()
              if name.startswith("param:")}
    return meta, U, V, params
