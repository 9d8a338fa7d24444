"""On-disk array files and JSON manifests.

Arrays are written as ``.npy`` files (self-describing header with shape and
dtype).  Floating payloads are always stored as little-endian float32 and
integer payloads as little-endian int32.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np


def save_array(path: str | Path, array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.asarray(array)
    if np.issubdtype(array.dtype, np.floating):
        array = array.astype("<f4", copy=False)
    elif np.issubdtype(array.dtype, np.integer) or array.dtype == bool:
        array = array.astype("<i4", copy=False)
    else:
        raise TypeError(f"unsupported array dtype {array.dtype}")
    np.save(path, array, allow_pickle=False)
    return path


def load_array(path: str | Path, mmap: bool = False) -> np.ndarray:
    return np.load(path, allow_pickle=False, mmap_mode="r" if mmap else None)


def _default(obj: Any):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def config_hash(obj: Any) -> str:
    """Stable short hash of a JSON-serializable config."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    tmp.replace(path)
    return path


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def array_fingerprint(array: np.ndarray) -> str:
    array = np.ascontiguousarray(array)
    h = hashlib.sha256()
    h.update(str(array.dtype).encode())
    h.update(str(array.shape).encode())
    h.update(array.tobytes())
    return h.hexdigest()[:16]
