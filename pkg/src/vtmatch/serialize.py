"""Shared on-disk formats: atomic writes and blob-plus-header bundles.

A bundle is a plain-text header (free-form ``key value`` lines followed
by one ``tensor <name> <dims> <offset> <count>`` line per array) next to
a single binary blob of little-endian 64-bit floats.  Model checkpoints
and the fitted CCA baseline both use it.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import StoreFormatError

HEADER_SUFFIX = ".header"
BLOB_SUFFIX = ".f64"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def write_bundle(
    path_base: Path,
    meta: dict[str, str],
    named_arrays: list[tuple[str, np.ndarray]],
) -> None:
    """Persist named float64 arrays plus metadata at ``path_base``."""
    path_base = Path(path_base)
    lines = [f"{k} {v}" for k, v in meta.items()]
    chunks: list[bytes] = []
    offset = 0
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype=np.float64)
        dims = ",".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"tensor {name} {dims} {offset} {arr.size}")
        chunks.append(arr.astype("<f8").tobytes())
        offset += arr.size
    atomic_write_bytes(path_base.with_suffix(BLOB_SUFFIX), b"".join(chunks))
    atomic_write_text(path_base.with_suffix(HEADER_SUFFIX), "\n".join(lines) + "\n")


def read_bundle(path_base: Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    path_base = Path(path_base)
    header = path_base.with_suffix(HEADER_SUFFIX)
    blob_path = path_base.with_suffix(BLOB_SUFFIX)
    try:
        text = header.read_text()
        blob = np.frombuffer(blob_path.read_bytes(), dtype="<f8")
    except OSError as exc:
        raise StoreFormatError(f"cannot read bundle {path_base}: {exc}") from exc

    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("tensor "):
            try:
                _, name, dims, offset, count = line.split()
                shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
                off, cnt = int(offset), int(count)
            except ValueError as exc:
                raise StoreFormatError(f"bad tensor line in {header}: {line!r}") from exc
            if off + cnt > blob.size:
                raise StoreFormatError(f"blob {blob_path} truncated at tensor {name}")
            arrays[name] = blob[off : off + cnt].astype(np.float64).reshape(shape)
        else:
            key, _, value = line.partition(" ")
            meta[key] = value
    return meta, arrays
