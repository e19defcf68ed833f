"""Binary checkpoint format.

Layout (all integers and floats little-endian)::

    b"TACO1"                      magic / format version
    u32 V, u32 d, u32 depth       dims record
    u64 step                      optimizer step counter
    u32 n_tensors
    n_tensors x (u64 count, count x f64)   tensors in ``tensor_layout`` order
    32 bytes                      SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import IntegrityError, VersionError
from .policy import Dims, PolicyParameters, tensor_layout

MAGIC = b"TACO1"
_HEADER = struct.Struct("<IIIQI")
_COUNT = struct.Struct("<Q")
_DIGEST = 32


def dumps(params: PolicyParameters, step: int = 0) -> bytes:
    dims = params.dims
    parts = [MAGIC, _HEADER.pack(dims.V, dims.d, dims.depth, step, len(params.tensors))]
    for _, value in params.items():
        flat = np.ascontiguousarray(value, dtype="<f8").ravel()
        parts.append(_COUNT.pack(flat.size))
        parts.append(flat.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes, expected_dims: Dims | None = None) -> tuple[PolicyParameters, int]:
    if blob[: len(MAGIC)] != MAGIC:
        if len(blob) < len(MAGIC) and MAGIC.startswith(blob):
            raise IntegrityError("checkpoint truncated inside the header")
        raise VersionError(f"not a {MAGIC.decode()} checkpoint (magic {blob[:5]!r})")
    if len(blob) < len(MAGIC) + _HEADER.size + _DIGEST:
        raise IntegrityError("checkpoint truncated")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint digest mismatch (corrupt or truncated file)")
    V, d, depth, step, n_tensors = _HEADER.unpack_from(body, len(MAGIC))
    dims = Dims(V, d, depth)
    if expected_dims is not None and dims != expected_dims:
        raise VersionError(f"checkpoint dims {dims} do not match expected {expected_dims}")
    layout = tensor_layout(dims)
    if n_tensors != len(layout):
        raise VersionError(f"checkpoint holds {n_tensors} tensors, dims imply {len(layout)}")
    pos = len(MAGIC) + _HEADER.size
    tensors = {}
    for name, shape in layout:
        (count,) = _COUNT.unpack_from(body, pos)
        pos += _COUNT.size
        if count != int(np.prod(shape)):
            raise IntegrityError(f"{name}: {count} values stored, shape {shape} needs {int(np.prod(shape))}")
        tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * count
    if pos != len(body):
        raise IntegrityError("trailing bytes after last tensor")
    return PolicyParameters(dims, tensors), step


def save_checkpoint(params: PolicyParameters, step: int, path: str | Path) -> None:
    """Write atomically (temp file + rename) so a crash never leaves half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(dumps(params, step))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expected_dims: Dims | None = None) -> tuple[PolicyParameters, int]:
    return loads(Path(path).read_bytes(), expected_dims)


def digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
