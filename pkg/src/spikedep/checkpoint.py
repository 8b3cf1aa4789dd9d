"""Binary model checkpoints.

Layout (all integers little-endian u32 unless noted):
  magic b"SDEP" | format version | parameter count
  then per parameter, in the model's flat ordering:
  name length | UTF-8 name | rank | dims (u32 each) | float64 LE payload

Loads are strict: shape mismatches name the offending parameter, truncated
or corrupt files raise CheckpointError with the byte offset.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SDEP"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed, truncated, or incompatible checkpoint file."""


def save(path: str, params: dict) -> None:
    """Write named float64 arrays in their dict order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(params)))
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, path: str):
        with open(path, "rb") as fh:
            self.buf = fh.read()
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.pos} "
                f"(needed {n} more, have {len(self.buf) - self.pos})"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load(path: str) -> dict:
    """Read a checkpoint into an ordered {name: float64 array} dict."""
    r = _Reader(path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint file)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version} "
            f"(expected {FORMAT_VERSION})"
        )
    count = r.u32()
    params = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        if rank > 8:
            raise CheckpointError(
                f"{path}: parameter {name!r} claims rank {rank} at byte "
                f"{r.pos - 4}; file is corrupt"
            )
        dims = tuple(r.u32() for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        raw = r.take(8 * size)
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    if r.pos != len(r.buf):
        raise CheckpointError(
            f"{path}: {len(r.buf) - r.pos} trailing bytes after "
            f"{count} parameters"
        )
    return params


def load_into_model(path: str, model) -> None:
    """Load a checkpoint and install it, validating names and shapes."""
    params = load(path)
    expected = dict(model.param_index)
    missing = [n for n in expected if n not in params]
    extra = [n for n in params if n not in expected]
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter set mismatch "
            f"(missing {missing or 'none'}, unexpected {extra or 'none'})"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape "
                f"{params[name].shape}, model expects {shape}"
            )
    model.set_params(params)


def describe(path: str) -> dict:
    """Header + per-parameter summary for the checkpoint-info command."""
    params = load(path)
    return {
        "format_version": FORMAT_VERSION,
        "parameter_count": len(params),
        "total_scalars": int(sum(a.size for a in params.values())),
        "parameters": [
            {"name": n, "shape": list(a.shape), "size": int(a.size)}
            for n, a in params.items()
        ],
    }
