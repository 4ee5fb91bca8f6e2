"""Flat named parameter storage shared by all networks, plus checkpoint IO.

Checkpoints are a small binary format: magic, schema version, then per block
its name, shape and raw little-endian float64 data.  Round trips are
bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ShapeMismatch

MAGIC = b"PINN"
SCHEMA_VERSION = 1


class ParameterStore:
    """Named parameter blocks with gradient blocks of matching shapes."""

    def __init__(self):
        self.blocks: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.blocks:
            raise ValueError(f"duplicate parameter block {name!r}")
        self.blocks[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.blocks[name])
        return self.blocks[name]

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def n_params(self) -> int:
        return sum(b.size for b in self.blocks.values())

    def copy_blocks(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.blocks.items()}

    def load_blocks(self, blocks: dict[str, np.ndarray]) -> None:
        for name, value in blocks.items():
            if name not in self.blocks:
                raise ShapeMismatch(f"unknown parameter block {name!r}")
            if self.blocks[name].shape != value.shape:
                raise ShapeMismatch(
                    f"block {name!r}: expected {self.blocks[name].shape}, got {value.shape}"
                )
            self.blocks[name][:] = value

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks.values())


def save_params(path, store: ParameterStore, extra: dict[str, np.ndarray] | None = None):
    """Write parameter blocks (and optional extra blocks) to a checkpoint file."""
    items = dict(store.blocks)
    if extra:
        for k, v in extra.items():
            items[k] = np.asarray(v, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", SCHEMA_VERSION, len(items)))
        for name in sorted(items):
            data = np.ascontiguousarray(items[name], dtype="<f8")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{max(data.ndim, 1)}I", *(data.shape or (1,))))
            fh.write(data.tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    """Read a checkpoint file back into a name -> array mapping."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint schema {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{max(ndim, 1)}I", fh.read(4 * max(ndim, 1)))
            if ndim == 0:
                shape = ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64)
        return out
