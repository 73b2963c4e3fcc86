"""Weight file format.

Layout, all little-endian:

    bytes 0..3   magic b"FKCD"
    bytes 4..7   format version, u32 (currently 1)
    bytes 8..11  header length in bytes, u32
    header       UTF-8 JSON: ordered list of {"name": str, "shape": [int...]}
    payload      for each header entry in order, the tensor's elements as
                 float32 little-endian, C order

The store holds exactly the trainable parameters of a model, in
``named_parameters`` order, so its element count equals the model's
parameter count. Round trips are bit-exact and re-saving a loaded file
reproduces it byte for byte.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import (WeightFormatError, WeightMagicError, WeightShapeError,
                     WeightTruncatedError, WeightVersionError)
from .layers import Module

MAGIC = b"FKCD"
VERSION = 1


class WeightStore:
    """Ordered name -> float32 array mapping with a fixed binary format."""

    def __init__(self, tensors: "OrderedDict[str, np.ndarray] | None" = None):
        self.tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        if tensors:
            for name, arr in tensors.items():
                self.add(name, arr)

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.tensors:
            raise WeightShapeError(f"duplicate tensor name {name!r}")
        self.tensors[name] = np.ascontiguousarray(array, dtype=np.float32)

    def element_count(self) -> int:
        return sum(a.size for a in self.tensors.values())

    @classmethod
    def from_module(cls, module: Module) -> "WeightStore":
        store = cls()
        for name, p in module.named_parameters():
            store.add(name, p.data)
        return store

    def apply_to(self, module: Module) -> None:
        """Copy stored arrays into a module's parameters, cast to its dtype.

        Fails with the offending name on any missing, unexpected or
        misshapen tensor."""
        params = dict(module.named_parameters())
        for name in params:
            if name not in self.tensors:
                raise WeightShapeError(f"store is missing tensor {name!r}")
        for name in self.tensors:
            if name not in params:
                raise WeightShapeError(f"store has unexpected tensor {name!r}")
        for name, p in params.items():
            arr = self.tensors[name]
            if arr.shape != p.shape:
                raise WeightShapeError(
                    f"tensor {name!r}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.data.dtype)

    # -- file form -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = json.dumps(
            [{"name": n, "shape": list(a.shape)} for n, a in self.tensors.items()],
            separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header]
        for arr in self.tensors.values():
            parts.append(arr.astype("<f4", copy=False).tobytes(order="C"))
        return b"".join(parts)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WeightStore":
        if len(blob) < 4 or blob[:4] != MAGIC:
            raise WeightMagicError(
                f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
        if len(blob) < 12:
            raise WeightTruncatedError("file ends inside the fixed header")
        version, header_len = struct.unpack("<II", blob[4:12])
        if version != VERSION:
            raise WeightVersionError(f"unsupported format version {version}")
        if len(blob) < 12 + header_len:
            raise WeightTruncatedError("file ends inside the JSON header")
        try:
            entries = json.loads(blob[12:12 + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WeightFormatError(f"malformed header: {exc}") from exc
        if not isinstance(entries, list):
            raise WeightFormatError("header must be a JSON list")
        store = cls()
        offset = 12 + header_len
        for entry in entries:
            if not isinstance(entry, dict) or "name" not in entry or "shape" not in entry:
                raise WeightFormatError(f"bad header entry {entry!r}")
            name = entry["name"]
            try:
                shape = tuple(int(d) for d in entry["shape"])
            except (TypeError, ValueError) as exc:
                raise WeightFormatError(f"bad shape for {name!r}") from exc
            if any(d < 1 for d in shape):
                raise WeightShapeError(f"tensor {name!r} has invalid shape {shape}")
            count = 1
            for d in shape:
                count *= d
            nbytes = count * 4
            if offset + nbytes > len(blob):
                raise WeightTruncatedError(
                    f"payload for {name!r} ends after the file does")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            store.add(name, arr.reshape(shape))
            offset += nbytes
        if offset != len(blob):
            raise WeightTruncatedError(
                f"{len(blob) - offset} unexplained trailing bytes")
        return store

    @classmethod
    def load(cls, path: str | Path) -> "WeightStore":
        return cls.from_bytes(Path(path).read_bytes())


def save_weights(module: Module, path: str | Path) -> WeightStore:
    store = WeightStore.from_module(module)
    store.save(path)
    return store


def load_weights(path: str | Path, module: Module | None = None) -> WeightStore:
    store = WeightStore.load(path)
    if module is not None:
        store.apply_to(module)
    return store
