"""Named, partition-tagged parameters and the binary weight file format.

Weight file layout (all integers little-endian)::

    b"EDDW"                      magic
    u32 version                  currently 1
    u32 count                    number of parameter records
    per record:
        u32 name_len, name bytes (utf-8)
        u8  partition tag        0 = feature, 1 = class_head, 2 + k = attribute_head(k)
        u32 rank, rank * u32 dims
        f32 data, row-major
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor

MAGIC = b"EDDW"
WEIGHT_FORMAT_VERSION = 1


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Partition:
    kind: str  # "feature" | "class_head" | "attribute_head"
    index: int = -1

    def __post_init__(self):
        if self.kind not in ("feature", "class_head", "attribute_head"):
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if (self.kind == "attribute_head") != (self.index >= 0):
            raise ValueError("attribute_head partitions need an index, others must not have one")

    @property
    def tag(self) -> int:
        if self.kind == "feature":
            return 0
        if self.kind == "class_head":
            return 1
        return 2 + self.index

    @classmethod
    def from_tag(cls, tag: int) -> "Partition":
        if tag == 0:
            return FEATURE
        if tag == 1:
            return CLASS_HEAD
        return cls("attribute_head", tag - 2)

    def __str__(self) -> str:
        return f"attribute_head({self.index})" if self.kind == "attribute_head" else self.kind


FEATURE = Partition("feature")
CLASS_HEAD = Partition("class_head")


def attribute_head(k: int) -> Partition:
    return Partition("attribute_head", k)


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ParameterStore:
    """Ordered mapping ``name -> Tensor``, each tagged with one partition."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._parts: dict[str, Partition] = {}

    def add(self, name: str, value: np.ndarray, partition: Partition) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value), requires_grad=True, name=name, dtype=np.asarray(value).dtype)
        self._params[name] = t
        self._parts[name] = partition
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def partition(self, name: str) -> Partition:
        return self._parts[name]

    def names_in(self, partition: Partition) -> list[str]:
        return [n for n in self._params if self._parts[n] == partition]

    def partitions(self) -> list[Partition]:
        return sorted(set(self._parts.values()))

    def count(self, partition: Partition | None = None) -> int:
        return sum(t.size for n, t in self._params.items() if partition is None or self._parts[n] == partition)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, t in self._params.items():
            arr = np.asarray(state[n])
            if arr.shape != t.shape:
                raise WeightFileError(f"{n}: stored shape {arr.shape} != expected {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def astype(self, dtype) -> "ParameterStore":
        """Copy with every parameter cast (used for float64 gradient checks)."""
        out = ParameterStore()
        for n, t in self._params.items():
            out.add(n, t.data.astype(dtype), self._parts[n])
        return out

    # -- weight file -------------------------------------------------------
    def to_bytes(self) -> bytes:
        chunks = [MAGIC, struct.pack("<II", WEIGHT_FORMAT_VERSION, len(self._params))]
        for name, t in self._params.items():
            nb = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(nb)))
            chunks.append(nb)
            chunks.append(struct.pack("<BI", self._parts[name].tag, t.data.ndim))
            chunks.append(struct.pack(f"<{t.data.ndim}I", *t.shape))
            chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ParameterStore":
        mv = memoryview(buf)
        pos = 0

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(mv):
                raise WeightFileError(f"truncated weight file at byte {pos} (need {n} more)")
            out = mv[pos : pos + n]
            pos += n
            return out

        if bytes(take(4)) != MAGIC:
            raise WeightFileError("bad magic: not an EDDW weight file")
        version, count = struct.unpack("<II", take(8))
        if version != WEIGHT_FORMAT_VERSION:
            raise WeightFileError(f"unsupported weight format version {version}")
        store = cls()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", take(4))
            name = bytes(take(nlen)).decode("utf-8")
            tag, rank = struct.unpack("<BI", take(5))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
            store.add(name, data, Partition.from_tag(tag))
        if pos != len(mv):
            raise WeightFileError(f"{len(mv) - pos} trailing bytes after last record")
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParameterStore":
        return cls.from_bytes(Path(path).read_bytes())
