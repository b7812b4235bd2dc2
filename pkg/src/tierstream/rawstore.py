"""The ``LUMAVEC1`` raw vector file format.

Layout (little-endian): 8-byte magic ``LUMAVEC1``, ``u32`` dimension,
``u64`` record count, then per record a ``u64`` id followed by ``d``
``f32`` components.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DimensionMismatchError, DuplicateIdError, MissingRawVectorError

MAGIC = b"LUMAVEC1"
_HEADER = struct.Struct("<8sIQ")


def encode_records(dim: int, records: Iterable[tuple[int, np.ndarray]]) -> bytes:
    records = list(records)
    rec_dtype = np.dtype([("id", "<u8"), ("v", "<f4", (dim,))])
    arr = np.zeros(len(records), dtype=rec_dtype)
    for i, (item_id, vec) in enumerate(records):
        vec = np.asarray(vec)
        if vec.shape != (dim,):
            raise DimensionMismatchError(f"record {item_id}: expected dim {dim}, got {vec.shape}")
        arr[i]["id"] = int(item_id)
        arr[i]["v"] = vec
    return _HEADER.pack(MAGIC, dim, len(records)) + arr.tobytes()


def decode_records(buf: bytes) -> tuple[int, np.ndarray, np.ndarray]:
    """Parse a raw-store buffer into ``(dim, ids[u64], vectors[float64])``."""
    if len(buf) < _HEADER.size:
        raise ValueError("raw store truncated before header")
    magic, dim, count = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad raw store magic {magic!r}")
    rec_dtype = np.dtype([("id", "<u8"), ("v", "<f4", (dim,))])
    expected = _HEADER.size + count * rec_dtype.itemsize
    if len(buf) != expected:
        raise ValueError(f"raw store length {len(buf)} != expected {expected}")
    arr = np.frombuffer(buf, dtype=rec_dtype, count=count, offset=_HEADER.size)
    return int(dim), arr["id"].astype(np.uint64), arr["v"].astype(np.float64)


def write_vectors(path: str | Path, dim: int, records: Iterable[tuple[int, np.ndarray]]) -> None:
    Path(path).write_bytes(encode_records(dim, records))


def read_vectors(path: str | Path) -> tuple[int, np.ndarray, np.ndarray]:
    return decode_records(Path(path).read_bytes())


class RawStore:
    """Id -> original vector map backing exact reranking of warm items.

    Vectors are held as float64 but the on-disk form is f32, so only
    f32-representable vectors (what the tier manager stores) round-trip
    exactly.
    """

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self._vecs: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vecs)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._vecs

    def __iter__(self) -> Iterator[int]:
        return iter(self._vecs)

    def put(self, item_id: int, v: np.ndarray) -> None:
        if item_id in self._vecs:
            raise DuplicateIdError(item_id)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatchError(f"expected dim {self.dim}, got {v.shape}")
        self._vecs[item_id] = v.copy()

    def get(self, item_id: int) -> np.ndarray:
        try:
            return self._vecs[item_id]
        except KeyError:
            raise MissingRawVectorError(item_id) from None

    def items(self) -> list[tuple[int, np.ndarray]]:
        return list(self._vecs.items())

    def to_bytes(self) -> bytes:
        return encode_records(self.dim, self._vecs.items())

    def save(self, path: str | Path) -> None:
        write_vectors(path, self.dim, self._vecs.items())

    @classmethod
    def load(cls, path: str | Path) -> "RawStore":
        dim, ids, vecs = read_vectors(path)
        store = cls(dim)
        for item_id, v in zip(ids.tolist(), vecs):
            store.put(int(item_id), v)
        return store
