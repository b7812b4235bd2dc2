"""Warm tier: IVF coarse partitioning with residual product quantization.

Items are assigned to their nearest coarse centroid and the residual is
split into ``m`` chunks, each coded against its own codebook. Search scores
codes with per-chunk inner-product lookup tables (ADC) and never touches
the original vectors; those are kept in a :class:`RawStore` for the exact
rerank done by the query engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    EmptyIndexError,
    EmptySampleError,
    IndexOutOfRangeError,
    InsufficientTrainingDataError,
    NotTrainedError,
)
from .hot_index import HotHit
from .rawstore import RawStore
from .vecmath import kmeans

_ENCODE_BATCH = 256


@dataclass(frozen=True)
class WarmConfig:
    n_list: int = 100
    m: int = 8
    n_bits: int = 8
    n_probe: int = 10
    kmeans_iters: int = 25

    def __post_init__(self) -> None:
        if self.n_list < 1:
            raise ValueError("n_list must be >= 1")
        if not 1 <= self.n_probe <= self.n_list:
            raise ValueError("n_probe must be in [1, n_list]")
        if not 1 <= self.n_bits <= 16:
            raise ValueError("n_bits must be in [1, 16]")
        if self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def min_train(self) -> int:
        return 10 * self.n_list

    def check_dim(self, d: int) -> None:
        if d % self.m:
            raise ValueError(f"dimension {d} is not divisible by m={self.m}")


@dataclass(frozen=True)
class PQCode:
    list_id: int
    sub_ids: tuple[int, ...]


@dataclass
class WarmCodec:
    coarse_centroids: np.ndarray  # (n_list, d)
    codebooks: list[np.ndarray]  # m arrays of (k_j, d/m), k_j <= 2**n_bits
    n_bits: int
    zeta: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.coarse_centroids.shape[1])

    @property
    def n_list(self) -> int:
        return int(self.coarse_centroids.shape[0])

    @property
    def m(self) -> int:
        return len(self.codebooks)

    @property
    def dsub(self) -> int:
        return self.dim // self.m

    def equals(self, other: "WarmCodec") -> bool:
        """Bitwise equality of all arrays and of zeta."""
        return (
            self.n_bits == other.n_bits
            and self.coarse_centroids.tobytes() == other.coarse_centroids.tobytes()
            and len(self.codebooks) == len(other.codebooks)
            and all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.codebooks, other.codebooks))
            and float(self.zeta).hex() == float(other.zeta).hex()
        )


def _nearest(x: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Row-wise argmin L2 distance, exact differences, ties to lowest index."""
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], _ENCODE_BATCH):
        chunk = x[start : start + _ENCODE_BATCH]
        diff = chunk[:, None, :] - table[None, :, :]
        out[start : start + _ENCODE_BATCH] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    return out


def encode_batch(codec: WarmCodec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encode rows of ``x``; returns ``(list_ids, sub_ids[n, m])``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != codec.dim:
        raise DimensionMismatchError(f"expected (n, {codec.dim}) input, got {x.shape}")
    lists = _nearest(x, codec.coarse_centroids)
    resid = x - codec.coarse_centroids[lists]
    ds = codec.dsub
    subs = np.empty((x.shape[0], codec.m), dtype=np.int64)
    for j, book in enumerate(codec.codebooks):
        subs[:, j] = _nearest(resid[:, j * ds : (j + 1) * ds], book)
    return lists, subs


def decode_batch(codec: WarmCodec, lists: np.ndarray, subs: np.ndarray) -> np.ndarray:
    lists = np.asarray(lists, dtype=np.int64)
    subs = np.asarray(subs, dtype=np.int64)
    if lists.size and (lists.min() < 0 or lists.max() >= codec.n_list):
        raise IndexOutOfRangeError("coarse list id out of range")
    parts = []
    for j, book in enumerate(codec.codebooks):
        col = subs[:, j]
        if col.size and (col.min() < 0 or col.max() >= book.shape[0]):
            raise IndexOutOfRangeError(f"sub-code out of range in chunk {j}")
        parts.append(book[col])
    return codec.coarse_centroids[lists] + np.concatenate(parts, axis=1)


def warm_encode(codec: WarmCodec, v: np.ndarray) -> PQCode:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (codec.dim,):
        raise DimensionMismatchError(f"expected dim {codec.dim}, got {v.shape}")
    lists, subs = encode_batch(codec, v[None, :])
    return PQCode(int(lists[0]), tuple(int(s) for s in subs[0]))


def warm_decode(codec: WarmCodec, code: PQCode) -> np.ndarray:
    """Reconstruct ``v_hat``; deliberately not renormalized."""
    if len(code.sub_ids) != codec.m:
        raise IndexOutOfRangeError(f"code has {len(code.sub_ids)} sub-ids, codec has m={codec.m}")
    return decode_batch(codec, np.array([code.list_id]), np.array([code.sub_ids]))[0]


def measure_zeta(codec: WarmCodec, sample: np.ndarray) -> float:
    """Mean L2 reconstruction error over ``sample``."""
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptySampleError("measure_zeta needs a non-empty sample")
    lists, subs = encode_batch(codec, x)
    err = np.linalg.norm(x - decode_batch(codec, lists, subs), axis=1)
    return float(err.mean())


def warm_train(
    sample: np.ndarray,
    cfg: WarmConfig,
    seed: int = 0,
    coarse_centroids: np.ndarray | None = None,
) -> WarmCodec:
    """Train coarse centroids and residual codebooks on ``sample``.

    Each chunk's codebook has ``min(2**n_bits, distinct residual chunks)``
    entries. ``coarse_centroids`` may be passed to reuse a partition.
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("training sample must be 2-D")
    if x.shape[0] < cfg.min_train:
        raise InsufficientTrainingDataError(
            f"need at least {cfg.min_train} training vectors, got {x.shape[0]}"
        )
    d = x.shape[1]
    cfg.check_dim(d)
    rng = np.random.default_rng(seed)
    coarse_seed, *chunk_seeds = (int(s) for s in rng.integers(0, 2**31 - 1, size=cfg.m + 1))

    if coarse_centroids is None:
        coarse, assign = kmeans(x, cfg.n_list, cfg.kmeans_iters, coarse_seed)
    else:
        coarse = np.asarray(coarse_centroids, dtype=np.float64).copy()
        assign = _nearest(x, coarse)
    resid = x - coarse[assign]

    ds = d // cfg.m
    books = []
    for j in range(cfg.m):
        chunk = resid[:, j * ds : (j + 1) * ds]
        distinct = np.unique(chunk, axis=0).shape[0]
        k = min(2**cfg.n_bits, distinct)
        book, _ = kmeans(chunk, k, cfg.kmeans_iters, chunk_seeds[j])
        books.append(book)
    codec = WarmCodec(coarse, books, cfg.n_bits)
    codec.zeta = measure_zeta(codec, x)
    return codec


@dataclass
class _Posting:
    ids: list[int] = field(default_factory=list)
    codes: list[np.ndarray] = field(default_factory=list)
    _packed: np.ndarray | None = None

    def packed(self) -> np.ndarray:
        if self._packed is None or self._packed.shape[0] != len(self.codes):
            self._packed = np.vstack(self.codes) if self.codes else np.zeros((0, 0), dtype=np.int64)
        return self._packed


class WarmIndex:
    """Posting lists of PQ codes plus the raw store of originals."""

    def __init__(self, dim: int, config: WarmConfig | None = None) -> None:
        self.dim = dim
        self.config = config or WarmConfig()
        self.config.check_dim(dim)
        self.codec: WarmCodec | None = None
        self.raw = RawStore(dim)
        self._postings: dict[int, _Posting] = {}
        self._codes: dict[int, PQCode] = {}
        self._order: list[int] = []

    def __len__(self) -> int:
        return len(self._codes)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._codes

    @property
    def trained(self) -> bool:
        return self.codec is not None

    def ids(self) -> list[int]:
        return list(self._order)

    def code(self, item_id: int) -> PQCode:
        return self._codes[item_id]

    def _store_code(self, item_id: int, list_id: int, subs: np.ndarray) -> None:
        post = self._postings.setdefault(list_id, _Posting())
        post.ids.append(item_id)
        post.codes.append(np.asarray(subs, dtype=np.int64))
        self._codes[item_id] = PQCode(list_id, tuple(int(s) for s in subs))

    def add(self, item_id: int, v: np.ndarray) -> None:
        self.add_many([item_id], np.asarray(v, dtype=np.float64)[None, :])

    def add_many(self, ids: list[int], vecs: np.ndarray) -> None:
        if self.codec is None:
            raise NotTrainedError("warm codec is not trained")
        vecs = np.asarray(vecs, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected (n, {self.dim}) vectors, got {vecs.shape}")
        seen = set()
        for item_id in ids:
            if item_id in self._codes or item_id in seen:
                raise DuplicateIdError(item_id)
            seen.add(item_id)
        lists, subs = encode_batch(self.codec, vecs)
        for item_id, v, l, s in zip(ids, vecs, lists.tolist(), subs):
            self.raw.put(item_id, v)
            self._store_code(item_id, l, s)
            self._order.append(item_id)

    def set_codec(self, codec: WarmCodec) -> None:
        """Swap in a new codec and re-code every stored item."""
        self.config.check_dim(codec.dim)
        self.codec = codec
        self._postings = {}
        self._codes = {}
        if not self._order:
            return
        vecs = np.vstack([self.raw.get(i) for i in self._order])
        lists, subs = encode_batch(codec, vecs)
        for item_id, l, s in zip(self._order, lists.tolist(), subs):
            self._store_code(item_id, l, s)

    def probe_lists(self, q: np.ndarray, n_probe: int) -> np.ndarray:
        assert self.codec is not None
        diff = self.codec.coarse_centroids - q[None, :]
        dist = np.einsum("ij,ij->i", diff, diff)
        return np.argsort(dist, kind="stable")[:n_probe]

    def search(self, q: np.ndarray, k: int, n_probe: int | None = None) -> list[HotHit]:
        """Top ``k`` by ADC inner product ``<q, v_hat>``, ties to lower id."""
        if self.codec is None:
            raise NotTrainedError("warm codec is not trained")
        if not self._codes:
            raise EmptyIndexError("warm index is empty")
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatchError(f"expected dim {self.dim}, got {q.shape}")
        codec = self.codec
        n_probe = self.config.n_probe if n_probe is None else min(n_probe, codec.n_list)
        ds = codec.dsub
        luts = [book @ q[j * ds : (j + 1) * ds] for j, book in enumerate(codec.codebooks)]
        coarse_scores = codec.coarse_centroids @ q

        all_ids: list[int] = []
        all_scores: list[np.ndarray] = []
        for list_id in self.probe_lists(q, n_probe).tolist():
            post = self._postings.get(list_id)
            if post is None or not post.ids:
                continue
            codes = post.packed()
            s = np.full(codes.shape[0], coarse_scores[list_id])
            for j, lut in enumerate(luts):
                s += lut[codes[:, j]]
            all_ids.extend(post.ids)
            all_scores.append(s)
        if not all_ids:
            return []
        scores = np.concatenate(all_scores)
        ids = np.asarray(all_ids)
        order = np.lexsort((ids, -scores))[:k]
        return [HotHit(int(ids[i]), float(scores[i])) for i in order]
