"""Hot tier: an HNSW graph over unit vectors scored by inner product.

Nodes are never physically unlinked. ``remove`` tombstones a node so it is
still used for navigation but never returned; once tombstones exceed a
quarter of the live items the graph is rebuilt from the live nodes in
insertion order. Because insertion ignores tombstones, the graph is a pure
function of ``(seed, generation, node sequence)``, which is what
persistence replays.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

from .errors import DimensionMismatchError, DuplicateIdError, EmptyIndexError, UnknownIdError
from .vecmath import UNIT_TOL

COMPACT_RATIO = 0.25


@dataclass(frozen=True)
class HotConfig:
    M: int = 32
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.M < 2:
            raise ValueError("HNSW M must be >= 2")
        if self.ef_construction < self.M:
            raise ValueError("ef_construction must be >= M")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")


@dataclass(frozen=True)
class HotHit:
    id: Hashable
    score: float


class HNSWIndex:
    """Single-writer HNSW index with tombstone deletion.

    Args:
        dim: vector dimension.
        config: graph parameters and level-sampling seed.
    """

    def __init__(self, dim: int, config: HotConfig | None = None) -> None:
        self.dim = int(dim)
        self.config = config or HotConfig()
        self.generation = 0
        self._m0 = 2 * self.config.M
        self._ml = 1.0 / math.log(self.config.M)
        self._reset_graph()

    def _reset_graph(self) -> None:
        self._rng = np.random.default_rng([self.config.seed, self.generation])
        self._data = np.zeros((16, self.dim), dtype=np.float64)
        self._ids: list[Hashable] = []
        self._levels: list[int] = []
        # _links[layer][node] -> list of neighbor nodes
        self._links: list[dict[int, list[int]]] = []
        self._deleted: list[bool] = []
        self._node_of: dict[Hashable, int] = {}
        self._entry: int | None = None
        self._max_level = -1
        self._n_deleted = 0

    # -- bookkeeping -----------------------------------------------------

    def __len__(self) -> int:
        return len(self._node_of)

    def __contains__(self, item_id: Hashable) -> bool:
        return item_id in self._node_of

    @property
    def node_count(self) -> int:
        return len(self._ids)

    @property
    def tombstones(self) -> int:
        return self._n_deleted

    def ids(self) -> list[Hashable]:
        """Live ids in insertion order."""
        return [self._ids[n] for n in range(len(self._ids)) if not self._deleted[n]]

    def vector(self, item_id: Hashable) -> np.ndarray:
        try:
            node = self._node_of[item_id]
        except KeyError:
            raise UnknownIdError(item_id) from None
        return self._data[node].copy()

    def live_matrix(self) -> tuple[list[Hashable], np.ndarray]:
        nodes = [n for n in range(len(self._ids)) if not self._deleted[n]]
        return [self._ids[n] for n in nodes], self._data[nodes].copy()

    def node_records(self) -> list[tuple[Hashable, np.ndarray, bool]]:
        """Every graph node in insertion order as ``(id, vector, deleted)``."""
        return [
            (self._ids[n], self._data[n].copy(), self._deleted[n])
            for n in range(len(self._ids))
        ]

    # -- core graph routines ---------------------------------------------

    def _draw_level(self) -> int:
        u = 1.0 - float(self._rng.random())  # (0, 1]
        return int(-math.log(u) * self._ml)

    def _search_layer(
        self, q: np.ndarray, entries: list[int], ef: int, layer: int, skip_deleted: bool
    ) -> list[tuple[float, int]]:
        """Beam search on one layer; returns up to ``ef`` (sim, node), best first."""
        links = self._links[layer]
        data = self._data
        visited = set(entries)
        sims = data[entries] @ q
        cand: list[tuple[float, int]] = []  # max-heap on sim via negation
        res: list[tuple[float, int]] = []  # min-heap on sim
        for s, e in zip(sims.tolist(), entries):
            heapq.heappush(cand, (-s, e))
            if not (skip_deleted and self._deleted[e]):
                heapq.heappush(res, (s, -e))
        while cand:
            neg_s, node = heapq.heappop(cand)
            if len(res) >= ef and -neg_s < res[0][0]:
                break
            nbrs = [n for n in links.get(node, ()) if n not in visited]
            if not nbrs:
                continue
            visited.update(nbrs)
            nsims = (data[nbrs] @ q).tolist()
            for s, n in zip(nsims, nbrs):
                if len(res) < ef or s > res[0][0]:
                    heapq.heappush(cand, (-s, n))
                    if skip_deleted and self._deleted[n]:
                        continue
                    heapq.heappush(res, (s, -n))
                    if len(res) > ef:
                        heapq.heappop(res)
        out = [(s, -neg_n) for s, neg_n in res]
        out.sort(key=lambda t: (-t[0], t[1]))
        return out

    def _greedy(self, q: np.ndarray, entry: int, top: int, bottom: int) -> int:
        cur = entry
        cur_s = float(self._data[cur] @ q)
        for layer in range(top, bottom, -1):
            changed = True
            while changed:
                changed = False
                nbrs = self._links[layer].get(cur, [])
                if not nbrs:
                    break
                sims = self._data[nbrs] @ q
                j = int(np.argmax(sims))
                if sims[j] > cur_s:
                    cur_s = float(sims[j])
                    cur = nbrs[j]
                    changed = True
        return cur

    def _select(self, base: np.ndarray, cands: list[tuple[float, int]], m: int) -> list[int]:
        """Diversity heuristic with pruned-candidate backfill.

        ``cands`` is sorted best first by similarity to ``base``.
        """
        if len(cands) <= m:
            return [n for _, n in cands]
        nodes = [n for _, n in cands]
        sims = np.array([s for s, _ in cands])
        vecs = self._data[nodes]
        pair = vecs @ vecs.T
        n = len(nodes)
        # a candidate survives if it is closer to base than to every kept node
        closest_kept = np.full(n, -np.inf)
        alive = np.ones(n, dtype=bool)
        kept: list[int] = []
        i = 0
        while len(kept) < m:
            kept.append(i)
            alive[i] = False
            np.maximum(closest_kept, pair[i], out=closest_kept)
            nxt = np.flatnonzero(alive[i + 1 :] & (closest_kept[i + 1 :] < sims[i + 1 :]))
            if nxt.size == 0:
                break
            i = i + 1 + int(nxt[0])
        if len(kept) < m:
            kept_set = set(kept)
            for j in range(n):
                if len(kept) >= m:
                    break
                if j not in kept_set:
                    kept.append(j)
        else:
            kept.sort()
        return [nodes[j] for j in kept]

    def _connect(self, node: int, layer: int, neighbors: list[int]) -> None:
        links = self._links[layer]
        links[node] = list(neighbors)
        cap = self._m0 if layer == 0 else self.config.M
        data = self._data
        for nb in neighbors:
            nl = links.setdefault(nb, [])
            nl.append(node)
            # shrink in batches: lists may overshoot cap by a quarter between prunes
            if len(nl) > cap + cap // 4:
                sims = (data[nl] @ data[nb]).tolist()
                ranked = sorted(zip(sims, nl), key=lambda t: (-t[0], t[1]))
                links[nb] = self._select(data[nb], ranked, cap)

    def _insert_node(self, item_id: Hashable, v: np.ndarray) -> int:
        node = len(self._ids)
        if node == self._data.shape[0]:
            grown = np.zeros((2 * node, self.dim), dtype=np.float64)
            grown[:node] = self._data
            self._data = grown
        self._data[node] = v
        level = self._draw_level()
        self._ids.append(item_id)
        self._levels.append(level)
        self._deleted.append(False)
        while len(self._links) <= level:
            self._links.append({})
        for layer in range(level + 1):
            self._links[layer][node] = []

        if self._entry is None:
            self._entry = node
            self._max_level = level
            return node

        ep = self._entry
        if self._max_level > level:
            ep = self._greedy(v, ep, self._max_level, level)
        entries = [ep]
        for layer in range(min(level, self._max_level), -1, -1):
            cands = self._search_layer(v, entries, self.config.ef_construction, layer, False)
            m = self._m0 if layer == 0 else self.config.M
            self._connect(node, layer, self._select(v, cands, m))
            entries = [n for _, n in cands]
        if level > self._max_level:
            self._max_level = level
            self._entry = node
        return node

    def _check_vector(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise DimensionMismatchError(f"expected dimension {self.dim}, got {v.shape}")
        if not np.all(np.isfinite(v)) or abs(float(np.linalg.norm(v)) - 1.0) > UNIT_TOL:
            raise ValueError("hot index accepts finite unit vectors only")
        return v

    # -- public API --------------------------------------------------------

    def insert(self, item_id: Hashable, v: np.ndarray) -> None:
        v = self._check_vector(v)
        if item_id in self._node_of:
            raise DuplicateIdError(item_id)
        node = self._insert_node(item_id, v)
        self._node_of[item_id] = node

    def remove(self, item_id: Hashable) -> np.ndarray:
        """Tombstone ``item_id`` and return its stored vector."""
        try:
            node = self._node_of.pop(item_id)
        except KeyError:
            raise UnknownIdError(item_id) from None
        vec = self._data[node].copy()
        self._deleted[node] = True
        self._n_deleted += 1
        if self._n_deleted > COMPACT_RATIO * len(self._node_of):
            self.compact()
        return vec

    def remove_many(self, item_ids: list[Hashable]) -> list[np.ndarray]:
        """Tombstone a batch, compacting at most once at the end.

        Raises:
            UnknownIdError: some id is not live; nothing is removed.
        """
        missing = [i for i in item_ids if i not in self._node_of]
        if missing:
            raise UnknownIdError(missing[0])
        out = []
        for item_id in item_ids:
            node = self._node_of.pop(item_id)
            out.append(self._data[node].copy())
            self._deleted[node] = True
            self._n_deleted += 1
        if self._n_deleted > COMPACT_RATIO * len(self._node_of):
            self.compact()
        return out

    def compact(self) -> None:
        """Rebuild the graph from live nodes in insertion order."""
        live = [(self._ids[n], self._data[n].copy()) for n in range(len(self._ids)) if not self._deleted[n]]
        self.generation += 1
        self._reset_graph()
        for item_id, v in live:
            self._node_of[item_id] = self._insert_node(item_id, v)

    def search(self, q: np.ndarray, k: int, ef: int | None = None) -> list[HotHit]:
        """Top ``k`` live items by inner product; beam width ``max(ef, k)``."""
        if not self._node_of:
            raise EmptyIndexError("hot index is empty")
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatchError(f"expected dimension {self.dim}, got {q.shape}")
        ef = max(self.config.ef_search if ef is None else ef, k)
        ep = self._greedy(q, self._entry, self._max_level, 0)
        found = self._search_layer(q, [ep], ef, 0, True)
        hits = []
        for _, node in found[:k]:
            s = float(self._data[node] @ q)
            hits.append(HotHit(self._ids[node], min(1.0, max(-1.0, s))))
        return hits

    @classmethod
    def replay(
        cls,
        dim: int,
        config: HotConfig,
        generation: int,
        nodes: Iterable[tuple[Hashable, np.ndarray, bool]],
    ) -> "HNSWIndex":
        """Rebuild an index from :meth:`node_records` output.

        Tombstones are restored without triggering compaction so the graph
        is identical to the one that was saved.
        """
        index = cls(dim, config)
        index.generation = generation
        index._reset_graph()
        for item_id, v, deleted in nodes:
            node = index._insert_node(item_id, np.asarray(v, dtype=np.float64))
            if deleted:
                index._deleted[node] = True
                index._n_deleted += 1
            else:
                index._node_of[item_id] = node
        return index
