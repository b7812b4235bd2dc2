"""Hot/warm tier ownership and the spill policy.

New items always land in the hot HNSW tier. When the hot tier holds more
than ``budget_B`` items, the lowest-scoring ones are moved to the warm
IVF-PQ tier. Scores mix recency, usage frequency, novelty at ingest and an
optional group-coverage term; all of them are evaluated once against a
single ``now`` when a spill starts.
"""

from __future__ import annotations

import bisect
import enum
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import DuplicateIdError, TierStreamError, UnknownIdError
from .hot_index import HNSWIndex, HotConfig
from .vecmath import normalize
from .warm_index import WarmCodec, WarmConfig, WarmIndex, measure_zeta, warm_train

log = logging.getLogger(__name__)

MODALITIES = ("text", "image", "audio", "video")


class Tier(str, enum.Enum):
    HOT = "hot"
    WARM = "warm"
    STAGED = "staged"
    ABSENT = "absent"


@dataclass
class EmbeddingRecord:
    id: int
    vector: np.ndarray
    modality: str = "image"
    group: str | None = None
    last_access: float = 0.0
    access_count: int = 0
    novelty: float = 1.0

    def policy_dict(self) -> dict:
        return {
            "id": self.id,
            "modality": self.modality,
            "group": self.group,
            "last_access": self.last_access,
            "access_count": self.access_count,
            "novelty": self.novelty,
        }


@dataclass(frozen=True)
class PolicyWeights:
    w_rec: float = 1.0
    w_freq: float = 1.0
    w_nov: float = 1.0
    w_cov: float = 0.0
    tau: float = 3600.0

    def __post_init__(self) -> None:
        ws = (self.w_rec, self.w_freq, self.w_nov, self.w_cov)
        if any(w < 0 for w in ws) or not any(w > 0 for w in ws):
            raise ValueError("policy weights must be nonnegative with at least one positive")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class TierConfig:
    budget_B: int = 500
    min_train: int | None = None  # defaults to 10 * n_list
    hot: HotConfig = field(default_factory=HotConfig)
    warm: WarmConfig = field(default_factory=WarmConfig)
    weights: PolicyWeights = field(default_factory=PolicyWeights)
    seed: int = 0
    drift_ratio: float = 1.25
    drift_sample: int = 256

    def __post_init__(self) -> None:
        if self.budget_B < 1:
            raise ValueError("budget_B must be >= 1")
        if self.min_train is None:
            object.__setattr__(self, "min_train", self.warm.min_train)
        if self.min_train < self.warm.min_train:
            raise ValueError(f"min_train must be >= 10 * n_list = {self.warm.min_train}")


class NormFilter:
    """Quarantines vectors whose raw norm is far from the running median.

    Accepted norms satisfy ``lo * median <= norm < hi * median``; the upper
    boundary itself is rejected so a vector scaled to exactly ``hi`` times
    the median is caught despite rounding.
    """

    def __init__(self, lo: float = 0.01, hi: float = 100.0, rel_tol: float = 1e-9) -> None:
        self.lo, self.hi, self.rel_tol = lo, hi, rel_tol
        self._norms: list[float] = []

    @property
    def median(self) -> float | None:
        n = len(self._norms)
        if n == 0:
            return None
        mid = n // 2
        return self._norms[mid] if n % 2 else 0.5 * (self._norms[mid - 1] + self._norms[mid])

    def admit(self, norm: float) -> bool:
        med = self.median
        if med is not None:
            ratio = norm / med
            if ratio <= self.lo * (1 + self.rel_tol) or ratio >= self.hi * (1 - self.rel_tol):
                return False
        bisect.insort(self._norms, norm)
        return True


@dataclass
class SpillReport:
    moved: int = 0
    trained: bool = False
    retrained: bool = False
    zeta: float | None = None
    error: str | None = None


def canonical(v: np.ndarray) -> np.ndarray:
    """Unit-normalize and round to f32 precision (the storage precision)."""
    return normalize(v).astype(np.float32).astype(np.float64)


class TierManager:
    """Sole writer of the hot and warm tiers."""

    def __init__(self, dim: int, config: TierConfig | None = None) -> None:
        self.dim = dim
        self.config = config or TierConfig()
        self.hot = HNSWIndex(dim, self.config.hot)
        self.warm = WarmIndex(dim, self.config.warm)
        self.records: dict[int, EmbeddingRecord] = {}
        self.staged: list[int] = []
        self.staged_vectors: dict[int, np.ndarray] = {}
        self.quarantine: list[int] = []
        self.norm_filter: NormFilter | None = None
        self.zeta = 0.0
        self.now = 0.0
        self.spill_count = 0
        self.last_spill = SpillReport()
        self.lock = threading.RLock()

    # -- policy -------------------------------------------------------------

    def _max_hot_access(self) -> int:
        return max((self.records[i].access_count for i in self.hot.ids()), default=0)

    def _coverage(self, rec: EmbeddingRecord, group_counts: dict | None = None) -> float:
        if rec.group is None:
            return 1.0
        if group_counts is None:
            group_counts = self._group_counts()
        return 1.0 / (1.0 + max(0, group_counts.get(rec.group, 0) - 1))

    def _group_counts(self) -> dict:
        counts: dict = {}
        for i in self.hot.ids():
            g = self.records[i].group
            if g is not None:
                counts[g] = counts.get(g, 0) + 1
        return counts

    def score(self, rec: EmbeddingRecord, now: float | None = None, _max_count: int | None = None,
              _groups: dict | None = None) -> float:
        now = self.now if now is None else now
        w = self.config.weights
        max_count = self._max_hot_access() if _max_count is None else _max_count
        s = w.w_rec * math.exp(-(now - rec.last_access) / w.tau)
        if max_count > 0:
            s += w.w_freq * math.log2(1 + rec.access_count) / math.log2(1 + max_count)
        s += w.w_nov * rec.novelty
        if w.w_cov:
            s += w.w_cov * self._coverage(rec, _groups)
        return s

    def score_snapshot(self, now: float | None = None) -> dict[int, float]:
        """Scores of every hot item against a single ``now``."""
        max_count = self._max_hot_access()
        groups = self._group_counts() if self.config.weights.w_cov else None
        return {i: self.score(self.records[i], now, max_count, groups) for i in self.hot.ids()}

    # -- writes -------------------------------------------------------------

    def membership(self, item_id: int) -> Tier:
        if item_id in self.hot:
            return Tier.HOT
        if item_id in self.warm:
            return Tier.WARM
        if item_id in self.staged_vectors:
            return Tier.STAGED
        return Tier.ABSENT

    def ingest(self, rec: EmbeddingRecord, spill: bool = True) -> bool:
        """Normalize and insert ``rec`` into the hot tier.

        Returns False when the norm filter quarantines the record.
        """
        with self.lock:
            if rec.id in self.records or rec.id in self.quarantine:
                raise DuplicateIdError(rec.id)
            raw = np.asarray(rec.vector, dtype=np.float64)
            if self.norm_filter is not None and not self.norm_filter.admit(float(np.linalg.norm(raw))):
                self.quarantine.append(rec.id)
                return False
            v = canonical(raw)
            if len(self.hot):
                top = self.hot.search(v, 1)[0].score
                novelty = min(1.0, max(0.0, 1.0 - top))
            else:
                novelty = 1.0
            rec = replace(rec, vector=v, novelty=novelty)
            self.hot.insert(rec.id, v)
            self.records[rec.id] = rec
            self.now = max(self.now, rec.last_access)
            if spill and len(self.hot) > self.config.budget_B:
                self.spill()
            return True

    def ingest_many(self, recs: Iterable[EmbeddingRecord], spill_every: int = 1) -> int:
        """Ingest in order, running the spill after every ``spill_every`` records."""
        accepted = 0
        with self.lock:
            for n, rec in enumerate(recs, 1):
                accepted += self.ingest(rec, spill=False)
                if n % spill_every == 0 and len(self.hot) > self.config.budget_B:
                    self.spill()
            if len(self.hot) > self.config.budget_B:
                self.spill()
        return accepted

    def touch(self, item_id: int, now: float) -> None:
        with self.lock:
            tier = self.membership(item_id)
            if tier is Tier.ABSENT:
                raise UnknownIdError(item_id)
            if tier is Tier.HOT:
                rec = self.records[item_id]
                rec.access_count += 1
                rec.last_access = now
                self.now = max(self.now, now)

    def _rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, self.spill_count, tag])

    def _training_sample(self) -> np.ndarray:
        cfg = self.config
        staged = [self.staged_vectors[i] for i in self.staged]
        hot_ids, hot_vecs = self.hot.live_matrix()
        # enough points for every codebook entry to be shared by a few vectors
        floor = max(cfg.min_train, 4 * 2**cfg.warm.n_bits)
        want = min(len(hot_ids), max(4 * cfg.warm.n_list, floor - len(staged)))
        pick = np.sort(self._rng(1).choice(len(hot_ids), size=want, replace=False)) if want else []
        parts = [np.vstack(staged)] if staged else []
        if want:
            parts.append(hot_vecs[pick])
        sample = np.vstack(parts) if parts else np.zeros((0, self.dim))
        short = floor - sample.shape[0]
        if short > 0 and len(self.warm):
            warm_ids = self.warm.ids()
            take = min(short, len(warm_ids))
            sel = np.sort(self._rng(2).choice(len(warm_ids), size=take, replace=False))
            sample = np.vstack([sample, np.vstack([self.warm.raw.get(warm_ids[j]) for j in sel])])
        return sample

    def _fresh_sample(self) -> np.ndarray:
        hot_ids, hot_vecs = self.hot.live_matrix()
        pool = [self.staged_vectors[i] for i in self.staged] + list(hot_vecs)
        n = min(self.config.drift_sample, len(pool))
        sel = np.sort(self._rng(3).choice(len(pool), size=n, replace=False))
        return np.vstack([pool[j] for j in sel])

    def _train(self) -> WarmCodec:
        sample = self._training_sample()
        return warm_train(sample, self.config.warm, seed=int(self._rng(4).integers(2**31 - 1)))

    def spill(self, now: float | None = None) -> int:
        """Move the lowest-scoring hot items into the warm tier.

        Returns the number of items moved out of the hot tier.
        """
        with self.lock:
            now = self.now if now is None else now
            cfg = self.config
            report = SpillReport()
            excess = len(self.hot) - cfg.budget_B
            if excess <= 0 and not self.staged:
                self.last_spill = report
                return 0
            if not self.warm.trained and len(self.hot) + len(self.staged) < cfg.min_train:
                # cold start: keep everything hot until the floor is met
                self.last_spill = report
                return 0

            moved = 0
            if excess > 0:
                scores = self.score_snapshot(now)
                victims = sorted(scores, key=lambda i: (scores[i], i))[:excess]
                for item_id, vec in zip(victims, self.hot.remove_many(victims)):
                    self.staged_vectors[item_id] = vec
                    self.staged.append(item_id)
                moved = len(victims)
            report.moved = moved

            try:
                if not self.warm.trained:
                    self.warm.set_codec(self._train())
                    report.trained = True
                    self.zeta = self.warm.codec.zeta
                else:
                    fresh = measure_zeta(self.warm.codec, self._fresh_sample())
                    self.zeta = fresh
                    if fresh > cfg.drift_ratio * self.warm.codec.zeta:
                        self.warm.set_codec(self._train())
                        report.retrained = True
                        self.zeta = self.warm.codec.zeta
            except TierStreamError as exc:
                log.warning("warm training failed, %d items stay staged: %s", len(self.staged), exc)
                report.error = str(exc)
                self.spill_count += 1
                self.last_spill = report
                return moved

            if self.staged:
                ids = list(self.staged)
                self.warm.add_many(ids, np.vstack([self.staged_vectors[i] for i in ids]))
                self.staged.clear()
                self.staged_vectors.clear()
            self.zeta = self.warm_distortion()
            report.zeta = self.zeta
            self.spill_count += 1
            self.last_spill = report
            return moved

    def retrain_warm(self, warm_config: WarmConfig | None = None) -> WarmCodec:
        """Retrain the warm codec now, optionally with different PQ settings.

        Every warm item is re-coded from its stored original.
        """
        with self.lock:
            if warm_config is not None:
                warm_config.check_dim(self.dim)
                self.config = replace(self.config, warm=warm_config)
                self.warm.config = warm_config
            codec = self._train()
            self.warm.set_codec(codec)
            self.zeta = self.warm_distortion() if len(self.warm) else codec.zeta
            self.spill_count += 1
            return codec

    def warm_distortion(self, limit: int = 2048) -> float:
        """Mean reconstruction error over (a seeded sample of) the stored warm items."""
        ids = self.warm.ids()
        if not ids:
            return 0.0
        if len(ids) > limit:
            ids = [ids[j] for j in np.sort(self._rng(5).choice(len(ids), size=limit, replace=False))]
        return measure_zeta(self.warm.codec, np.vstack([self.warm.raw.get(i) for i in ids]))

    # -- reads --------------------------------------------------------------

    def vector(self, item_id: int) -> np.ndarray:
        """Stored original vector from whichever tier holds ``item_id``."""
        tier = self.membership(item_id)
        if tier is Tier.HOT:
            return self.hot.vector(item_id)
        if tier is Tier.WARM:
            return self.warm.raw.get(item_id)
        if tier is Tier.STAGED:
            return self.staged_vectors[item_id]
        raise UnknownIdError(item_id)

    def counts(self) -> dict[str, int]:
        return {
            "hot": len(self.hot),
            "warm": len(self.warm),
            "staged": len(self.staged),
            "quarantined": len(self.quarantine),
        }

    def rebuild_hot(self) -> HNSWIndex:
        """Build a fresh hot graph from live items; the caller swaps it in."""
        ids, vecs = self.hot.live_matrix()
        fresh = HNSWIndex(self.dim, self.config.hot)
        for item_id, v in zip(ids, vecs):
            fresh.insert(item_id, v)
        return fresh
