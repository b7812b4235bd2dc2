"""Online retrieval with stability certification.

A query probes both tiers, merges candidates, reranks the best
``rerank_depth`` of them by exact cosine against stored originals and then
computes two margins over the reranked pool:

* ``gamma1``: score gap between rank 1 and rank 2;
* ``delta_k``: gap between the k-th and (k+1)-th item, i.e. the smallest
  gap between any top-k member and the best non-member.

Every score moves by at most ``epsilon + zeta`` when the query-side map
drifts by ``epsilon`` (spectral norm) and stored vectors are off by at most
``zeta``, so a margin above ``2 (epsilon + zeta)`` certifies that the
top-1 identity (resp. top-k set) cannot change.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .bridge import Bridge
from .errors import EmptyIndexError, MissingRawVectorError, UnknownIdError
from .hot_index import HotHit
from .tier_manager import TierManager


@dataclass(frozen=True)
class QueryConfig:
    k: int = 10
    K_h: int = 100
    K_w: int = 100
    rerank_depth: int = 200
    n_probe: int | None = None  # None -> warm config default
    hot_only: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.rerank_depth < self.k:
            raise ValueError("rerank_depth must be >= k")


@dataclass
class QueryOutcome:
    hits: list[HotHit]
    gamma1: float
    delta_k: float
    safe1: bool
    safeK: bool
    low_confidence: bool
    epsilon_used: float
    zeta_used: float
    latency_us: int
    k: int
    pool: list[HotHit] = field(default_factory=list, repr=False)
    tier_mix: dict[str, int] = field(default_factory=dict)

    @property
    def ids(self) -> list[Hashable]:
        return [h.id for h in self.hits]


def _order_key(hit: HotHit) -> tuple[float, Hashable]:
    return (-hit.score, hit.id)


def merge(hot_hits: Iterable[HotHit], warm_hits: Iterable[HotHit]) -> list[HotHit]:
    """Union by id keeping the higher score; sorted by score, ties to lower id."""
    best: dict[Hashable, HotHit] = {}
    for h in list(hot_hits) + list(warm_hits):
        cur = best.get(h.id)
        if cur is None or h.score > cur.score:
            best[h.id] = h
    return sorted(best.values(), key=_order_key)


def rerank(q: np.ndarray, candidates: list[HotHit], depth: int, lookup) -> list[HotHit]:
    """Exact-cosine rescoring of the first ``depth`` candidates.

    ``lookup(id)`` returns the stored original vector.

    Raises:
        MissingRawVectorError: a candidate has no stored vector.
    """
    head = candidates[:depth]
    if not head:
        return []
    try:
        vecs = np.vstack([lookup(h.id) for h in head])
    except (KeyError, UnknownIdError) as exc:
        raise MissingRawVectorError(str(exc)) from exc
    scores = np.clip(vecs @ q, -1.0, 1.0)
    return sorted((HotHit(h.id, float(s)) for h, s in zip(head, scores)), key=_order_key)


def margins(scores: list[float], k: int) -> tuple[float, float]:
    """``(gamma1, delta_k)`` for a descending score list; +inf when undefined."""
    gamma1 = scores[0] - scores[1] if len(scores) >= 2 else math.inf
    delta_k = scores[k - 1] - scores[k] if len(scores) > k else math.inf
    return max(0.0, gamma1), max(0.0, delta_k)


def safe_flags(gamma1: float, delta_k: float, epsilon: float, zeta: float) -> tuple[bool, bool]:
    budget = 2.0 * (epsilon + zeta)
    return gamma1 > budget, delta_k > budget


class QueryEngine:
    """Read-only query path over a :class:`TierManager` (and optional bridge)."""

    def __init__(self, tiers: TierManager, config: QueryConfig | None = None,
                 bridge: Bridge | None = None) -> None:
        self.tiers = tiers
        self.config = config or QueryConfig()
        self.bridge = bridge

    def current_epsilon(self) -> float:
        return self.bridge.epsilon if self.bridge is not None else 0.0

    def candidates(self, q: np.ndarray, cfg: QueryConfig) -> tuple[list[HotHit], dict[str, int]]:
        tiers = self.tiers
        hot_hits: list[HotHit] = []
        warm_hits: list[HotHit] = []
        if len(tiers.hot):
            hot_hits = tiers.hot.search(q, cfg.K_h)
        if not cfg.hot_only and tiers.warm.trained and len(tiers.warm):
            warm_hits = tiers.warm.search(q, cfg.K_w, cfg.n_probe)
        staged_hits = [
            HotHit(i, float(np.clip(tiers.staged_vectors[i] @ q, -1.0, 1.0))) for i in tiers.staged
        ]
        mix = {"hot": len(hot_hits), "warm": len(warm_hits), "staged": len(staged_hits)}
        return merge(hot_hits + staged_hits, warm_hits), mix

    def query(
        self,
        q: np.ndarray,
        k: int | None = None,
        epsilon: float | None = None,
        zeta: float | None = None,
        config: QueryConfig | None = None,
        source_space: bool = False,
    ) -> QueryOutcome:
        """Retrieve, rerank, and certify the top ``k`` for unit query ``q``.

        With ``source_space=True`` the query is first mapped through the
        bridge. ``epsilon``/``zeta`` default to the bridge drift and the
        tier manager's current distortion.
        """
        cfg = config or self.config
        k = cfg.k if k is None else k
        t0 = time.perf_counter_ns()
        q = np.asarray(q, dtype=np.float64)
        if source_space:
            if self.bridge is None:
                raise ValueError("source-space query without a bridge")
            q = self.bridge.apply(q)
        with self.tiers.lock:
            if not (len(self.tiers.hot) or len(self.tiers.warm) or self.tiers.staged):
                raise EmptyIndexError("both tiers are empty")
            eps = self.current_epsilon() if epsilon is None else float(epsilon)
            zt = self.tiers.zeta if zeta is None else float(zeta)
            cands, mix = self.candidates(q, cfg)
            pool = rerank(q, cands, cfg.rerank_depth, self.tiers.vector)
        scores = [h.score for h in pool]
        gamma1, delta_k = margins(scores, k)
        safe1, safeK = safe_flags(gamma1, delta_k, eps, zt)
        latency = (time.perf_counter_ns() - t0) // 1000
        return QueryOutcome(
            hits=pool[:k],
            gamma1=gamma1,
            delta_k=delta_k,
            safe1=safe1,
            safeK=safeK,
            low_confidence=not safe1,
            epsilon_used=eps,
            zeta_used=zt,
            latency_us=int(latency),
            k=k,
            pool=pool,
            tier_mix=mix,
        )

    def pool_vectors(self, outcome: QueryOutcome) -> np.ndarray:
        with self.tiers.lock:
            return np.vstack([self.tiers.vector(h.id) for h in outcome.pool])


def _rotate_queries(q: np.ndarray, eps: float, n: int, rng: np.random.Generator,
                    toward: np.ndarray | None = None) -> np.ndarray:
    """``n`` images of ``q`` under plane rotations ``Q`` with ``||Q - I||_2 <= eps``.

    A rotation by ``theta`` in the plane of ``q`` and a unit ``w`` orthogonal
    to ``q`` moves ``q`` to ``cos(theta) q + sin(theta) w`` and has
    ``||Q - I||_2 = 2 sin(theta / 2)``. With ``toward`` given, every rotation
    uses the full angle in the direction of ``toward``.
    """
    d = q.shape[0]
    theta_max = 2.0 * math.asin(min(1.0, eps / 2.0)) if eps > 0 else 0.0
    if toward is None:
        w = rng.standard_normal((n, d))
        theta = theta_max * rng.random(n)[:, None]
    else:
        w = np.broadcast_to(toward, (n, d)).copy()
        theta = np.full((n, 1), theta_max)
    w -= np.outer(w @ q, q)
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    w /= norms
    return np.cos(theta) * q[None, :] + np.sin(theta) * w


def certify_stability(
    q: np.ndarray,
    pool_vectors: np.ndarray,
    k: int,
    epsilon: float,
    zeta: float,
    trials: int,
    seed: int = 0,
    adversarial_fraction: float = 0.25,
    chunk: int = 2048,
) -> tuple[int, int]:
    """Count top-1 and top-k set changes under bounded perturbations.

    Each trial rotates the query by an orthogonal map within ``epsilon`` of
    the identity and moves every pool vector by at most ``zeta``; scores are
    raw inner products of the perturbed (not renormalized) vectors. Only the
    component of an item perturbation along the perturbed query affects its
    score, so that signed shift is sampled directly, uniform in
    ``[-zeta, zeta]``; this weights large shifts more heavily than uniform
    directions would in high dimension. ``adversarial_fraction`` of the
    trials use the worst case instead: full-norm pushes that lower the
    current winners and raise everyone else, with the query rotated toward
    the strongest challenger. Adversarial trials alternate between attacking
    the top-1 identity and the top-k boundary.

    Returns:
        ``(top1_changes, topk_set_changes)``.
    """
    q = np.asarray(q, dtype=np.float64)
    X = np.asarray(pool_vectors, dtype=np.float64)
    P = X.shape[0]
    if P < 2 or trials <= 0:
        return 0, 0
    rng = np.random.default_rng(seed)
    # rank order (ties to the lower row) so the top-k is the leading slice
    X = X[np.lexsort((np.arange(P), -(X @ q)))]
    kk = min(k, P)
    # challengers: runner-up for the top-1 attack, best outsider for the top-k attack
    steer_first = X[1] - X[0]
    steer_k = X[kk] - X[kk - 1] if kk < P else steer_first
    push_first = np.ones(P)
    push_first[0] = -1.0
    push_k = np.ones(P)
    push_k[:kk] = -1.0

    n_adv = int(round(adversarial_fraction * trials))
    top1_changes = 0
    topk_changes = 0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        trial = np.arange(done, done + n)
        adv = trial < n_adv
        attack_first = adv & (trial % 2 == 0)
        attack_k = adv & ~attack_first

        qs = _rotate_queries(q, epsilon, n, rng)
        shift = rng.uniform(-zeta, zeta, (n, P))
        for mask, steer, push in ((attack_first, steer_first, push_first), (attack_k, steer_k, push_k)):
            m = int(mask.sum())
            if not m:
                continue
            qs[mask] = _rotate_queries(q, epsilon, m, rng, toward=steer)
            shift[mask] = zeta * push

        # ||q'|| = 1, so an item shift of norm r at angle a to q' adds r*cos(a)
        scores = qs @ X.T
        scores += shift
        top1_changes += int(np.count_nonzero(np.argmax(scores, axis=1) != 0))
        if kk < P:
            # the set survives iff every member still beats every outsider
            weakest = scores[:, :kk].min(axis=1)
            strongest = scores[:, kk:].max(axis=1)
            topk_changes += int(np.count_nonzero(strongest > weakest))
        done += n
    return top1_changes, topk_changes
