"""Failure injections and the directional signal each one should produce."""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..bridge import Bridge
from ..errors import UnknownInjectionError
from ..query_engine import QueryConfig, QueryEngine
from ..telemetry import nearest_rank
from ..tier_manager import EmbeddingRecord, TierConfig
from .evaluation import build_tiers, run_bridge_eval, run_eval
from .synthetic import Dataset, PairSpec, generate_pairs

KINDS = ("pair_swap", "over_compress", "hot_rebuild", "domain_shift", "outlier")
DEFAULT_MAGNITUDE = {"pair_swap": 0.5, "over_compress": 2.0, "hot_rebuild": 1.0, "domain_shift": 0.1,
                     "outlier": 100.0}


@dataclass(frozen=True)
class InjectionSpec:
    kind: str
    magnitude: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise UnknownInjectionError(f"unknown injection {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.magnitude is None:
            object.__setattr__(self, "magnitude", DEFAULT_MAGNITUDE[self.kind])


@dataclass
class InjectionReport:
    kind: str
    magnitude: float
    baseline: dict[str, float]
    injected: dict[str, float]
    expected: str
    signal: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def inject(spec: InjectionSpec, data: Dataset, tier_cfg: TierConfig | None = None,
           query_cfg: QueryConfig | None = None, cadence: int = 512) -> InjectionReport:
    tier_cfg = tier_cfg or TierConfig()
    query_cfg = query_cfg or QueryConfig()
    if spec.kind == "pair_swap":
        return _pair_swap(spec, data, cadence)
    if spec.kind == "over_compress":
        return _over_compress(spec, data, tier_cfg, query_cfg)
    if spec.kind == "hot_rebuild":
        return _hot_rebuild(spec, data, tier_cfg, query_cfg)
    if spec.kind == "domain_shift":
        return _domain_shift(spec, data, cadence)
    return _outlier(spec, data, tier_cfg)


def _bridge_summary(rows) -> dict[str, float]:
    later = rows[1:]  # the first refresh moves T away from the identity
    return {
        "epsilon_mean": float(np.mean([r.epsilon for r in later])),
        "epsilon_p50": float(np.median([r.epsilon_p50 for r in later])),
        "safe1": float(np.mean([r.safe1 for r in later])),
        "refreshes": float(len(rows)),
    }


def _pair_swap(spec: InjectionSpec, data: Dataset, cadence: int) -> InjectionReport:
    """Permute a fraction of the targets inside every buffer after the first."""
    n_pairs = 5 * cadence
    src, tgt, probe_ids, probe_src = generate_pairs(
        data, PairSpec(n_pairs=n_pairs, calibration=n_pairs, n_probes=100, seed=spec.seed + 1))
    rng = np.random.default_rng(spec.seed)
    bad = tgt.copy()
    for start in range(cadence, n_pairs, cadence):
        block = np.arange(start, start + cadence)
        hit = block[rng.random(cadence) < spec.magnitude]
        bad[hit] = tgt[rng.permutation(hit)]
    base = _bridge_summary(run_bridge_eval(data, src, tgt, probe_ids, probe_src, cadence=cadence))
    hurt = _bridge_summary(run_bridge_eval(data, src, bad, probe_ids, probe_src, cadence=cadence))
    signal = hurt["epsilon_mean"] > base["epsilon_mean"] and hurt["safe1"] <= base["safe1"]
    return InjectionReport(spec.kind, spec.magnitude, base, hurt, "epsilon up, Safe@1 down", signal)


def _over_compress(spec, data, tier_cfg, query_cfg) -> InjectionReport:
    """Retrain warm with ``m / magnitude`` sub-quantizers at 4 bits each."""
    tm = build_tiers(data, tier_cfg)
    k = query_cfg.k
    before = run_eval(data, tier_cfg, query_cfg, tiers=tm).metrics
    warm = tier_cfg.warm
    coarse = replace(warm, m=max(1, int(warm.m // spec.magnitude)), n_bits=min(4, warm.n_bits))
    tm.retrain_warm(coarse)
    after = run_eval(data, tier_cfg, query_cfg, tiers=tm).metrics
    pick = ("zeta", f"recall@{k}", f"ndcg@{k}", "safe@1")
    base = {key: before[key] for key in pick}
    hurt = {key: after[key] for key in pick}
    signal = hurt["zeta"] > base["zeta"] and hurt[f"recall@{k}"] < base[f"recall@{k}"]
    return InjectionReport(spec.kind, spec.magnitude, base, hurt, "zeta up, recall down", signal,
                           {"m": [warm.m, coarse.m], "n_bits": [warm.n_bits, coarse.n_bits]})


def _latencies(engine: QueryEngine, queries: np.ndarray, cfg: QueryConfig) -> list[int]:
    out = []
    for q in queries:
        t0 = time.perf_counter_ns()
        engine.query(q, config=cfg)
        out.append((time.perf_counter_ns() - t0) // 1000)
    return out


def _hot_rebuild(spec, data, tier_cfg, query_cfg) -> InjectionReport:
    """Rebuild the hot graph in the background while serving hot-only.

    The rebuild competes with queries for the interpreter, which is the
    latency spike; after the swap the normal path resumes.
    """
    tm = build_tiers(data, tier_cfg)
    engine = QueryEngine(tm, query_cfg)
    rng = np.random.default_rng(spec.seed)
    queries = data.vectors[rng.choice(len(data), size=min(200, len(data)), replace=False)]
    hot_only = replace(query_cfg, hot_only=True)
    _latencies(engine, queries[:20], query_cfg)  # warm caches
    before = _latencies(engine, queries, query_cfg)

    rounds = max(1, int(spec.magnitude))
    built: list = []
    worker = threading.Thread(target=lambda: built.extend(tm.rebuild_hot() for _ in range(rounds)))
    during: list[int] = []
    worker.start()
    i = 0
    while worker.is_alive() or not during:
        during.extend(_latencies(engine, queries[i % len(queries)][None, :], hot_only))
        i += 1
    worker.join()
    with tm.lock:
        tm.hot = built[-1]
    after = _latencies(engine, queries, query_cfg)

    def p95(xs):
        return float(nearest_rank(xs, 0.95))

    base = {"p95_us": p95(before), "p50_us": float(nearest_rank(before, 0.5))}
    hurt = {"p95_us": p95(during), "p50_us": float(nearest_rank(during, 0.5))}
    recovered = p95(after)
    signal = hurt["p95_us"] > base["p95_us"] and recovered < hurt["p95_us"]
    return InjectionReport(spec.kind, spec.magnitude, base, hurt, "p95 spike, then recovery", signal,
                           {"p95_after_us": recovered, "queries_during": len(during)})


def _domain_shift(spec, data, cadence) -> InjectionReport:
    """Noise on the query-side source vectors only; the bridge is untouched."""
    src, tgt, probe_ids, probe_src = generate_pairs(
        data, PairSpec(n_pairs=2 * cadence, calibration=2 * cadence, n_probes=200, seed=spec.seed + 1))
    bridge = Bridge(data.d, cadence)
    for s, t in zip(src, tgt):
        bridge.add_pair(s, t)
    tm = build_tiers(data, TierConfig(budget_B=len(data)))
    engine = QueryEngine(tm, QueryConfig(k=10, hot_only=True))
    rng = np.random.default_rng(spec.seed)

    def accuracy(sigma):
        eps0 = bridge.epsilon
        q = probe_src + sigma * rng.standard_normal(probe_src.shape)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        hits = sum(engine.query(v, source_space=False, epsilon=bridge.epsilon, zeta=0.0)
                   .ids[0] == int(i) for v, i in zip(q @ bridge.T, probe_ids.tolist()))
        assert bridge.epsilon == eps0
        return hits / len(probe_ids), bridge.epsilon

    acc0, eps0 = accuracy(0.0)
    acc1, eps1 = accuracy(spec.magnitude)
    base = {"accuracy@1": acc0, "epsilon": eps0}
    hurt = {"accuracy@1": acc1, "epsilon": eps1}
    signal = acc1 < acc0 and abs(eps1 - eps0) <= 1e-9
    return InjectionReport(spec.kind, spec.magnitude, base, hurt, "accuracy down, epsilon stable", signal)


def _outlier(spec, data, tier_cfg, n_inject: int = 20) -> InjectionReport:
    """Ingest vectors scaled to ``magnitude`` times the median corpus norm."""
    tm = build_tiers(data, tier_cfg)
    rng = np.random.default_rng(spec.seed)
    median = tm.norm_filter.median if tm.norm_filter is not None else 1.0
    next_id = int(data.ids.max()) + 1
    dirs = rng.standard_normal((n_inject, data.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rejected = 0
    for j, v in enumerate(dirs):
        rec = EmbeddingRecord(next_id + j, spec.magnitude * median * v, last_access=float(len(data) + j))
        rejected += not tm.ingest(rec)
    rate = rejected / n_inject
    base = {"quarantine_rate": 0.0, "quarantined": 0.0}
    hurt = {"quarantine_rate": rate, "quarantined": float(rejected)}
    lo, hi = (tm.norm_filter.lo, tm.norm_filter.hi) if tm.norm_filter else (0.0, float("inf"))
    outside = spec.magnitude <= lo or spec.magnitude >= hi
    signal = rate == 1.0 if outside else rate == 0.0
    return InjectionReport(spec.kind, spec.magnitude, base, hurt, "all out-of-range norms quarantined", signal,
                           {"injected": n_inject, "median_norm": median})
