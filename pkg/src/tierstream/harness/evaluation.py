"""Experiment drivers: corpus evaluation and streaming-bridge telemetry."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bridge import Bridge
from ..errors import ConfigError
from ..query_engine import QueryConfig, QueryEngine, QueryOutcome
from ..telemetry import (
    RefreshRecord,
    TelemetryRecord,
    TelemetrySink,
    latency_percentiles,
    mrr,
    ndcg_at_k,
    recall_at_k,
    safe_at_k_rate,
    write_report,
)
from ..tier_manager import EmbeddingRecord, NormFilter, TierConfig, TierManager
from .synthetic import Dataset


def build_tiers(data: Dataset, cfg: TierConfig, spill_every: int = 128, norm_clip: bool = True) -> TierManager:
    """Ingest the corpus in file order; item ``i`` arrives at time ``i`` seconds.

    With ``norm_clip`` the tier manager quarantines records whose raw norm
    is far from the running median.
    """
    if len(data) == 0:
        raise ConfigError("dataset is empty")
    tm = TierManager(data.d, cfg)
    if norm_clip:
        tm.norm_filter = NormFilter()
    recs = (
        EmbeddingRecord(int(i), v, group=str(g), last_access=float(n))
        for n, (i, v, g) in enumerate(zip(data.ids.tolist(), data.vectors, data.groups))
    )
    tm.ingest_many(recs, spill_every=max(1, spill_every))
    return tm


@dataclass
class QueryResult:
    query_id: str
    outcome: QueryOutcome
    relevant: set[int]
    recall: float
    reciprocal_rank: float
    ndcg: float


@dataclass
class EvalResult:
    metrics: dict[str, float]
    results: list[QueryResult] = field(default_factory=list)
    records: list[TelemetryRecord] = field(default_factory=list)


def eval_queries(data: Dataset, mode: str) -> list[tuple[str, np.ndarray, set[int]]]:
    """``(query_id, vector, relevant_ids)`` per query.

    ``group`` mode issues one query per group anchor with the whole group
    relevant; ``item`` mode queries every item for itself.
    """
    if mode == "group":
        members = data.members()
        return [(f"g{g}", data.anchors[g], members[g]) for g in sorted(members)]
    if mode == "item":
        return [(f"i{int(i)}", v, {int(i)}) for i, v in zip(data.ids.tolist(), data.vectors)]
    raise ConfigError(f"unknown evaluation mode {mode!r}")


def run_eval(
    data: Dataset,
    tier_cfg: TierConfig,
    query_cfg: QueryConfig,
    epsilon: float = 0.0,
    zeta: float | None = None,
    mode: str = "group",
    spill_every: int = 128,
    telemetry: str | Path | None = None,
    report: str | Path | None = None,
    record_latency: bool = True,
    tiers: TierManager | None = None,
) -> EvalResult:
    """Ingest ``data``, run the query set and aggregate metrics.

    ``zeta=None`` uses the warm tier's measured distortion (0 while untrained).
    """
    tm = tiers if tiers is not None else build_tiers(data, tier_cfg, spill_every)
    engine = QueryEngine(tm, query_cfg)
    k = query_cfg.k
    out = EvalResult({})
    sink = TelemetrySink(telemetry)
    try:
        for n, (qid, q, rel) in enumerate(eval_queries(data, mode)):
            o = engine.query(q, epsilon=epsilon, zeta=zeta)
            ids = o.ids
            res = QueryResult(qid, o, rel, recall_at_k(ids, rel, k), _rr(ids, rel), ndcg_at_k(ids, rel, k))
            out.results.append(res)
            rec = TelemetryRecord.from_outcome(qid, o, timestamp=float(n), relevant_ids=rel,
                                               record_latency=record_latency)
            sink.append(rec)
            out.records.append(rec)
    finally:
        sink.close()

    counts = tm.counts()
    gammas = [r.outcome.gamma1 for r in out.results]
    zeta_used = out.results[0].outcome.zeta_used
    med_gamma = statistics.median(gammas)
    lat = latency_percentiles(out.records)
    out.metrics = {
        f"recall@{k}": float(np.mean([r.recall for r in out.results])),
        "mrr": mrr([r.outcome.ids for r in out.results], [r.relevant for r in out.results]),
        f"ndcg@{k}": float(np.mean([r.ndcg for r in out.results])),
        "safe@1": safe_at_k_rate(out.records, 1),
        f"safe@{k}": safe_at_k_rate(out.records, k),
        "low_confidence_rate": float(np.mean([r.low_confidence for r in out.records])),
        "median_gamma1": med_gamma,
        # alert when the typical margin is no longer clear of the budget
        "margin_alert": float(med_gamma <= 2 * (epsilon + zeta_used)),
        "epsilon": epsilon,
        "zeta": zeta_used,
        "hot": counts["hot"],
        "warm": counts["warm"],
        "staged": counts["staged"],
        "queries": len(out.results),
        "latency_p50_us": lat["p50"],
        "latency_p95_us": lat["p95"],
    }
    if report is not None:
        write_report(report, out.metrics)
    return out


def _rr(ids, rel) -> float:
    for i, x in enumerate(ids, 1):
        if x in rel:
            return 1.0 / i
    return 0.0


# -- bridge telemetry --------------------------------------------------------


@dataclass(frozen=True)
class BridgeRow:
    step: int
    refresh: int
    epsilon: float
    epsilon_p50: float
    zeta: float
    safe1: float
    accuracy: float
    sigma_min: float
    bound_ok: bool | None


BRIDGE_COLUMNS = ("step", "refresh", "epsilon", "epsilon_p50", "zeta", "safe1", "accuracy")


def run_bridge_eval(
    data: Dataset,
    src: np.ndarray,
    tgt: np.ndarray,
    probe_ids: np.ndarray,
    probe_src: np.ndarray,
    noise_sigma: float = 0.0,
    cadence: int = 512,
    zeta: float = 0.0,
    seed: int = 0,
    query_cfg: QueryConfig | None = None,
    telemetry: str | Path | None = None,
    csv_path: str | Path | None = None,
) -> list[BridgeRow]:
    """Stream pairs through a fresh bridge and probe it at every refresh.

    Probes are source-space vectors with a true corpus id. Each gets
    Gaussian noise of scale ``noise_sigma`` once (the query-side domain
    gap), is mapped through the bridge and searched against a hot-only
    index of the corpus. Per refresh the row records the spectral drift,
    the median per-probe displacement ``||q T_new - q T_prev||``, the
    Safe@1 rate of the probes at the current drift and the fraction whose
    top hit lies in the probe's group.
    """
    if src.shape != tgt.shape or src.shape[1] != data.d:
        raise ConfigError(f"pairs of shape {src.shape}/{tgt.shape} do not match corpus dimension {data.d}")
    cfg = query_cfg or QueryConfig(k=10, hot_only=True)
    tm = build_tiers(data, TierConfig(budget_B=max(len(data), 1)))
    engine = QueryEngine(tm, cfg)
    rng = np.random.default_rng(seed)
    noisy = probe_src + noise_sigma * rng.standard_normal(probe_src.shape)
    noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
    group_of = dict(zip(data.ids.tolist(), data.groups))
    want = [group_of[int(i)] for i in probe_ids.tolist()]

    bridge = Bridge(data.d, cadence)
    rows: list[BridgeRow] = []
    sink = TelemetrySink(telemetry)
    try:
        prev_T = bridge.T
        for n, (s, t) in enumerate(zip(src, tgt), 1):
            rep = bridge.add_pair(s, t)
            if rep is None:
                continue
            shift = np.linalg.norm(noisy @ bridge.T - noisy @ prev_T, axis=1)
            prev_T = bridge.T
            safe = acc = 0
            for q, g in zip(noisy, want):
                o = engine.query(bridge.apply(q), epsilon=bridge.epsilon, zeta=zeta)
                safe += o.safe1
                acc += group_of[o.ids[0]] == g
            row = BridgeRow(n, rep.refresh_count, rep.epsilon, float(np.median(shift)), zeta,
                            safe / len(want), acc / len(want), rep.sigma_min, rep.bound_ok)
            rows.append(row)
            sink.append(RefreshRecord(n, rep.refresh_count, rep.epsilon, zeta, row.safe1,
                                      rep.sigma_min, rep.bound_ok))
    finally:
        sink.close()
    if csv_path is not None:
        write_bridge_csv(csv_path, rows)
    return rows


def write_bridge_csv(path: str | Path, rows: list[BridgeRow]) -> None:
    lines = [",".join(BRIDGE_COLUMNS)]
    for r in rows:
        lines.append(f"{r.step},{r.refresh},{r.epsilon:.6f},{r.epsilon_p50:.6f},{r.zeta:.6f},"
                     f"{r.safe1:.6f},{r.accuracy:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
