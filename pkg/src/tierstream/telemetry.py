"""Per-query telemetry, retrieval metrics and the energy-per-query estimate."""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

from .errors import (
    EmptyInputError,
    EmptyRankingError,
    InvalidRateError,
    LengthMismatchError,
    NegativeDeltaError,
)


@dataclass(frozen=True)
class TelemetryRecord:
    query_id: str
    timestamp: float
    k: int
    top_ids: list[int]
    scores: list[float]
    gamma1: float
    delta_k: float
    epsilon: float
    zeta: float
    safe1: bool
    safeK: bool
    low_confidence: bool
    latency_us: int
    tier_mix: dict[str, int] = field(default_factory=dict)
    relevant_ids: list[int] | None = None
    kind: str = "query"

    @classmethod
    def from_outcome(cls, query_id: str, outcome, timestamp: float = 0.0,
                     relevant_ids: Iterable[int] | None = None, record_latency: bool = True
                     ) -> "TelemetryRecord":
        return cls(
            query_id=query_id,
            timestamp=timestamp,
            k=outcome.k,
            top_ids=[int(h.id) for h in outcome.hits],
            scores=[h.score for h in outcome.hits],
            gamma1=outcome.gamma1,
            delta_k=outcome.delta_k,
            epsilon=outcome.epsilon_used,
            zeta=outcome.zeta_used,
            safe1=outcome.safe1,
            safeK=outcome.safeK,
            low_confidence=outcome.low_confidence,
            latency_us=outcome.latency_us if record_latency else 0,
            tier_mix=dict(outcome.tier_mix),
            relevant_ids=sorted(int(i) for i in relevant_ids) if relevant_ids is not None else None,
        )


@dataclass(frozen=True)
class RefreshRecord:
    """One bridge refresh as seen by the telemetry stream."""

    step: int
    refresh: int
    epsilon: float
    zeta: float
    safe1_rate: float
    sigma_min: float
    bound_ok: bool | None
    kind: str = "refresh"


_FLOAT_TOKEN = re.compile(r'"@f(-?[0-9.]+|inf)@"')


def _fixed(obj: Any) -> Any:
    # floats become placeholder strings so they can be emitted with 6 decimals
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        if obj == math.inf:
            return "inf"  # JSON has no infinity; single-candidate margins are +inf
        return f"@f{obj:.6f}@"
    if isinstance(obj, dict):
        return {k: _fixed(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_fixed(v) for v in obj]
    return obj


def _dump(rec: Any) -> str:
    text = json.dumps(_fixed(asdict(rec)), sort_keys=True, separators=(",", ":"))
    return _FLOAT_TOKEN.sub(r"\1", text)


def _load(line: str) -> TelemetryRecord | RefreshRecord:
    d = json.loads(line)
    for key in ("gamma1", "delta_k"):
        if d.get(key) == "inf":
            d[key] = math.inf
    if d.get("kind") == "refresh":
        return RefreshRecord(**d)
    return TelemetryRecord(**d)


class TelemetrySink:
    """Append-only JSON-lines log, flushed after every record."""

    def __init__(self, path: str | Path | None = None, append: bool = False) -> None:
        self.path = Path(path) if path is not None else None
        self.records: list[TelemetryRecord | RefreshRecord] = []
        self._lock = threading.Lock()
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8") if self.path else None

    def append(self, rec: TelemetryRecord | RefreshRecord) -> None:
        with self._lock:
            self.records.append(rec)
            if self._fh is not None:
                self._fh.write(_dump(rec) + "\n")
                self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TelemetrySink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def queries(self) -> list[TelemetryRecord]:
        return [r for r in self.records if isinstance(r, TelemetryRecord)]


def read_log(path: str | Path) -> list[TelemetryRecord | RefreshRecord]:
    with open(path, encoding="utf-8") as fh:
        return [_load(line) for line in fh if line.strip()]


# -- retrieval metrics ------------------------------------------------------


def _check_ranking(ranking: Sequence[Hashable], k: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranking) == 0:
        raise EmptyRankingError("ranking is empty")


def recall_at_k(ranking: Sequence[Hashable], relevant: Iterable[Hashable], k: int) -> float:
    """``|relevant & top-k| / min(k, |relevant|)``."""
    _check_ranking(ranking, k)
    rel = set(relevant)
    if not rel:
        raise ValueError("relevance set is empty")
    hits = len(rel.intersection(ranking[:k]))
    return hits / min(k, len(rel))


def reciprocal_rank(ranking: Sequence[Hashable], relevant: Iterable[Hashable]) -> float:
    rel = set(relevant)
    for i, item in enumerate(ranking, 1):
        if item in rel:
            return 1.0 / i
    return 0.0


def mrr(rankings: Sequence[Sequence[Hashable]], judgments: Sequence[Iterable[Hashable]]) -> float:
    if len(rankings) != len(judgments):
        raise LengthMismatchError(f"{len(rankings)} rankings vs {len(judgments)} judgments")
    if not rankings:
        raise EmptyInputError("no rankings")
    return sum(reciprocal_rank(r, j) for r, j in zip(rankings, judgments)) / len(rankings)


def ndcg_at_k(ranking: Sequence[Hashable], relevant: Iterable[Hashable], k: int) -> float:
    """Binary-gain nDCG with ``1/log2(rank+1)`` discounts."""
    _check_ranking(ranking, k)
    rel = set(relevant)
    if not rel:
        raise ValueError("relevance set is empty")
    dcg = sum(1.0 / math.log2(i + 1) for i, item in enumerate(ranking[:k], 1) if item in rel)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(rel)) + 1))
    return dcg / ideal


def safe_at_k_rate(records: Sequence[TelemetryRecord], k: int | None = None) -> float:
    """Fraction of records with ``safeK`` (``safe1`` when ``k == 1``)."""
    if not records:
        raise EmptyInputError("no telemetry records")
    flags = [(r.safe1 if (k or r.k) == 1 else r.safeK) for r in records]
    return sum(flags) / len(flags)


def nearest_rank(values: Sequence[float], q: float) -> float:
    if not values:
        raise EmptyInputError("no values")
    ordered = sorted(values)
    # guard against q*n landing a hair above an integer
    rank = max(1, math.ceil(q * len(ordered) - 1e-9))
    return ordered[rank - 1]


def latency_percentiles(records: Sequence[TelemetryRecord]) -> dict[str, float]:
    lat = [r.latency_us for r in records]
    if not lat:
        raise EmptyInputError("no telemetry records")
    return {"p50": nearest_rank(lat, 0.50), "p95": nearest_rank(lat, 0.95)}


def energy_per_query(p_idle: float, p_active: float, qps: float) -> float:
    """Incremental joules per query, ``(P_active - P_idle) / qps``."""
    if qps <= 0:
        raise InvalidRateError(f"query rate must be positive, got {qps}")
    if p_active < p_idle:
        raise NegativeDeltaError(f"active power {p_active} W below idle {p_idle} W")
    return (p_active - p_idle) / qps


def write_report(path: str | Path, metrics: dict[str, float]) -> None:
    """``metric,value`` CSV with six decimal places."""
    lines = ["metric,value"] + [f"{name},{float(val):.6f}" for name, val in metrics.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> dict[str, float]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    return {name: float(val) for name, val in (r.split(",") for r in rows if r)}
