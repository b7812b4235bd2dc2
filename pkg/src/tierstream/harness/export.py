"""CSV bundles behind the retrieval, drift and latency figures.

``metric_vs_k.csv``       k, recall, ndcg, safe_rate
``telemetry_vs_step.csv`` step, refresh, epsilon, zeta, safe1
``latency_histogram.csv`` bin_lo_us, bin_hi_us, count (power-of-two bins)

``safe_rate`` at ``k`` is recomputed from the logged scores: the gap
between positions ``k`` and ``k+1`` must exceed ``2 (epsilon + zeta)``.
Rows for a ``k`` are only emitted where every contributing record has
enough logged hits.
"""

from __future__ import annotations

from pathlib import Path

from ..telemetry import RefreshRecord, TelemetryRecord, ndcg_at_k, read_log, recall_at_k

METRIC_VS_K = "metric_vs_k.csv"
TELEMETRY_VS_STEP = "telemetry_vs_step.csv"
LATENCY_HISTOGRAM = "latency_histogram.csv"


def _write(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")


def metric_rows(records: list[TelemetryRecord]) -> list[str]:
    judged = [r for r in records if r.relevant_ids]
    if not judged:
        return []
    depth = min(len(r.top_ids) for r in judged)
    rows = []
    for k in range(1, depth + 1):
        recall = sum(recall_at_k(r.top_ids, r.relevant_ids, k) for r in judged) / len(judged)
        ndcg = sum(ndcg_at_k(r.top_ids, r.relevant_ids, k) for r in judged) / len(judged)
        if k < depth:
            safe = sum(r.scores[k - 1] - r.scores[k] > 2 * (r.epsilon + r.zeta) for r in judged) / len(judged)
        else:
            safe = sum(r.safeK if r.k == k else False for r in judged) / len(judged)
        rows.append(f"{k},{recall:.6f},{ndcg:.6f},{safe:.6f}")
    return rows


def step_rows(records: list[RefreshRecord]) -> list[str]:
    return [f"{r.step},{r.refresh},{r.epsilon:.6f},{r.zeta:.6f},{r.safe1_rate:.6f}" for r in records]


def latency_rows(records: list[TelemetryRecord]) -> list[str]:
    if not records:
        return []
    counts: dict[int, int] = {}
    for r in records:
        b = max(0, int(r.latency_us)).bit_length()  # bin b holds [2^(b-1), 2^b)
        counts[b] = counts.get(b, 0) + 1
    rows = []
    for b in range(0, max(counts) + 1):
        lo = 0 if b == 0 else 1 << (b - 1)
        hi = 1 if b == 0 else 1 << b
        rows.append(f"{lo},{hi},{counts.get(b, 0)}")
    return rows


def export_plots(telemetry: str | Path, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = read_log(telemetry)
    queries = [r for r in log if isinstance(r, TelemetryRecord)]
    refreshes = [r for r in log if isinstance(r, RefreshRecord)]
    paths = {name: out / name for name in (METRIC_VS_K, TELEMETRY_VS_STEP, LATENCY_HISTOGRAM)}
    _write(paths[METRIC_VS_K], "k,recall,ndcg,safe_rate", metric_rows(queries))
    _write(paths[TELEMETRY_VS_STEP], "step,refresh,epsilon,zeta,safe1", step_rows(refreshes))
    _write(paths[LATENCY_HISTOGRAM], "bin_lo_us,bin_hi_us,count", latency_rows(queries))
    return paths
