import math

import numpy as np
import pytest

from tierstream.errors import EmptyInputError, EmptyRankingError, InvalidRateError, LengthMismatchError, NegativeDeltaError
from tierstream.telemetry import (
    RefreshRecord,
    TelemetryRecord,
    TelemetrySink,
    energy_per_query,
    latency_percentiles,
    mrr,
    ndcg_at_k,
    read_log,
    read_report,
    recall_at_k,
    safe_at_k_rate,
    write_report,
)


def rec(i, safe1=True, safeK=True, latency=10, k=10, gamma1=0.5):
    return TelemetryRecord(
        query_id=f"q{i}", timestamp=float(i), k=k, top_ids=[1, 2], scores=[0.9, 0.8],
        gamma1=gamma1, delta_k=0.1, epsilon=0.0, zeta=0.01, safe1=safe1, safeK=safeK,
        low_confidence=not safe1, latency_us=latency, tier_mix={"hot": 2},
    )


def test_recall():
    ranking = list(range(10, 30))
    assert recall_at_k([7] + ranking, {7}, 10) == 1.0
    assert recall_at_k(ranking, {7}, 10) == 0.0
    assert recall_at_k([1, 2, 7, 3], {7, 99}, 10) == 0.5
    with pytest.raises(EmptyRankingError):
        recall_at_k([], {1}, 10)


def test_mrr():
    assert mrr([[1, 2], [5, 6]], [{1}, {5}]) == 1.0
    assert mrr([[9, 8, 7, 1]], [{1}]) == 0.25
    assert mrr([[1, 2], [3, 4]], [{1}, {4}]) == 0.75
    with pytest.raises(LengthMismatchError):
        mrr([[1]], [{1}, {2}])


def test_ndcg():
    assert ndcg_at_k([1, 2, 3, 4], {1, 2}, 10) == pytest.approx(1.0)
    assert ndcg_at_k([5, 1, 6], {1}, 10) == pytest.approx(1 / math.log2(3))
    assert 1 / math.log2(3) == pytest.approx(0.6309, abs=1e-4)
    assert ndcg_at_k([5, 6, 7], {1}, 10) == 0.0
    with pytest.raises(EmptyRankingError):
        ndcg_at_k([], {1}, 3)


def test_safe_rate():
    assert safe_at_k_rate([rec(i) for i in range(4)]) == 1.0
    rs = [rec(0), rec(1), rec(2), rec(3, safeK=False)]
    assert safe_at_k_rate(rs) == 0.75
    rs1 = [rec(0, k=1), rec(1, k=1, safe1=False, safeK=True)]
    assert safe_at_k_rate(rs1) == 0.5
    with pytest.raises(EmptyInputError):
        safe_at_k_rate([])


def test_latency_percentiles(rng):
    assert latency_percentiles([rec(0, latency=17)]) == {"p50": 17, "p95": 17}
    rs = [rec(i, latency=i) for i in range(1, 101)]
    assert latency_percentiles(rs) == {"p50": 50, "p95": 95}
    lats = rng.integers(0, 1000, 37).tolist()
    s = sorted(lats)
    got = latency_percentiles([rec(i, latency=v) for i, v in enumerate(lats)])
    assert got == {"p50": s[math.ceil(0.5 * 37) - 1], "p95": s[math.ceil(0.95 * 37) - 1]}
    with pytest.raises(EmptyInputError):
        latency_percentiles([])


def test_energy():
    assert abs(energy_per_query(6.0, 10.8, 200) - 0.024) <= 1e-12
    assert abs(energy_per_query(6.0, 12.4, 50) - 0.128) <= 1e-12
    assert energy_per_query(7.0, 7.0, 3) == 0.0
    with pytest.raises(InvalidRateError):
        energy_per_query(1.0, 2.0, 0)
    with pytest.raises(NegativeDeltaError):
        energy_per_query(2.0, 1.0, 10)


def test_log_roundtrip(tmp_path):
    path = tmp_path / "t.jsonl"
    rs = [rec(i, safe1=i % 2 == 0, latency=i * 3) for i in range(6)]
    rs.append(rec(9, gamma1=math.inf))
    with TelemetrySink(path) as sink:
        for r in rs:
            sink.append(r)
        sink.append(RefreshRecord(1, 1, 0.01, 0.2, 0.9, 0.5, True))
        in_memory = sink.queries()
    back = [r for r in read_log(path) if isinstance(r, TelemetryRecord)]
    assert safe_at_k_rate(back, 1) == safe_at_k_rate(in_memory, 1)
    assert latency_percentiles(back) == latency_percentiles(in_memory)
    assert back[-1].gamma1 == math.inf
    # independent recount straight from the text
    import json

    lines = [json.loads(x) for x in path.read_text().splitlines()]
    flags = [x["safe1"] for x in lines if x["kind"] == "query"]
    assert safe_at_k_rate(back, 1) == sum(flags) / len(flags)


def test_floats_have_six_decimals(tmp_path):
    path = tmp_path / "t.jsonl"
    with TelemetrySink(path) as sink:
        sink.append(rec(0))
    text = path.read_text()
    assert '"gamma1":0.500000' in text and '"scores":[0.900000,0.800000]' in text


def test_report_csv(tmp_path):
    path = tmp_path / "r.csv"
    write_report(path, {"recall@10": 0.5, "zeta": 1 / 3})
    assert path.read_text() == "metric,value\nrecall@10,0.500000\nzeta,0.333333\n"
    assert read_report(path) == {"recall@10": 0.5, "zeta": 0.333333}
