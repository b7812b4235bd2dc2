import math

import numpy as np
import pytest

from helpers import unit_rows
from tierstream.errors import DuplicateIdError, UnknownIdError, ZeroNormError
from tierstream.hot_index import HotConfig
from tierstream.tier_manager import (
    EmbeddingRecord,
    NormFilter,
    PolicyWeights,
    Tier,
    TierConfig,
    TierManager,
)
from tierstream.warm_index import WarmConfig

SMALL_WARM = WarmConfig(n_list=16, m=8, n_bits=8, n_probe=4)


def config(budget=500, weights=PolicyWeights(), **kw):
    return TierConfig(budget_B=budget, hot=HotConfig(M=16, ef_construction=64), warm=SMALL_WARM,
                      weights=weights, **kw)


def records(rng, n, d, times=None, groups=None):
    vecs = unit_rows(rng, n, d)
    out = []
    for i in range(n):
        out.append(EmbeddingRecord(
            id=i, vector=vecs[i],
            last_access=float(times[i]) if times is not None else float(i),
            group=groups[i] if groups is not None else None,
        ))
    return out


def test_score_examples():
    tm = TierManager(8, config(weights=PolicyWeights(1, 0, 0)))
    rec = EmbeddingRecord(0, np.eye(8)[0], last_access=50.0)
    assert tm.score(rec, now=50.0) == 1.0
    tm = TierManager(8, config(weights=PolicyWeights(0, 0, 1)))
    assert tm.score(EmbeddingRecord(0, np.eye(8)[0], novelty=0.25), now=0.0) == 0.25


def test_older_scores_lower():
    tm = TierManager(8, config(weights=PolicyWeights(1, 1, 1)))
    old = EmbeddingRecord(0, np.eye(8)[0], last_access=10.0, novelty=0.5)
    new = EmbeddingRecord(1, np.eye(8)[0], last_access=900.0, novelty=0.5)
    assert tm.score(old, 1000.0) < tm.score(new, 1000.0)
    w = tm.config.weights
    assert tm.score(old, 1000.0) == pytest.approx(math.exp(-990 / w.tau) + 0.5, abs=1e-15)


def test_weights_validation():
    with pytest.raises(ValueError):
        PolicyWeights(0, 0, 0, 0)
    with pytest.raises(ValueError):
        PolicyWeights(tau=0)
    with pytest.raises(ValueError):
        TierConfig(warm=SMALL_WARM, min_train=100)


def test_ingest_basics(rng):
    tm = TierManager(8, config())
    recs = records(rng, 3, 8)
    tm.ingest(recs[0])
    assert tm.records[0].novelty == 1.0
    assert abs(np.linalg.norm(tm.vector(0)) - 1.0) <= 1e-6
    assert tm.membership(0) is Tier.HOT
    assert tm.membership(42) is Tier.ABSENT
    with pytest.raises(DuplicateIdError):
        tm.ingest(recs[0])
    with pytest.raises(ZeroNormError):
        tm.ingest(EmbeddingRecord(7, np.zeros(8)))


def test_novelty_of_duplicate_is_zero(rng):
    tm = TierManager(8, config())
    v = unit_rows(rng, 1, 8)[0]
    tm.ingest(EmbeddingRecord(0, v))
    tm.ingest(EmbeddingRecord(1, 5.0 * v))
    assert tm.records[1].novelty == pytest.approx(0.0, abs=1e-6)


def test_spill_620_to_500(rng):
    tm = TierManager(32, config())
    tm.ingest_many(records(rng, 620, 32), spill_every=620)
    assert tm.counts()["hot"] == 500 and tm.counts()["warm"] == 120
    assert tm.zeta > 0
    assert set(tm.hot.ids()).isdisjoint(tm.warm.ids())


def test_spill_picks_lowest_scores(rng):
    tm = TierManager(32, config())
    times = rng.uniform(0, 7200, 620)
    for rec in records(rng, 620, 32, times=times):
        tm.ingest(rec, spill=False)
    for i in rng.choice(620, 80, replace=False):
        for _ in range(int(rng.integers(1, 6))):
            tm.touch(int(i), float(times[i]))
    snapshot = tm.score_snapshot()
    oracle = sorted(snapshot.items(), key=lambda kv: (kv[1], kv[0]))
    expected = {i for i, _ in oracle[:120]}
    assert tm.spill() == 120
    assert set(tm.warm.ids()) == expected
    worst_kept = min(snapshot[i] for i in tm.hot.ids())
    assert all(snapshot[i] <= worst_kept for i in expected)


def test_spill_at_budget_moves_nothing(rng):
    tm = TierManager(8, config(budget=20))
    for rec in records(rng, 20, 8):
        tm.ingest(rec)
    assert tm.spill() == 0


def test_tie_spills_lower_id():
    cfg = TierConfig(budget_B=2, hot=HotConfig(M=4, ef_construction=8),
                     warm=WarmConfig(n_list=1, m=1, n_bits=2, n_probe=1),
                     weights=PolicyWeights(1, 0, 0))
    tm = TierManager(4, cfg)
    basis = np.eye(4)
    for i, t in [(5, 1.0), (3, 1.0), (9, 2.0)]:
        tm.ingest(EmbeddingRecord(i, basis[i % 4], last_access=t), spill=False)
    # 3 < 10 * n_list, so the floor holds everything hot
    assert tm.spill() == 0 and len(tm.hot) == 3
    for i in range(10, 17):
        tm.ingest(EmbeddingRecord(i, basis[i % 4], last_access=3.0), spill=False)
    moved = tm.spill()
    assert moved == 8
    assert tm.membership(3) is Tier.WARM and tm.membership(5) is Tier.WARM
    assert tm.membership(9) is Tier.WARM and set(tm.hot.ids()) == {15, 16}


def test_cold_start_keeps_items_hot(rng):
    tm = TierManager(8, config(budget=50))
    for rec in records(rng, 120, 8):
        tm.ingest(rec)
    # 120 < 160 = 10 * n_list
    assert len(tm.hot) == 120 and len(tm.warm) == 0 and not tm.warm.trained
    for rec in records(rng, 60, 8):
        tm.ingest(EmbeddingRecord(rec.id + 1000, rec.vector, last_access=rec.last_access))
    assert tm.warm.trained and len(tm.hot) == 50 and len(tm.warm) == 130


def test_touch(rng):
    tm = TierManager(32, config())
    tm.ingest_many(records(rng, 620, 32), spill_every=620)
    hot_id = tm.hot.ids()[0]
    other = tm.hot.ids()[1]
    before = tm.score_snapshot()
    tm.touch(hot_id, tm.now)
    after = tm.score_snapshot()
    assert after[hot_id] > before[hot_id]
    warm_id = tm.warm.ids()[0]
    snap = tm.records[warm_id].policy_dict()
    tm.touch(warm_id, 10_000.0)
    assert tm.records[warm_id].policy_dict() == snap
    with pytest.raises(UnknownIdError):
        tm.touch(123_456, 0.0)
    assert other in after


def test_conservation_and_exclusivity(rng):
    tm = TierManager(16, config(budget=100))
    total = 0
    for batch in range(6):
        recs = records(rng, 70, 16)
        tm.ingest_many([EmbeddingRecord(r.id + 1000 * batch, r.vector, last_access=float(batch))
                        for r in recs], spill_every=35)
        total += 70
        c = tm.counts()
        assert c["hot"] + c["warm"] + c["staged"] == total
        assert set(tm.hot.ids()).isdisjoint(tm.warm.ids())
        if tm.warm.trained:
            assert c["hot"] <= 100


def test_coverage_term():
    cfg = config(weights=PolicyWeights(0, 0, 0, w_cov=1.0))
    tm = TierManager(8, cfg)
    basis = np.eye(8)
    for i, g in enumerate(["a", "a", "a", "b"]):
        tm.ingest(EmbeddingRecord(i, basis[i], group=g))
    snap = tm.score_snapshot()
    assert snap[0] == pytest.approx(1 / 3) and snap[3] == 1.0


def test_norm_filter():
    f = NormFilter()
    assert f.median is None and f.admit(1.0) and f.admit(1.2)
    assert not f.admit(110.0)
    assert not f.admit(1.1 * 100)  # boundary case rejected
    assert not f.admit(1.1 * 0.01)
    assert f.admit(50.0)


def test_quarantine(rng):
    tm = TierManager(8, config())
    tm.norm_filter = NormFilter()
    recs = records(rng, 10, 8)
    for r in recs:
        tm.ingest(r)
    assert not tm.ingest(EmbeddingRecord(99, 100.0 * recs[0].vector))
    assert tm.quarantine == [99] and tm.membership(99) is Tier.ABSENT


def test_retrain_warm_with_coarser_codec(rng):
    tm = TierManager(32, config())
    tm.ingest_many(records(rng, 620, 32), spill_every=620)
    before = tm.zeta
    assert tm.warm_distortion() == pytest.approx(before)
    tm.retrain_warm(WarmConfig(n_list=16, m=2, n_bits=4, n_probe=4))
    assert tm.warm.codec.m == 2
    assert tm.zeta > before
    assert len(tm.warm) == 120
