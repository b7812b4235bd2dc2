import numpy as np
import pytest

from tierstream.errors import ConfigError, UnknownInjectionError
from tierstream.harness import synthetic
from tierstream.harness.evaluation import build_tiers, run_bridge_eval, run_eval
from tierstream.harness.export import export_plots
from tierstream.harness.injection import KINDS, InjectionSpec, inject
from tierstream.query_engine import QueryConfig
from tierstream.telemetry import RefreshRecord, read_log
from tierstream.tier_manager import TierConfig
from tierstream.warm_index import WarmConfig

SMALL_WARM = WarmConfig(n_list=16, m=8, n_bits=8, n_probe=4)


@pytest.fixture(scope="module")
def corpus():
    return synthetic.generate(synthetic.SyntheticSpec())


def test_generator_shape(corpus):
    assert len(corpus) == 620
    members = corpus.members()
    assert len(members) == 31 and all(len(m) == 20 for m in members.values())
    assert np.allclose(np.linalg.norm(corpus.vectors, axis=1), 1.0, atol=1e-6)


def test_zero_jitter_members_equal_anchor():
    data = synthetic.generate(synthetic.SyntheticSpec(jitter_sigma=0.0))
    for g, ids in data.members().items():
        rows = data.vectors[sorted(ids)]
        assert np.allclose(rows, data.anchors[g], atol=1e-6)


def test_generator_files_byte_identical(tmp_path):
    pairs = synthetic.PairSpec(n_pairs=256, corrupt_max=0.5, calibration=64, n_probes=16)
    for name in ("a", "b"):
        synthetic.write_dataset(synthetic.SyntheticSpec(), tmp_path / name, pairs)
    for f in (synthetic.EMBEDDINGS, synthetic.ANCHORS, synthetic.GROUPS, synthetic.SPEC, synthetic.PAIRS,
              synthetic.PROBES):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_dataset_round_trip(tmp_path, corpus):
    synthetic.write_dataset(synthetic.SyntheticSpec(), tmp_path)
    back = synthetic.load_dataset(tmp_path)
    assert np.array_equal(back.ids, corpus.ids)
    assert np.array_equal(back.vectors, corpus.vectors)
    assert back.groups == corpus.groups


def test_missing_dataset_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        synthetic.load_dataset(tmp_path)


def test_invalid_spec():
    with pytest.raises(ConfigError):
        synthetic.SyntheticSpec(n_groups=0)
    with pytest.raises(ConfigError):
        synthetic.SyntheticSpec(jitter_sigma=-1)


def test_corruption_schedule():
    spec = synthetic.PairSpec(n_pairs=2048, calibration=1024, corrupt_max=0.8, corrupt_power=3.0)
    assert synthetic.corruption_rate(1023, spec) == 0.0
    rates = [synthetic.corruption_rate(i, spec) for i in range(1024, 2048)]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    assert rates[-1] == pytest.approx(0.8)


def test_hot_only_eval_recall(corpus):
    res = run_eval(corpus, TierConfig(budget_B=620), QueryConfig(k=10, hot_only=True))
    assert res.metrics["recall@10"] >= 0.9
    assert res.metrics["queries"] == 31


def test_eval_with_spill(corpus):
    res = run_eval(corpus, TierConfig(budget_B=500, warm=SMALL_WARM), QueryConfig(k=10))
    assert (res.metrics["hot"], res.metrics["warm"]) == (500, 120)
    assert res.metrics["zeta"] > 0
    assert res.metrics["recall@10"] >= 0.9


def test_item_mode_finds_self(corpus):
    res = run_eval(corpus, TierConfig(budget_B=620), QueryConfig(k=10, hot_only=True), mode="item")
    assert res.metrics["mrr"] >= 0.99


def test_empty_dataset_rejected():
    empty = synthetic.Dataset(np.zeros(0, dtype=np.uint64), np.zeros((0, 8)), [], np.zeros((0, 8)))
    with pytest.raises(ConfigError):
        build_tiers(empty, TierConfig())


def test_unknown_mode(corpus):
    with pytest.raises(ConfigError):
        run_eval(corpus, TierConfig(budget_B=620), QueryConfig(hot_only=True), mode="nope")


def _bridge_rows(corpus, pair_spec, **kw):
    src, tgt, pid, psrc = synthetic.generate_pairs(corpus, pair_spec)
    return run_bridge_eval(corpus, src, tgt, pid, psrc, **kw)


def test_clean_pairs_converge(corpus):
    rows = _bridge_rows(corpus, synthetic.PairSpec(n_pairs=1536, noise=0.0, n_probes=50), cadence=512)
    assert len(rows) == 3
    assert rows[1].epsilon < 1e-6
    assert rows[1].safe1 == 1.0 and rows[1].accuracy == 1.0


def test_corrupted_stream_degrades(corpus):
    spec = synthetic.PairSpec(n_pairs=4096, calibration=1024, corrupt_max=0.9, corrupt_power=3.0, n_probes=100)
    rows = _bridge_rows(corpus, spec, noise_sigma=0.02, cadence=512)
    post = rows[2:]  # after the clean calibration prefix
    assert post[-1].epsilon_p50 > post[0].epsilon_p50
    assert post[-1].safe1 < post[0].safe1


def test_finer_cadence_logs_more_rows(corpus):
    spec = synthetic.PairSpec(n_pairs=2048, n_probes=20)
    coarse = _bridge_rows(corpus, spec, cadence=512)
    fine = _bridge_rows(corpus, spec, cadence=256)
    assert len(fine) >= len(coarse)


def test_bridge_eval_rejects_mismatched_pairs(corpus):
    with pytest.raises(ConfigError):
        run_bridge_eval(corpus, np.zeros((4, 3)), np.zeros((4, 3)), np.zeros(0), np.zeros((0, 3)))


@pytest.fixture(scope="module")
def hard_corpus():
    return synthetic.generate(synthetic.SyntheticSpec(jitter_sigma=0.2))


HARD_TIERS = TierConfig(budget_B=100, warm=SMALL_WARM)
HARD_QUERY = QueryConfig(k=10, K_h=10, K_w=10, n_probe=4)


@pytest.mark.parametrize("kind", KINDS)
def test_injection_signal(kind, corpus, hard_corpus):
    data = hard_corpus if kind == "over_compress" else corpus
    tiers = HARD_TIERS if kind == "over_compress" else TierConfig(budget_B=500, warm=SMALL_WARM)
    query = HARD_QUERY if kind == "over_compress" else QueryConfig(k=10)
    magnitude = 4.0 if kind == "over_compress" else None
    report = inject(InjectionSpec(kind, magnitude), data, tiers, query)
    assert report.signal, report.to_dict()


def test_zero_pair_swap_matches_baseline(corpus):
    report = inject(InjectionSpec("pair_swap", 0.0), corpus)
    assert report.injected == report.baseline
    assert not report.signal


def test_in_range_outlier_not_quarantined(corpus):
    report = inject(InjectionSpec("outlier", 1.0), corpus, TierConfig(budget_B=620))
    assert report.injected["quarantine_rate"] == 0.0


def test_unknown_injection():
    with pytest.raises(UnknownInjectionError):
        InjectionSpec("meteor")


def test_export_empty_log(tmp_path):
    log = tmp_path / "t.jsonl"
    log.write_text("")
    paths = export_plots(log, tmp_path / "out")
    for p in paths.values():
        assert len(p.read_text().splitlines()) == 1


def test_export_deterministic_and_step_rows(tmp_path, corpus):
    spec = synthetic.PairSpec(n_pairs=1024, n_probes=10)
    rows = _bridge_rows(corpus, spec, telemetry=tmp_path / "b.jsonl")
    run_eval(corpus, TierConfig(budget_B=620), QueryConfig(hot_only=True), telemetry=tmp_path / "e.jsonl",
             record_latency=False)
    merged = tmp_path / "all.jsonl"
    merged.write_bytes((tmp_path / "e.jsonl").read_bytes() + (tmp_path / "b.jsonl").read_bytes())
    a = export_plots(merged, tmp_path / "a")
    b = export_plots(merged, tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()
    refreshes = [r for r in read_log(merged) if isinstance(r, RefreshRecord)]
    assert len(refreshes) == len(rows)
    assert len(a["telemetry_vs_step.csv"].read_text().splitlines()) == len(rows) + 1
    assert len(a["metric_vs_k.csv"].read_text().splitlines()) == 11
