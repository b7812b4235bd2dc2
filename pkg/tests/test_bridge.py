import numpy as np
import pytest

from helpers import random_rotation, unit_rows
from tierstream import atomic
from tierstream.bridge import Bridge
from tierstream.errors import ChecksumMismatchError, DimensionMismatchError, InvalidDimensionError, PartialWriteError


def feed(bridge, src, tgt):
    reports = []
    for s, t in zip(src, tgt):
        r = bridge.add_pair(s, t)
        if r is not None:
            reports.append(r)
    return reports


def test_init(rng):
    b = Bridge(4, cadence=64)
    v = unit_rows(rng, 1, 4)[0]
    np.testing.assert_allclose(b.apply(v), v, atol=1e-12)
    assert b.epsilon == 0.0
    with pytest.raises(InvalidDimensionError):
        Bridge(0)
    with pytest.raises(ValueError):
        Bridge(4, cadence=32)


def test_dimension_check(rng):
    b = Bridge(4, cadence=64)
    with pytest.raises(DimensionMismatchError):
        b.add_pair(np.ones(3), np.ones(4))
    with pytest.raises(DimensionMismatchError):
        b.apply(np.ones(5))


def test_cadence(rng):
    b = Bridge(8, cadence=64)
    x = unit_rows(rng, 64, 8)
    assert feed(b, x[:63], x[:63]) == []
    assert b.buffered == 63
    assert b.add_pair(x[63], x[63]) is not None
    assert b.refresh_count == 1 and b.buffered == 0


def test_identity_pairs(rng):
    b = Bridge(8, cadence=64)
    x = unit_rows(rng, 128, 8)
    reports = feed(b, x, x)
    np.testing.assert_allclose(b.T, np.eye(8), atol=1e-9)
    assert all(r.epsilon <= 1e-9 for r in reports)


def test_rotation_recovery(rng):
    d, n = 16, 64
    R = random_rotation(rng, d)
    x = unit_rows(rng, 2 * n, d)
    b = Bridge(d, cadence=n)
    feed(b, x, x @ R)
    assert np.linalg.norm(b.T - R) <= 1e-6
    for v in unit_rows(rng, 20, d):
        np.testing.assert_allclose(b.apply(v), v @ R, atol=1e-6)


def test_norm_preservation(rng):
    d = 16
    b = Bridge(d, cadence=64)
    x = unit_rows(rng, 64, d)
    feed(b, x, x @ random_rotation(rng, d))
    for v in unit_rows(rng, 1000, d):
        assert abs(np.linalg.norm(b.apply(v)) - 1.0) <= 1e-6


def test_repeated_buffer_has_zero_drift(rng):
    d, n = 12, 64
    src = unit_rows(rng, n, d)
    tgt = unit_rows(rng, n, d)
    b = Bridge(d, cadence=n)
    feed(b, src, tgt)
    second = feed(b, src, tgt)[0]
    assert second.epsilon <= 1e-9
    # oracle: Procrustes of the doubled sum from scratch
    u, _, vt = np.linalg.svd(2 * src.T @ tgt)
    assert np.linalg.norm(b.T - u @ vt) <= 1e-9


def test_swapped_targets_raise_drift(rng):
    d, n = 16, 64
    R = random_rotation(rng, d)
    x = unit_rows(rng, 2 * n, d)
    tgt = x @ R
    b = Bridge(d, cadence=n)
    feed(b, x[:n], tgt[:n])
    swapped = tgt[n:][rng.permutation(n)]
    assert feed(b, x[n:], swapped)[0].epsilon > 0


def test_orthogonal_after_every_refresh(rng):
    d = 10
    b = Bridge(d, cadence=64)
    for _ in range(5):
        feed(b, unit_rows(rng, 64, d), unit_rows(rng, 64, d))
        assert np.linalg.norm(b.T.T @ b.T - np.eye(d)) <= 1e-6


def test_procrustes_optimality(rng):
    d, n = 8, 64
    src = unit_rows(rng, n, d)
    tgt = unit_rows(rng, n, d) + 0.5 * src
    b = Bridge(d, cadence=n)
    feed(b, src, tgt)
    best = np.linalg.norm(src @ b.T - tgt)
    for _ in range(100):
        assert best <= np.linalg.norm(src @ random_rotation(rng, d) - tgt) + 1e-6


def test_scale_invariance(rng):
    d, n = 8, 64
    src, tgt = unit_rows(rng, n, d), unit_rows(rng, n, d)
    a, b = Bridge(d, cadence=n), Bridge(d, cadence=n)
    feed(a, src, tgt)
    feed(b, 3.0 * src, tgt)
    np.testing.assert_allclose(a.T, b.T, atol=1e-12)


def test_drift_bound_on_well_conditioned_stream(rng):
    d, n = 8, 64
    R = random_rotation(rng, d)
    b = Bridge(d, cadence=n)
    for _ in range(6):
        x = unit_rows(rng, n, d)
        (r,) = feed(b, x, x @ R + 0.2 * rng.standard_normal((n, d)))
        if r.bound is not None:
            assert r.bound_ok
    assert b.sigma_min_prev > 0.1


def test_bound_not_applicable_on_first_refresh(rng):
    b = Bridge(4, cadence=64)
    x = unit_rows(rng, 64, 4)
    (r,) = feed(b, x, x)
    assert r.bound is None and r.bound_ok is None


def test_svd_failure_keeps_state(rng, monkeypatch):
    from tierstream import bridge as bridge_mod
    from tierstream.errors import NoConvergenceError

    b = Bridge(4, cadence=64)
    x = unit_rows(rng, 64, 4)
    feed(b, x, x)
    before = b.T.copy()

    def broken(_):
        raise NoConvergenceError("forced")

    monkeypatch.setattr(bridge_mod, "svd", broken)
    r = b.refresh()
    assert not r.ok and r.error
    np.testing.assert_array_equal(b.T, before)


def test_save_load_roundtrip(tmp_path, rng):
    d = 8
    b = Bridge(d, cadence=64)
    x = unit_rows(rng, 100, d)
    feed(b, x, x @ random_rotation(rng, d))
    path = tmp_path / "bridge.txt"
    b.save(path)
    text = path.read_text()
    assert text.startswith(f"LUMABRIDGE1 d={d} refresh_count=1")
    assert text.splitlines()[-1].startswith("CRC32=")
    c = Bridge.load(path)
    assert c.state_equals(b) and c.buffered == b.buffered
    for v in unit_rows(rng, 100, d):
        assert c.apply(v).tobytes() == b.apply(v).tobytes()


def test_truncated_file(tmp_path, rng):
    b = Bridge(4, cadence=64)
    path = tmp_path / "b.txt"
    b.save(path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ChecksumMismatchError):
        Bridge.load(path)


def test_flipped_byte(tmp_path):
    path = tmp_path / "b.txt"
    Bridge(4, cadence=64).save(path)
    data = bytearray(path.read_bytes())
    data[40] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatchError):
        Bridge.load(path)


def crash_at(label):
    def hook(name):
        if name == label:
            raise atomic.SimulatedCrash(name)
    return hook


@pytest.mark.parametrize("label", ["bridge:tmp-partial", "bridge:tmp-written", "bridge:main-retired"])
def test_crash_restores_previous(tmp_path, rng, monkeypatch, label):
    d = 6
    path = tmp_path / "bridge.txt"
    old = Bridge(d, cadence=64)
    old.save(path)
    new = Bridge(d, cadence=64)
    x = unit_rows(rng, 64, d)
    feed(new, x, x @ random_rotation(rng, d))
    monkeypatch.setattr(atomic, "fault_hook", crash_at(label))
    with pytest.raises(atomic.SimulatedCrash):
        new.save(path)
    monkeypatch.setattr(atomic, "fault_hook", None)
    assert Bridge.load(path).state_equals(old)


def test_crash_after_rename_loads_new(tmp_path, rng, monkeypatch):
    path = tmp_path / "bridge.txt"
    Bridge(4, cadence=64).save(path)
    new = Bridge(4, cadence=64)
    x = unit_rows(rng, 64, 4)
    feed(new, x, x)
    monkeypatch.setattr(atomic, "fault_hook", crash_at("bridge:renamed"))
    with pytest.raises(atomic.SimulatedCrash):
        new.save(path)
    monkeypatch.setattr(atomic, "fault_hook", None)
    assert Bridge.load(path).state_equals(new)


def test_partial_write_without_previous(tmp_path, monkeypatch):
    path = tmp_path / "bridge.txt"
    monkeypatch.setattr(atomic, "fault_hook", crash_at("bridge:tmp-written"))
    with pytest.raises(atomic.SimulatedCrash):
        Bridge(4, cadence=64).save(path)
    monkeypatch.setattr(atomic, "fault_hook", None)
    with pytest.raises(PartialWriteError):
        Bridge.load(path)
