"""Synthetic near-duplicate corpora and rotation-generated alignment pairs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..rawstore import read_vectors, write_vectors

EMBEDDINGS = "embeddings.vec"
GROUPS = "groups.jsonl"
ANCHORS = "anchors.vec"
SPEC = "spec.json"
PAIRS = "pairs.vec"
PROBES = "probes.vec"


@dataclass(frozen=True)
class SyntheticSpec:
    n_groups: int = 31
    per_group: int = 20
    d: int = 32
    jitter_sigma: float = 0.05
    seed: int = 7

    def __post_init__(self) -> None:
        if self.n_groups < 1 or self.per_group < 1:
            raise ConfigError("n_groups and per_group must be >= 1")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be >= 0")
        if self.d < 1:
            raise ConfigError("d must be >= 1")


@dataclass(frozen=True)
class PairSpec:
    """Alignment stream: ``source = target @ R.T + noise`` (renormalized).

    The first ``calibration`` pairs are clean. After that a growing
    fraction of pairs get the target of a random other corpus item, the
    rate rising as ``corrupt_max * x**corrupt_power`` with ``x`` running
    from 0 to 1 over the rest of the stream.
    """

    n_pairs: int = 0
    noise: float = 0.01
    calibration: int = 1024
    corrupt_max: float = 0.0
    corrupt_power: float = 3.0
    n_probes: int = 200
    seed: int = 11


@dataclass
class Dataset:
    ids: np.ndarray
    vectors: np.ndarray
    groups: list[int]
    anchors: np.ndarray  # row g is the anchor of group g

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    def members(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for i, g in zip(self.ids.tolist(), self.groups):
            out.setdefault(g, set()).add(int(i))
        return out


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _f32(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def generate(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    anchors = _unit(rng.standard_normal((spec.n_groups, spec.d)))
    n = spec.n_groups * spec.per_group
    groups = np.repeat(np.arange(spec.n_groups), spec.per_group)
    noise = rng.standard_normal((n, spec.d)) * spec.jitter_sigma
    vecs = _unit(anchors[groups] + noise)
    return Dataset(np.arange(n, dtype=np.uint64), _f32(vecs), groups.tolist(), _f32(anchors))


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def corruption_rate(index: int, spec: PairSpec) -> float:
    if index < spec.calibration or spec.corrupt_max <= 0:
        return 0.0
    span = max(1, spec.n_pairs - spec.calibration)
    x = (index - spec.calibration + 1) / span
    return spec.corrupt_max * min(1.0, x) ** spec.corrupt_power


def generate_pairs(data: Dataset, spec: PairSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(src, tgt, probe_ids, probe_src)``.

    Probes are clean source-space views of corpus items; their ids are the
    corpus ids so the harness can score them.
    """
    rng = np.random.default_rng(spec.seed)
    R = random_rotation(data.d, rng)
    n = len(data)
    pick = rng.integers(0, n, spec.n_pairs)
    tgt = data.vectors[pick]
    src = _unit(tgt @ R.T + spec.noise * rng.standard_normal(tgt.shape))
    rates = np.array([corruption_rate(i, spec) for i in range(spec.n_pairs)])
    swap = rng.random(spec.n_pairs) < rates
    if swap.any():
        other = rng.integers(0, n, int(swap.sum()))
        tgt = tgt.copy()
        tgt[swap] = data.vectors[other]
    probe_ids = np.sort(rng.choice(n, size=min(spec.n_probes, n), replace=False))
    probe_src = _unit(data.vectors[probe_ids] @ R.T)
    return _f32(src), _f32(tgt), probe_ids.astype(np.uint64), _f32(probe_src)


def write_dataset(spec: SyntheticSpec, out: str | Path, pairs: PairSpec | None = None) -> Dataset:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(spec)
    write_vectors(out / EMBEDDINGS, spec.d, zip(data.ids.tolist(), data.vectors))
    write_vectors(out / ANCHORS, spec.d, enumerate(data.anchors))
    lines = [json.dumps({"group": g, "id": int(i)}, sort_keys=True) for i, g in zip(data.ids.tolist(), data.groups)]
    (out / GROUPS).write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {"synthetic": asdict(spec)}
    if pairs is not None and pairs.n_pairs > 0:
        src, tgt, probe_ids, probe_src = generate_pairs(data, pairs)
        write_pairs(out / PAIRS, src, tgt)
        write_vectors(out / PROBES, spec.d, zip(probe_ids.tolist(), probe_src))
        meta["pairs"] = asdict(pairs)
    (out / SPEC).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return data


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        d, ids, vecs = read_vectors(path / EMBEDDINGS)
        _, _, anchors = read_vectors(path / ANCHORS)
        rows = [json.loads(x) for x in (path / GROUPS).read_text(encoding="utf-8").splitlines() if x.strip()]
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset file missing: {exc.filename}") from None
    group_of = {r["id"]: r["group"] for r in rows}
    groups = [group_of[int(i)] for i in ids.tolist()]
    return Dataset(ids, vecs, groups, anchors)


def write_pairs(path: str | Path, src: np.ndarray, tgt: np.ndarray) -> None:
    """Interleaved records, source then target, both tagged with the pair index."""
    d = src.shape[1]
    recs = []
    for i, (s, t) in enumerate(zip(src, tgt)):
        recs.append((i, s))
        recs.append((i, t))
    write_vectors(path, d, recs)


def read_pairs(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    _, ids, vecs = read_vectors(path)
    if len(ids) % 2:
        raise ConfigError(f"{path}: odd record count {len(ids)} in a pairs file")
    src, tgt = vecs[0::2], vecs[1::2]
    if not np.array_equal(ids[0::2], ids[1::2]):
        raise ConfigError(f"{path}: source/target ids do not line up")
    return src, tgt


def read_probes(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    _, ids, vecs = read_vectors(path)
    return ids, vecs
