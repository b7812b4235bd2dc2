"""Crash-safe snapshots of the whole engine.

A snapshot directory holds ``MANIFEST.json`` and one ``gen-NNNNNN``
subdirectory per saved generation. A save writes every part of the new
generation (each via temp file + rename), then atomically replaces the
manifest, then deletes older generations. The manifest is the commit
point: a crash anywhere before it leaves the previous generation in charge.

The hot graph is not serialized. Its node sequence, tombstones and
generation seed are, and loading replays the insertions, which reproduces
the graph exactly.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import atomic
from .bridge import Bridge
from .errors import ChecksumMismatchError, PartialWriteError, VersionMismatchError
from .hot_index import HNSWIndex, HotConfig
from .rawstore import decode_records, encode_records
from .tier_manager import EmbeddingRecord, NormFilter, PolicyWeights, TierConfig, TierManager
from .warm_index import WarmCodec, WarmConfig

FORMAT = "tierstream-snapshot"
VERSION = 1
MANIFEST = "MANIFEST.json"
PART_FORMATS = {
    "hot.vec": "LUMAVEC1",
    "hot.json": "hot-meta/1",
    "warm.raw.vec": "LUMAVEC1",
    "warm.codec": "packed-arrays/1",
    "policy.jsonl": "policy-jsonl/1",
    "state.json": "tier-state/1",
    "staged.vec": "LUMAVEC1",
    "bridge.txt": "LUMABRIDGE1",
}


@dataclass
class EngineState:
    tiers: TierManager
    bridge: Bridge | None = None


# -- array packing ------------------------------------------------------------


def pack_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """JSON header line followed by the raw little-endian array bytes."""
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dt, copy=False)
        specs.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode()
    return header + b"\n" + b"".join(blobs)


def unpack_arrays(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    head, _, body = buf.partition(b"\n")
    header = json.loads(head)
    out = {}
    offset = 0
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        n = count * dt.itemsize
        out[spec["name"]] = np.frombuffer(body, dtype=dt, count=count, offset=offset).reshape(spec["shape"]).copy()
        offset += n
    return header["meta"], out


# -- config (de)serialization -----------------------------------------------


def config_to_dict(cfg: TierConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> TierConfig:
    return TierConfig(
        budget_B=d["budget_B"],
        min_train=d["min_train"],
        hot=HotConfig(**d["hot"]),
        warm=WarmConfig(**d["warm"]),
        weights=PolicyWeights(**d["weights"]),
        seed=d["seed"],
        drift_ratio=d["drift_ratio"],
        drift_sample=d["drift_sample"],
    )


# -- parts ------------------------------------------------------------------


def _hot_parts(tm: TierManager) -> dict[str, bytes]:
    nodes = tm.hot.node_records()
    vec = encode_records(tm.dim, [(i, v) for i, v, _ in nodes])
    meta = {
        "generation": tm.hot.generation,
        "deleted": [n for n, (_, _, dead) in enumerate(nodes) if dead],
        "config": asdict(tm.hot.config),
    }
    return {"hot.vec": vec, "hot.json": json.dumps(meta, sort_keys=True).encode()}


def _warm_parts(tm: TierManager) -> dict[str, bytes]:
    warm = tm.warm
    parts = {"warm.raw.vec": encode_records(tm.dim, [(i, warm.raw.get(i)) for i in warm.ids()])}
    if warm.codec is None:
        parts["warm.codec"] = pack_arrays({"trained": False}, {})
        return parts
    codec = warm.codec
    arrays = {"coarse": codec.coarse_centroids}
    for j, book in enumerate(codec.codebooks):
        arrays[f"book{j}"] = book
    ids = warm.ids()
    arrays["ids"] = np.array(ids, dtype=np.uint64)
    arrays["lists"] = np.array([warm.code(i).list_id for i in ids], dtype=np.int64)
    arrays["subs"] = np.array([warm.code(i).sub_ids for i in ids], dtype=np.int64).reshape(len(ids), codec.m)
    meta = {"trained": True, "m": codec.m, "n_bits": codec.n_bits, "zeta": codec.zeta.hex()}
    parts["warm.codec"] = pack_arrays(meta, arrays)
    return parts


def _policy_part(tm: TierManager) -> bytes:
    lines = [json.dumps(r.policy_dict(), sort_keys=True) for r in tm.records.values()]
    return ("\n".join(lines) + ("\n" if lines else "")).encode()


def _state_part(tm: TierManager) -> bytes:
    state = {
        "dim": tm.dim,
        "config": config_to_dict(tm.config),
        "zeta": float(tm.zeta).hex(),
        "now": float(tm.now).hex(),
        "spill_count": tm.spill_count,
        "staged": list(tm.staged),
        "quarantine": list(tm.quarantine),
        "norm_filter": None
        if tm.norm_filter is None
        else {
            "lo": tm.norm_filter.lo,
            "hi": tm.norm_filter.hi,
            "norms": [float(x).hex() for x in tm.norm_filter._norms],
        },
    }
    return json.dumps(state, sort_keys=True).encode()


def _staged_part(tm: TierManager) -> bytes:
    return encode_records(tm.dim, [(i, tm.staged_vectors[i]) for i in tm.staged])


def serialize(state: EngineState) -> dict[str, bytes]:
    tm = state.tiers
    parts = {}
    parts.update(_hot_parts(tm))
    parts.update(_warm_parts(tm))
    parts["policy.jsonl"] = _policy_part(tm)
    parts["state.json"] = _state_part(tm)
    parts["staged.vec"] = _staged_part(tm)
    if state.bridge is not None:
        parts["bridge.txt"] = state.bridge.to_text().encode()
    return parts


# -- save / load ------------------------------------------------------------


def _read_manifest(root: Path) -> dict | None:
    path = root / MANIFEST
    if not path.exists():
        return None
    return json.loads(path.read_text())


def snapshot_save(state: EngineState, directory: str | Path) -> dict:
    """Write a new snapshot generation and commit it via the manifest.

    The caller must hold the writer (``state.tiers.lock`` is taken here).
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    with state.tiers.lock:
        parts = serialize(state)
        tm = state.tiers
        counts = {
            "hot": len(tm.hot),
            "hot_nodes": tm.hot.node_count,
            "warm": len(tm.warm),
            "staged": len(tm.staged),
            "records": len(tm.records),
        }
    previous = _read_manifest(root)
    generation = (previous["generation"] + 1) if previous else 1
    gen_dir = root / f"gen-{generation:06d}"
    if gen_dir.exists():
        shutil.rmtree(gen_dir)  # debris of an uncommitted save
    gen_dir.mkdir()

    entries = {}
    for name in sorted(parts):
        data = parts[name]
        atomic.atomic_write_bytes(gen_dir / name, data, label=f"part:{name}")
        entries[name] = {"file": f"{gen_dir.name}/{name}", "bytes": len(data), "crc32": atomic.crc32(data),
                         "format": PART_FORMATS[name]}
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "generation": generation,
        "d": state.tiers.dim,
        "counts": counts,
        "parts": entries,
    }
    atomic.atomic_write_bytes(root / MANIFEST, json.dumps(manifest, sort_keys=True, indent=1).encode(), label="manifest")
    for old in sorted(root.glob("gen-*")):
        if old != gen_dir and old.is_dir():
            shutil.rmtree(old)
    atomic.boundary("cleanup:done")
    return manifest


def _read_part(root: Path, manifest: dict, name: str) -> bytes:
    entry = manifest["parts"][name]
    path = root / entry["file"]
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise ChecksumMismatchError(f"snapshot part {name} is missing", part=name) from None
    if len(data) != entry["bytes"] or atomic.crc32(data) != entry["crc32"]:
        raise ChecksumMismatchError(f"snapshot part {name} failed verification", part=name)
    return data


def snapshot_load(directory: str | Path) -> EngineState:
    """Restore the generation named by the manifest.

    Raises:
        ChecksumMismatchError: a part is missing or corrupt (``exc.part``).
        VersionMismatchError: unknown format or version.
        PartialWriteError: only an uncommitted manifest exists.
    """
    root = Path(directory)
    manifest = _read_manifest(root)
    if manifest is None:
        if (root / (MANIFEST + ".tmp")).exists():
            raise PartialWriteError(f"{root}: first snapshot was interrupted")
        raise FileNotFoundError(root / MANIFEST)
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise VersionMismatchError(
            f"snapshot {manifest.get('format')} v{manifest.get('version')} is not {FORMAT} v{VERSION}"
        )
    blobs = {name: _read_part(root, manifest, name) for name in manifest["parts"]}

    st = json.loads(blobs["state.json"])
    cfg = config_from_dict(st["config"])
    dim = st["dim"]
    tm = TierManager(dim, cfg)

    hot_meta = json.loads(blobs["hot.json"])
    _, hot_ids, hot_vecs = decode_records(blobs["hot.vec"])
    deleted = set(hot_meta["deleted"])
    tm.hot = HNSWIndex.replay(
        dim,
        HotConfig(**hot_meta["config"]),
        hot_meta["generation"],
        ((int(i), v, n in deleted) for n, (i, v) in enumerate(zip(hot_ids.tolist(), hot_vecs))),
    )

    meta, arrays = unpack_arrays(blobs["warm.codec"])
    _, raw_ids, raw_vecs = decode_records(blobs["warm.raw.vec"])
    for i, v in zip(raw_ids.tolist(), raw_vecs):
        tm.warm.raw.put(int(i), v)
    if meta["trained"]:
        codec = WarmCodec(
            arrays["coarse"],
            [arrays[f"book{j}"] for j in range(meta["m"])],
            meta["n_bits"],
            float.fromhex(meta["zeta"]),
        )
        tm.warm.codec = codec
        for i, l, s in zip(arrays["ids"].tolist(), arrays["lists"].tolist(), arrays["subs"]):
            tm.warm._store_code(int(i), int(l), s)
            tm.warm._order.append(int(i))

    for line in blobs["policy.jsonl"].decode().splitlines():
        d = json.loads(line)
        item_id = d["id"]
        rec = EmbeddingRecord(
            id=item_id,
            vector=None,
            modality=d["modality"],
            group=d["group"],
            last_access=d["last_access"],
            access_count=d["access_count"],
            novelty=d["novelty"],
        )
        tm.records[item_id] = rec

    _, st_ids, st_vecs = decode_records(blobs["staged.vec"])
    for i, v in zip(st_ids.tolist(), st_vecs):
        tm.staged.append(int(i))
        tm.staged_vectors[int(i)] = v
    for rec in tm.records.values():
        rec.vector = tm.vector(rec.id)

    found = {"hot": len(tm.hot), "hot_nodes": tm.hot.node_count, "warm": len(tm.warm),
             "staged": len(tm.staged), "records": len(tm.records)}
    if found != manifest["counts"]:
        raise ChecksumMismatchError(f"manifest counts {manifest['counts']} != parts {found}", part=MANIFEST)

    tm.zeta = float.fromhex(st["zeta"])
    tm.now = float.fromhex(st["now"])
    tm.spill_count = st["spill_count"]
    tm.quarantine = list(st["quarantine"])
    if st["norm_filter"] is not None:
        nf = NormFilter(st["norm_filter"]["lo"], st["norm_filter"]["hi"])
        nf._norms = [float.fromhex(x) for x in st["norm_filter"]["norms"]]
        tm.norm_filter = nf

    bridge = Bridge.from_text(blobs["bridge.txt"].decode(), "bridge.txt") if "bridge.txt" in blobs else None
    return EngineState(tm, bridge)

