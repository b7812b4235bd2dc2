"""``tierstream`` command line: gen, ingest, query, eval, bridge-eval, inject, export.

Settings come from built-in defaults, then an optional JSON ``--config``
file (keys are option names, dashes or underscores), then explicit flags.
Exit status is 0 on success, 2 when a query is low-confidence, 1 on error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, TierStreamError
from ..hot_index import HotConfig
from ..persistence import EngineState, snapshot_load, snapshot_save
from ..query_engine import QueryConfig, QueryEngine
from ..rawstore import read_vectors
from ..telemetry import TelemetryRecord, TelemetrySink
from ..tier_manager import PolicyWeights, TierConfig
from ..warm_index import WarmConfig
from . import synthetic
from .evaluation import build_tiers, run_bridge_eval, run_eval
from .export import export_plots
from .injection import KINDS, InjectionSpec, inject

EXIT_OK, EXIT_ERROR, EXIT_LOW_CONFIDENCE = 0, 1, 2

DEFAULTS = {
    # synthetic corpus
    "n_groups": 31, "per_group": 20, "d": 32, "jitter": 0.05, "seed": 7,
    "pairs": 0, "pair_noise": 0.01, "calibration": 1024, "corrupt_max": 0.0, "corrupt_power": 3.0,
    "probes": 200, "pair_seed": 11,
    # tiers
    "budget": 500, "min_train": None, "n_list": 100, "m": 8, "n_bits": 8, "n_probe": 10,
    "hnsw_m": 32, "ef_construction": 200, "ef_search": 64, "graph_seed": 0,
    "w_rec": 1.0, "w_freq": 1.0, "w_nov": 1.0, "w_cov": 0.0, "tau": 3600.0, "spill_every": 128,
    # queries
    "k": 10, "k_hot": 100, "k_warm": 100, "rerank_depth": 200, "hot_only": False,
    "epsilon": 0.0, "zeta": None, "mode": "group", "no_timing": False,
    # bridge / injection
    "cadence": 512, "noise": 0.0, "kind": None, "magnitude": None,
}


def _add(p: argparse.ArgumentParser, *flags: str, **kw) -> None:
    p.add_argument(*flags, default=argparse.SUPPRESS, **kw)


def _tier_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("tiers")
    _add(g, "--budget", type=int, help="hot capacity B")
    _add(g, "--min-train", type=int, help="cold-start floor (default 10 * n_list)")
    _add(g, "--n-list", type=int, help="IVF coarse lists")
    _add(g, "--m", type=int, help="PQ sub-quantizers")
    _add(g, "--n-bits", type=int, help="bits per sub-quantizer")
    _add(g, "--n-probe", type=int, help="IVF lists probed per query")
    _add(g, "--hnsw-m", type=int, help="HNSW neighbor degree")
    _add(g, "--ef-construction", type=int)
    _add(g, "--ef-search", type=int)
    _add(g, "--graph-seed", type=int, help="seed for HNSW levels and warm training")
    for name in ("w-rec", "w-freq", "w-nov", "w-cov", "tau"):
        _add(g, f"--{name}", type=float)
    _add(g, "--spill-every", type=int, help="run the spill after this many ingested records")


def _query_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("queries")
    _add(g, "--k", type=int)
    _add(g, "--k-hot", type=int, help="hot fan-out K_h")
    _add(g, "--k-warm", type=int, help="warm fan-out K_w")
    _add(g, "--rerank-depth", type=int)
    _add(g, "--hot-only", action="store_true")
    _add(g, "--epsilon", type=float, help="drift budget used for Safe flags")
    _add(g, "--zeta", type=float, help="distortion budget (default: measured warm distortion)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tierstream", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON file of option defaults")
        return p

    p = command("gen", "write a synthetic near-duplicate corpus (and optional pair stream)")
    p.add_argument("--out", type=Path, required=True)
    for name, typ in (("n-groups", int), ("per-group", int), ("d", int), ("jitter", float), ("seed", int),
                      ("pairs", int), ("pair-noise", float), ("calibration", int), ("corrupt-max", float),
                      ("corrupt-power", float), ("probes", int), ("pair-seed", int)):
        _add(p, f"--{name}", type=typ)

    p = command("ingest", "ingest a corpus and save an engine snapshot")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--snapshot", type=Path, required=True)
    _tier_flags(p)

    p = command("query", "query a snapshot; exit 2 when the answer is low-confidence")
    p.add_argument("--snapshot", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--vector", help="comma-separated components")
    src.add_argument("--item", type=int, help="use corpus item ID from --data as the query")
    src.add_argument("--anchor", type=int, help="use group anchor G from --data as the query")
    p.add_argument("--data", type=Path)
    p.add_argument("--telemetry", type=Path, help="append the telemetry record here")
    _query_flags(p)

    p = command("eval", "ingest a corpus, run the query protocol and write metrics")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add(p, "--mode", choices=("group", "item"))
    _add(p, "--no-timing", action="store_true", help="log latency as 0 for byte-identical output")
    _tier_flags(p)
    _query_flags(p)

    p = command("bridge-eval", "stream alignment pairs and log drift and Safe@1 per refresh")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", type=Path, help="pairs file (default DATA/pairs.vec)")
    p.add_argument("--probes", type=Path, help="probe file (default DATA/probes.vec)")
    p.add_argument("--out", type=Path, required=True)
    _add(p, "--cadence", type=int)
    _add(p, "--noise", type=float, help="query-side noise sigma")
    _add(p, "--zeta", type=float)
    _add(p, "--seed", type=int)

    p = command("inject", "run one failure injection against a clean baseline")
    p.add_argument("--data", type=Path, required=True)
    _add(p, "--kind", choices=KINDS, required=True)
    _add(p, "--magnitude", type=float)
    _add(p, "--seed", type=int)
    _add(p, "--cadence", type=int)
    p.add_argument("--out", type=Path, help="write the JSON report here")
    _tier_flags(p)
    _query_flags(p)

    p = command("export", "turn a telemetry log into per-figure CSV files")
    p.add_argument("--telemetry", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in loaded.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            opts[key] = val
    for key, val in vars(args).items():
        if key in DEFAULTS:
            opts[key] = val
    return opts


def tier_config(o: dict) -> TierConfig:
    try:
        return TierConfig(
            budget_B=o["budget"],
            min_train=o["min_train"],
            hot=HotConfig(M=o["hnsw_m"], ef_construction=o["ef_construction"], ef_search=o["ef_search"],
                          seed=o["graph_seed"]),
            warm=WarmConfig(n_list=o["n_list"], m=o["m"], n_bits=o["n_bits"], n_probe=o["n_probe"]),
            weights=PolicyWeights(o["w_rec"], o["w_freq"], o["w_nov"], o["w_cov"], o["tau"]),
            seed=o["graph_seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def query_config(o: dict) -> QueryConfig:
    try:
        return QueryConfig(k=o["k"], K_h=o["k_hot"], K_w=o["k_warm"], rerank_depth=o["rerank_depth"],
                           hot_only=o["hot_only"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _json_safe(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def _emit(payload: dict) -> None:
    print(json.dumps(_json_safe(payload), sort_keys=True))


def cmd_gen(args, o) -> int:
    spec = synthetic.SyntheticSpec(o["n_groups"], o["per_group"], o["d"], o["jitter"], o["seed"])
    pairs = synthetic.PairSpec(o["pairs"], o["pair_noise"], o["calibration"], o["corrupt_max"],
                               o["corrupt_power"], o["probes"], o["pair_seed"])
    data = synthetic.write_dataset(spec, args.out, pairs)
    _emit({"items": len(data), "groups": len(data.members()), "d": data.d, "pairs": o["pairs"],
           "out": str(args.out)})
    return EXIT_OK


def cmd_ingest(args, o) -> int:
    data = synthetic.load_dataset(args.data)
    tm = build_tiers(data, tier_config(o), o["spill_every"])
    manifest = snapshot_save(EngineState(tm), args.snapshot)
    _emit({"counts": tm.counts(), "zeta": tm.zeta, "generation": manifest["generation"]})
    return EXIT_OK


def _query_vector(args) -> np.ndarray:
    if args.vector is not None:
        try:
            v = np.array([float(x) for x in args.vector.split(",")])
        except ValueError:
            raise ConfigError("--vector must be comma-separated numbers") from None
        return v / np.linalg.norm(v) if np.linalg.norm(v) > 0 else v
    if args.data is None:
        raise ConfigError("--item/--anchor need --data")
    if args.item is not None:
        _, ids, vecs = read_vectors(Path(args.data) / synthetic.EMBEDDINGS)
        hit = np.flatnonzero(ids == args.item)
        if not hit.size:
            raise ConfigError(f"item {args.item} not in {args.data}")
        return vecs[hit[0]]
    _, ids, anchors = read_vectors(Path(args.data) / synthetic.ANCHORS)
    if not 0 <= args.anchor < len(anchors):
        raise ConfigError(f"anchor {args.anchor} out of range")
    return anchors[args.anchor]


def cmd_query(args, o) -> int:
    state = snapshot_load(args.snapshot)
    engine = QueryEngine(state.tiers, query_config(o), state.bridge)
    q = _query_vector(args)
    out = engine.query(q, epsilon=o["epsilon"], zeta=o["zeta"])
    rec = TelemetryRecord.from_outcome("cli", out)
    if args.telemetry is not None:
        with TelemetrySink(args.telemetry, append=True) as sink:
            sink.append(rec)
    _emit({"ids": rec.top_ids, "scores": rec.scores, "gamma1": out.gamma1, "delta_k": out.delta_k,
           "safe1": out.safe1, "safeK": out.safeK, "low_confidence": out.low_confidence,
           "epsilon": out.epsilon_used, "zeta": out.zeta_used, "latency_us": out.latency_us})
    return EXIT_LOW_CONFIDENCE if out.low_confidence else EXIT_OK


def cmd_eval(args, o) -> int:
    data = synthetic.load_dataset(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    result = run_eval(
        data, tier_config(o), query_config(o), epsilon=o["epsilon"], zeta=o["zeta"], mode=o["mode"],
        spill_every=o["spill_every"], telemetry=args.out / "telemetry.jsonl", report=args.out / "report.csv",
        record_latency=not o["no_timing"],
    )
    _emit(result.metrics)
    return EXIT_OK


def cmd_bridge_eval(args, o) -> int:
    data = synthetic.load_dataset(args.data)
    src, tgt = synthetic.read_pairs(args.pairs or Path(args.data) / synthetic.PAIRS)
    probe_ids, probe_src = synthetic.read_probes(args.probes or Path(args.data) / synthetic.PROBES)
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        rows = run_bridge_eval(data, src, tgt, probe_ids, probe_src, noise_sigma=o["noise"], cadence=o["cadence"],
                               zeta=o["zeta"] or 0.0, seed=o["seed"], telemetry=args.out / "telemetry.jsonl",
                               csv_path=args.out / "bridge_telemetry.csv")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _emit({"refreshes": len(rows), "final_epsilon": rows[-1].epsilon if rows else 0.0,
           "final_safe1": rows[-1].safe1 if rows else 1.0})
    return EXIT_OK


def cmd_inject(args, o) -> int:
    data = synthetic.load_dataset(args.data)
    spec = InjectionSpec(o["kind"], o["magnitude"], o["seed"])
    report = inject(spec, data, tier_config(o), query_config(o), cadence=o["cadence"]).to_dict()
    if args.out is not None:
        Path(args.out).write_text(json.dumps(_json_safe(report), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _emit(report)
    return EXIT_OK


def cmd_export(args, o) -> int:
    paths = export_plots(args.telemetry, args.out)
    _emit({name: str(p) for name, p in paths.items()})
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "ingest": cmd_ingest,
    "query": cmd_query,
    "eval": cmd_eval,
    "bridge-eval": cmd_bridge_eval,
    "inject": cmd_inject,
    "export": cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, resolve(args))
    except (TierStreamError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
