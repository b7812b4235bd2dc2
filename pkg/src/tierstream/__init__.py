"""Tiered streaming vector retrieval with drift-aware stability certificates."""

from .bridge import Bridge, RefreshReport
from .hot_index import HNSWIndex, HotConfig, HotHit
from .persistence import EngineState, snapshot_load, snapshot_save
from .query_engine import QueryConfig, QueryEngine, QueryOutcome, certify_stability, merge, rerank
from .telemetry import TelemetryRecord, TelemetrySink, energy_per_query
from .tier_manager import EmbeddingRecord, PolicyWeights, Tier, TierConfig, TierManager
from .warm_index import PQCode, WarmCodec, WarmConfig, WarmIndex

__all__ = [
    "Bridge",
    "EmbeddingRecord",
    "EngineState",
    "HNSWIndex",
    "HotConfig",
    "HotHit",
    "PQCode",
    "PolicyWeights",
    "QueryConfig",
    "QueryEngine",
    "QueryOutcome",
    "RefreshReport",
    "TelemetryRecord",
    "TelemetrySink",
    "Tier",
    "TierConfig",
    "TierManager",
    "WarmCodec",
    "WarmConfig",
    "WarmIndex",
    "certify_stability",
    "energy_per_query",
    "merge",
    "rerank",
    "snapshot_load",
    "snapshot_save",
]

__version__ = "0.1.0"
