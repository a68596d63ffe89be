"""Transaction-to-shard placement strategies and a sharded-ledger simulator."""

from .ingest import SynthConfig, generate_synthetic, load_stream, parse_stream, write_stream
from .l2s import RateModel, ShardRates, expected_latency
from .placement import PlacementDecision, StrategyConfig, build_strategy
from .simcore import MetricsReport, SimConfig, Simulator, run
from .t2s import ScoreState, batch_scores
from .tan import TanGraph, TxRecord, build_graph

__all__ = [
    "MetricsReport",
    "PlacementDecision",
    "RateModel",
    "ScoreState",
    "ShardRates",
    "SimConfig",
    "Simulator",
    "StrategyConfig",
    "SynthConfig",
    "TanGraph",
    "TxRecord",
    "batch_scores",
    "build_graph",
    "build_strategy",
    "expected_latency",
    "generate_synthetic",
    "load_stream",
    "parse_stream",
    "run",
    "write_stream",
]
