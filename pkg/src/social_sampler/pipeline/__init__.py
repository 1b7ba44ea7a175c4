"""Trade-log ingestion, panel construction, and synthetic ground-truth markets."""

from __future__ import annotations

from .impute import ImputationReport, impute_missing_parents, mirror_ratios
from .reconstruct import (
    METRICS,
    Calendar,
    MirrorInterval,
    PerformanceMetricSpec,
    PerformanceTable,
    PopularityTable,
    build_panel,
    compute_performance,
    metric_value,
    mirror_intervals,
    reconstruct_popularity,
)
from .synthetic import SyntheticMarket, SyntheticMarketConfig, generate_synthetic_market, synthetic_panel
from .trades import TRADE_COLUMNS, ParseReport, TradeRecord, emit_trades, parse_trades

__all__ = [
    "METRICS",
    "TRADE_COLUMNS",
    "Calendar",
    "ImputationReport",
    "MirrorInterval",
    "ParseReport",
    "PerformanceMetricSpec",
    "PerformanceTable",
    "PopularityTable",
    "SyntheticMarket",
    "SyntheticMarketConfig",
    "TradeRecord",
    "build_panel",
    "compute_performance",
    "emit_trades",
    "generate_synthetic_market",
    "impute_missing_parents",
    "metric_value",
    "mirror_intervals",
    "mirror_ratios",
    "parse_trades",
    "reconstruct_popularity",
    "synthetic_panel",
]
