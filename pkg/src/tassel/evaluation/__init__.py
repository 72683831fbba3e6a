"""Metrics, the mean-representation MLP baseline, and the multi-seed protocol."""

from .baseline import MLPBaseline, MLPConfig, mean_representation, mlp_baseline_fit, mlp_baseline_predict
from .metrics import CSV_COLUMNS, MetricReport, confusion, csv_text, evaluate, metrics
from .protocol import ProtocolResult, SeedResult, run_protocol, run_seed, summarize

__all__ = [
    "CSV_COLUMNS", "MLPBaseline", "MLPConfig", "MetricReport", "ProtocolResult", "SeedResult",
    "confusion", "csv_text", "evaluate", "mean_representation", "metrics", "mlp_baseline_fit",
    "mlp_baseline_predict", "run_protocol", "run_seed", "summarize",
]
