"""Run orchestration: program library, end-to-end runs, faults, metrics, CLI."""

from .bench import bench_analysis, bench_csv, dag_dump
from .faults import FaultController, FaultPlan, parse_fault_spec
from .metrics import MetricsSink, RunMetrics, write_metrics
from .programs import (
    BUILTINS,
    cholesky_source,
    gemm_source,
    gen_cholesky,
    gen_gemm,
    gen_tsqr,
    tsqr_source,
)
from .runner import RunAbort, RunConfig, run, seed_roots

__all__ = [
    "BUILTINS", "FaultController", "FaultPlan", "MetricsSink", "RunAbort",
    "RunConfig", "RunMetrics", "bench_analysis", "bench_csv",
    "cholesky_source", "dag_dump", "gemm_source", "gen_cholesky", "gen_gemm",
    "gen_tsqr", "parse_fault_spec", "run", "seed_roots", "tsqr_source",
    "write_metrics",
]
