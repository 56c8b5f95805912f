"""Execution engine for tiled dense linear algebra programs.

Programs written in a small single-assignment DSL are run by stateless
workers that coordinate only through an object store, a leased task queue,
and an atomic state store. The task DAG is never materialized: each worker
derives its downstream dependencies at runtime by solving the index
equation systems of the program text.
"""

from .analysis import (
    INITIAL_INPUT,
    AnalysisContext,
    CandidateSolution,
    IndexSystem,
    SsaWriterError,
    children_of,
    find_readers,
    find_writer,
    parents_of,
    solve_index_system,
    verify_binding,
)
from .control_plane import (
    QueueClosedError,
    Receipt,
    StaleReceiptError,
    StateStore,
    TaskMessage,
    TaskQueue,
    is_run_complete,
    record_completion,
)
from .executor import (
    TaskEvent,
    Worker,
    WorkerConfig,
    WorkerServices,
    should_self_terminate,
    worker_loop,
)
from .lang import (
    NodeRef,
    Program,
    enumerate_nodes,
    eval_scalar,
    format_node,
    make_node,
    oracle_edges,
    parse_node,
    parse_program,
    print_program,
    validate_ssa,
)
from .provisioner import PoolState, Provisioner, ScalingPolicy, desired_launches
from .store import (
    BigMatrix,
    FileStore,
    MemoryStore,
    MissingTileError,
    Tile,
    TileKey,
    WriteConflictError,
    assemble,
    partition,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisContext", "BigMatrix", "CandidateSolution", "FileStore",
    "INITIAL_INPUT", "IndexSystem", "MemoryStore", "MissingTileError",
    "NodeRef", "PoolState", "Program", "Provisioner", "QueueClosedError",
    "Receipt", "ScalingPolicy", "SsaWriterError", "StaleReceiptError",
    "StateStore", "TaskEvent", "TaskMessage", "TaskQueue", "Tile", "TileKey",
    "Worker", "WorkerConfig", "WorkerServices", "WriteConflictError",
    "assemble", "children_of", "desired_launches", "enumerate_nodes",
    "eval_scalar", "find_readers", "find_writer", "format_node",
    "is_run_complete", "make_node", "oracle_edges", "parents_of",
    "parse_node", "parse_program", "partition", "print_program",
    "record_completion", "should_self_terminate", "solve_index_system",
    "validate_ssa", "verify_binding", "worker_loop",
]
