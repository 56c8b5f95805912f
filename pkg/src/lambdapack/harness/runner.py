"""End-to-end run orchestration.

setup -> supervise -> teardown: generate and partition the input, seed
every zero-parent node into the queue, run workers (a fixed pool or an
auto-scaled one) until every declared output tile exists, then assemble
the result and optionally check it against the dense oracle.
"""

from __future__ import annotations

import math
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from ..analysis import AnalysisContext, find_readers
from ..control_plane import StateStore, TaskMessage, TaskQueue, is_run_complete
from ..executor import Worker, WorkerConfig, WorkerServices
from ..lang import (
    Program,
    enumerate_nodes,
    node_reads,
    node_writes,
    output_tiles,
    parse_program,
)
from ..provisioner import Provisioner, ScalingPolicy, WorkerLauncher
from ..store import (
    BigMatrix,
    FileStore,
    MemoryStore,
    ObjectStore,
    Tile,
    TileKey,
    partition,
)
from .faults import FaultController, FaultPlan
from .metrics import MetricsSink, RunMetrics, write_metrics
from .programs import BUILTINS, cholesky_source, gemm_source, tsqr_source

CHOLESKY_TOL = 1e-10
TSQR_TOL = 1e-10
GEMM_TOL = 1e-12


class RunAbort(Exception):
    def __init__(self, reason: str, snapshot: str = ""):
        super().__init__(reason)
        self.reason = reason
        self.snapshot = snapshot


@dataclass
class RunConfig:
    builtin: str | None = None
    program_path: str | None = None
    params: dict[str, int] = field(default_factory=dict)
    block: int = 32
    elements: int | None = None  # cholesky matrix dimension; enables ragged grids
    tsqr_rows: int = 512
    tsqr_cols: int = 16
    backend: str = "memory"  # memory | fs
    root: str | None = None
    store_delay_s: float = 0.0
    store_bandwidth: float | None = None
    worker: WorkerConfig = field(default_factory=WorkerConfig)
    workers: int | None = None
    autoscale: ScalingPolicy | None = None
    fault: FaultPlan | None = None
    fault_seed: int = 0
    seed: int = 0
    check: bool = False
    metrics_dir: str | None = None
    run_id: str | None = None
    compute_delay_s: float = 0.0
    stall_abort_s: float = 0.0  # 0 = derive from lease length

    def __post_init__(self):
        if (self.workers is None) == (self.autoscale is None):
            raise ValueError("exactly one of fixed workers / autoscale must be set")
        if self.builtin is None and self.program_path is None:
            raise ValueError("either a builtin name or a program path is required")


@dataclass
class _Workload:
    program: Program
    params: dict[str, int]
    initial_tiles: dict[tuple[str, tuple[int, ...]], Tile]
    shape_rules: dict | None
    checker: object  # callable(store, run_id) -> (passed | None, output_bytes)
    total_nodes: int


def _spd_input(n: int, rng: np.random.Generator) -> np.ndarray:
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def _build_cholesky(cfg: RunConfig, program: Program, params: dict) -> _Workload:
    n_blocks = params["N"]
    rng = np.random.default_rng(cfg.seed)
    size = cfg.elements if cfg.elements is not None else cfg.block * n_blocks
    grid = math.ceil(size / cfg.block)
    if grid != n_blocks:
        raise ValueError(
            f"grid param N={n_blocks} inconsistent with {size} elements at block {cfg.block}"
        )
    dense = _spd_input(size, rng)
    tiles = dict(partition(dense, cfg.block))
    initial = {
        ("S", (0, r, c)): t for (r, c), t in tiles.items() if r >= c
    }
    layout = BigMatrix("S", size, size, cfg.block)

    def shape(idx, _bm=layout):
        # the leading index of S is the elimination stage, not a grid axis
        return _bm.tile_shape(idx[-2], idx[-1])

    def checker(store: ObjectStore, run_id: str):
        out = {}
        for r in range(grid):
            for c in range(grid):
                if c <= r:
                    out[(r, c)] = store.get_tile(TileKey(run_id, "O", (r, c)))
                else:
                    out[(r, c)] = Tile(np.zeros(layout.tile_shape(r, c)))
        from ..store import assemble

        low = assemble(out)
        err = np.linalg.norm(low @ low.T - dense) / np.linalg.norm(dense)
        return bool(err <= CHOLESKY_TOL), low.tobytes()

    return _Workload(
        program,
        params,
        initial,
        {"S": shape, "O": shape},
        checker,
        len(enumerate_nodes(program, params)),
    )


def _build_tsqr(cfg: RunConfig, program: Program, params: dict) -> _Workload:
    leaves = params["N"]
    rows, cols = cfg.tsqr_rows, cfg.tsqr_cols
    rng = np.random.default_rng(cfg.seed)
    dense = rng.standard_normal((rows, cols))
    leaf_rows = math.ceil(rows / leaves)
    initial = {}
    heights = []
    for i in range(leaves):
        piece = dense[i * leaf_rows : (i + 1) * leaf_rows]
        if piece.shape[0] < cols:
            raise ValueError(f"leaf {i} has {piece.shape[0]} rows < {cols} cols")
        heights.append(piece.shape[0])
        initial[("A", (i,))] = Tile(piece)
    final_level = leaves.bit_length() - 1

    def shape(idx, _h=heights, _c=cols):
        if len(idx) == 1:
            return _h[idx[0]], _c
        return _c, _c

    def checker(store: ObjectStore, run_id: str):
        r = store.get_tile(TileKey(run_id, "R", (0, final_level)))
        gram = dense.T @ dense
        err = np.linalg.norm(r.data.T @ r.data - gram) / np.linalg.norm(gram)
        return bool(err <= TSQR_TOL), r.data.tobytes()

    return _Workload(
        program,
        params,
        initial,
        {"A": shape, "R": shape},
        checker,
        len(enumerate_nodes(program, params)),
    )


def _build_gemm(cfg: RunConfig, program: Program, params: dict) -> _Workload:
    n_blocks, k_blocks = params["N"], params["K"]
    b = cfg.block
    rng = np.random.default_rng(cfg.seed)
    a_dense = rng.standard_normal((n_blocks * b, k_blocks * b))
    b_dense = rng.standard_normal((k_blocks * b, n_blocks * b))
    initial = {}
    for (i, k), t in partition(a_dense, b):
        initial[("A", (i, k))] = t
    for (k, j), t in partition(b_dense, b):
        initial[("B", (k, j))] = t
    final_level = k_blocks.bit_length() - 1

    def shape(idx, _b=b):
        return _b, _b

    def checker(store: ObjectStore, run_id: str):
        from ..store import assemble

        grid = {
            (i, j): store.get_tile(TileKey(run_id, "P", (i, j, 0, final_level)))
            for i in range(n_blocks)
            for j in range(n_blocks)
        }
        got = assemble(grid)
        want = a_dense @ b_dense
        err = np.linalg.norm(got - want) / np.linalg.norm(want)
        return bool(err <= GEMM_TOL), got.tobytes()

    return _Workload(
        program,
        params,
        initial,
        {"A": shape, "B": shape, "P": shape},
        checker,
        len(enumerate_nodes(program, params)),
    )


def _build_generic(cfg: RunConfig, program: Program, params: dict) -> _Workload:
    """Arbitrary program: standard-normal block x block tiles for every tile
    that is read but never written. --check has no oracle here."""
    rng = np.random.default_rng(cfg.seed)
    written = set()
    read = []
    seen = set()
    for n in enumerate_nodes(program, params):
        written.update(node_writes(program, n, params))
        for t in node_reads(program, n, params):
            if t not in seen:
                seen.add(t)
                read.append(t)
    initial = {
        t: Tile(rng.standard_normal((cfg.block, cfg.block)))
        for t in read
        if t not in written
    }

    def checker(store, run_id):
        from ..lang import output_tiles

        blobs = [
            store.get_tile(TileKey(run_id, m, idx)).data.tobytes()
            for m, idx in sorted(output_tiles(program, params))
        ]
        return None, b"".join(blobs)

    return _Workload(
        program, params, initial, None, checker, len(enumerate_nodes(program, params))
    )


def _load(cfg: RunConfig) -> tuple[Program, dict[str, int], object]:
    if cfg.builtin is not None:
        if cfg.builtin not in BUILTINS:
            raise ValueError(f"unknown builtin {cfg.builtin!r} (have {sorted(BUILTINS)})")
        defaults = {"cholesky": {"N": 4}, "tsqr": {"N": 4}, "gemm": {"N": 2, "K": 2}}
        merged = {**defaults[cfg.builtin], **cfg.params}
        if cfg.builtin == "cholesky" and cfg.elements is not None and "N" not in cfg.params:
            merged["N"] = math.ceil(cfg.elements / cfg.block)
        if cfg.builtin == "cholesky":
            program = parse_program(cholesky_source(merged["N"]))
            builder = _build_cholesky
        elif cfg.builtin == "tsqr":
            program = parse_program(tsqr_source(merged["N"]))
            builder = _build_tsqr
        else:
            program = parse_program(gemm_source(merged["N"], merged["K"]))
            builder = _build_gemm
        return program, program.resolve_params(merged), builder
    with open(cfg.program_path, "r", encoding="utf-8") as f:
        program = parse_program(f.read())
    return program, program.resolve_params(cfg.params), _build_generic


class _ThreadPool(WorkerLauncher):
    """Real worker pool: booting is a timer, running is a thread."""

    def __init__(self, services, worker_cfg, startup_latency, sink, clock):
        self.services = services
        self.worker_cfg = worker_cfg
        self.startup_latency = startup_latency
        self.sink = sink
        self.clock = clock
        self._lock = threading.Lock()
        self._live: list[Worker] = []
        self._booting = 0
        self._next = 0
        self._timers: list[threading.Timer] = []
        self._shutdown = False

    def launch(self, count: int) -> None:
        for _ in range(count):
            with self._lock:
                if self._shutdown:
                    return
                self._booting += 1
            if self.startup_latency > 0:
                t = threading.Timer(self.startup_latency, self._boot)
                t.daemon = True
                with self._lock:
                    self._timers.append(t)
                t.start()
            else:
                self._boot()

    def _boot(self):
        with self._lock:
            self._booting -= 1
            if self._shutdown:
                return
            wid = f"w{self._next}"
            self._next += 1
            worker = Worker(wid, self.worker_cfg, self.services, clock=self.clock)
            self._live.append(worker)
        thread = threading.Thread(
            target=self._run_worker, args=(worker,), daemon=True, name=wid
        )
        thread.start()

    def _run_worker(self, worker: Worker):
        try:
            report = worker.run()
            self.sink.worker_exit(report)
        finally:
            with self._lock:
                if worker in self._live:
                    self._live.remove(worker)

    def counts(self) -> tuple[int, int]:
        with self._lock:
            return len(self._live), self._booting

    def live_workers(self) -> list[Worker]:
        with self._lock:
            return list(self._live)

    def shutdown(self):
        with self._lock:
            self._shutdown = True
            timers = list(self._timers)
            live = list(self._live)
        for t in timers:
            t.cancel()
        for w in live:
            w.stop.set()

    def wait_drained(self, timeout: float):
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if not self._live and self._booting == 0:
                    return True
            time.sleep(0.005)
        return False


def _make_store(cfg: RunConfig) -> ObjectStore:
    knobs = dict(op_delay_s=cfg.store_delay_s, bytes_per_second=cfg.store_bandwidth)
    if cfg.backend == "memory":
        return MemoryStore(**knobs)
    if cfg.backend == "fs":
        if not cfg.root:
            raise ValueError("fs backend needs --root")
        return FileStore(cfg.root, **knobs)
    raise ValueError(f"unknown backend {cfg.backend!r} (memory|fs)")


def seed_roots(
    program: Program,
    params: dict[str, int],
    analysis: AnalysisContext,
    initial_tiles,
    queue: TaskQueue,
    state: StateStore,
    run_id: str,
    fault: FaultController | None = None,
) -> list:
    """Enqueue every zero-parent node, found implicitly via the readers of
    the initial tiles (no DAG materialization)."""
    roots = set()
    for matrix, idx in initial_tiles:
        for n in find_readers(program, params, matrix, idx):
            if analysis.parent_count(n) == 0:
                roots.add(n)
    for n in sorted(roots):
        copies = fault.enqueue_copies(n) if fault is not None else 1
        for _ in range(max(1, copies)):
            queue.enqueue(TaskMessage(node=n, run_id=run_id))
        state.mark_enqueued(n)
    return sorted(roots)


def run(cfg: RunConfig) -> RunMetrics:
    """Execute one job to completion; raises RunAbort with a state snapshot
    on kernel failure, retry exhaustion, or stalled progress."""
    program, params, builder = _load(cfg)
    workload = builder(cfg, program, params)
    run_id = cfg.run_id or f"{program.name}-{uuid.uuid4().hex[:8]}"
    store = _make_store(cfg)
    queue = TaskQueue()
    state = StateStore(run_id)
    analysis = AnalysisContext(program, params)
    sink = MetricsSink()
    fault = FaultController(cfg.fault, cfg.fault_seed) if cfg.fault else None

    # stage inputs (not counted as worker traffic)
    for (matrix, idx), tile in sorted(workload.initial_tiles.items()):
        store.put_tile(TileKey(run_id, matrix, idx), tile)
    out_tiles = output_tiles(program, params)

    services = WorkerServices(
        program=program,
        params=params,
        run_id=run_id,
        queue=queue,
        state=state,
        store=store,
        analysis=analysis,
        shape_rules=workload.shape_rules,
        sink=sink.task_event,
        fault=fault,
        compute_delay_s=cfg.compute_delay_s,
    )

    t0 = time.monotonic()
    seed_roots(program, params, analysis, workload.initial_tiles, queue, state, run_id, fault)
    _, _, base_bw, base_br = store.stats.snapshot()

    pool = _ThreadPool(
        services,
        cfg.worker,
        cfg.autoscale.startup_latency if cfg.autoscale else 0.0,
        sink,
        time.monotonic,
    )
    provisioner = None
    timeline: list[tuple[float, int, int, int]] = []
    if cfg.autoscale is not None:
        # timeline timestamps are relative to run start
        provisioner = Provisioner(
            queue.depth, pool, cfg.autoscale, clock=lambda: time.monotonic() - t0
        )
        provisioner.start()
    else:
        pool.launch(cfg.workers)

    stall_abort = cfg.stall_abort_s or max(5.0, 4 * cfg.worker.lease_length + 1.0)
    last_progress = time.monotonic()
    last_completed = -1
    aborted: str | None = None
    try:
        while True:
            now = time.monotonic()
            if state.aborted:
                aborted = state.aborted
                break
            if is_run_complete(state, program, params, store, run_id, out_tiles):
                break
            if fault is not None:
                fault.tick(
                    now - t0,
                    state.completed_task_count,
                    workload.total_nodes,
                    pool.live_workers(),
                )
            if cfg.autoscale is None:
                running, booting = pool.counts()
                if running + booting < cfg.workers:
                    pool.launch(cfg.workers - running - booting)
                timeline.append((now - t0, queue.depth(), running, booting))
            completed = state.completed_task_count
            if completed != last_completed or queue.depth() or queue.in_flight():
                last_progress = now
                last_completed = completed
            elif now - last_progress > stall_abort:
                aborted = f"no progress for {stall_abort:.1f}s"
                state.abort(aborted)
                break
            time.sleep(0.01)
    finally:
        t1 = time.monotonic()
        queue.close()
        if provisioner is not None:
            provisioner.stop()
            provisioner.join(timeout=2.0)
            timeline = provisioner.pool.timeline
        pool.shutdown()
        pool.wait_drained(timeout=5.0)

    metrics = RunMetrics.from_run(run_id, sink, timeline, t0, t1)
    metrics.tasks_completed = state.completed_task_count
    _, _, end_bw, end_br = store.stats.snapshot()
    metrics.store_bytes_written = end_bw - base_bw
    metrics.store_bytes_read = end_br - base_br
    if fault is not None:
        metrics.kill_times = list(fault.kill_times)

    if aborted:
        metrics.aborted = aborted
        if cfg.metrics_dir:
            write_metrics(metrics, cfg.metrics_dir)
        raise RunAbort(aborted, state.snapshot())

    passed, output_bytes = workload.checker(store, run_id)
    metrics.output_bytes = output_bytes
    if cfg.check:
        metrics.check_passed = passed
    if cfg.metrics_dir:
        write_metrics(metrics, cfg.metrics_dir)
    return metrics
