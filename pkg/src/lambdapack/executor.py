"""The stateless worker.

A worker polls the queue, runs each task through read -> compute -> write,
publishes the completion, enqueues newly-ready children, and only then
deletes the message, so a crash after any prefix is healed by lease-lapse
redelivery. Up to pipeline_width tasks are in flight per worker with
compute serialized (single-core model), overlapping the store I/O of
distinct tasks. A background thread renews every held lease; renewals are
refused past the runtime-limit cap so a wedged worker eventually loses its
tasks to someone else.

Workers share nothing: all state flows through the queue, state store, and
object store handles in WorkerServices.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable

from . import kernels
from .analysis import AnalysisContext
from .control_plane import (
    QueueClosedError,
    Receipt,
    StateStore,
    TaskMessage,
    TaskQueue,
    record_completion,
)
from .lang.ast import Program
from .lang.iteration import NodeRef, node_reads, node_scalar_args, node_writes
from .store import MissingTileError, ObjectStore, Tile, TileKey, WriteConflictError

CUT_POINTS = ("read", "compute", "write", "record", "enqueue")


class WorkerKilled(Exception):
    """Injected crash: the worker stops dead, renewing and deleting nothing."""


@dataclass
class WorkerConfig:
    lease_length: float = 10.0
    renew_interval: float | None = None  # defaults to lease_length / 3
    pipeline_width: int = 1
    runtime_limit: float = 300.0
    poll_interval: float = 0.05
    idle_timeout: float = 10.0
    retry_cap: int = 10

    def __post_init__(self):
        if self.renew_interval is None:
            self.renew_interval = self.lease_length / 3.0
        if self.renew_interval >= self.lease_length:
            raise ValueError("renew_interval must be shorter than lease_length")
        if self.pipeline_width < 1:
            raise ValueError("pipeline_width must be >= 1")

    @property
    def max_renewals(self) -> int:
        return max(0, int(self.runtime_limit / self.lease_length))


def should_self_terminate(
    cfg: WorkerConfig, elapsed: float, idle_duration: float, headroom: float = 0.0
) -> bool:
    """True when the worker is near its runtime limit or has idled out."""
    return elapsed >= cfg.runtime_limit - headroom or idle_duration >= cfg.idle_timeout


@dataclass
class TaskEvent:
    run_id: str
    node: str
    phase: str
    t_start: float
    t_end: float
    bytes_read: int = 0
    bytes_written: int = 0
    flops: int = 0


@dataclass
class WorkerServices:
    """Everything a worker may touch; workers hold no other state."""

    program: Program
    params: dict[str, int]
    run_id: str
    queue: TaskQueue
    state: StateStore
    store: ObjectStore
    analysis: AnalysisContext
    shape_rules: dict[str, Callable[[tuple[int, ...]], tuple[int, int]]] | None = None
    sink: Callable[[str, TaskEvent], None] | None = None
    fault: object | None = None  # duck-typed FaultController
    compute_delay_s: float = 0.0


@dataclass
class ExitReport:
    worker_id: str
    reason: str
    tasks_completed: int
    t_start: float
    t_end: float
    bytes_read: int = 0
    bytes_written: int = 0


@dataclass
class _Slot:
    msg: TaskMessage
    receipt: Receipt
    received_at: float
    renewals: int = 0
    next_renew: float = 0.0
    lost: bool = False
    finished: bool = False
    thread: threading.Thread | None = None


class Worker:
    """One stateless executor; run() is the worker loop."""

    def __init__(
        self,
        worker_id: str,
        cfg: WorkerConfig,
        services: WorkerServices,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.worker_id = worker_id
        self.index = int(worker_id[1:]) if worker_id[1:].isdigit() else -1
        self.cfg = cfg
        self.services = services
        self.clock = clock
        self.killed = threading.Event()
        self.stop = threading.Event()
        self.frozen_until = 0.0  # stall injection: no renewals, no progress
        self.tasks_completed = 0
        self.bytes_read = 0
        self.bytes_written = 0
        self._durations: list[float] = []
        self._slots: list[_Slot] = []
        self._slots_lock = threading.Lock()
        self._compute_lock = threading.Lock()
        self.exit_report: ExitReport | None = None

    # -- crash / fault plumbing

    def _check_alive(self):
        if self.killed.is_set():
            raise WorkerKilled(self.worker_id)

    def _cut(self, node: NodeRef, step: str):
        self._check_alive()
        fault = self.services.fault
        if fault is not None and fault.should_die(self.worker_id, node, step):
            self.killed.set()
            raise WorkerKilled(f"{self.worker_id} at {step}")

    def _headroom(self) -> float:
        if not self._durations:
            return 0.0
        ordered = sorted(self._durations)
        p95 = ordered[min(len(ordered) - 1, int(0.95 * len(ordered)))]
        return 2.0 * p95

    # -- task execution

    def execute_task(self, msg: TaskMessage, receipt: Receipt) -> None:
        """The ordered steps; every prefix-crash is recoverable by redelivery."""
        svc = self.services
        node = msg.node
        ctx = svc.program.line(node.line_id)
        t0 = self.clock()

        # read
        tiles = []
        read_bytes = 0
        for matrix, idx in self._tiles_of(node, reads=True):
            self._check_alive()
            tile = svc.store.get_tile(TileKey(svc.run_id, matrix, idx))
            self._check_shape(matrix, idx, tile)
            read_bytes += tile.nbytes
            tiles.append(tile)
        self.bytes_read += read_bytes
        t1 = self.clock()
        self._emit(node, "read", t0, t1, bytes_read=read_bytes)
        self._cut(node, "read")

        # compute (serialized per worker: single-core model)
        scalars = node_scalar_args(svc.program, node, svc.params)
        if svc.fault is not None:
            stall = svc.fault.stall_duration(self.index)
            if stall > 0:
                self.frozen_until = max(self.frozen_until, self.clock() + stall)
        with self._compute_lock:
            self._stall_if_frozen()
            t2 = self.clock()
            if svc.compute_delay_s:
                time.sleep(svc.compute_delay_s)
            out_tile = kernels.run_kernel(ctx.call.kernel, tiles, scalars)
            t3 = self.clock()
        flops = kernels.REGISTRY[ctx.call.kernel].flops([t.data.shape for t in tiles])
        self._emit(node, "compute", t2, t3, flops=flops)
        self._cut(node, "compute")

        # write
        t4 = self.clock()
        write_bytes = 0
        outs = list(self._tiles_of(node, reads=False))
        for matrix, idx in outs:
            self._check_alive()
            svc.store.put_tile(TileKey(svc.run_id, matrix, idx), out_tile)
            write_bytes += out_tile.nbytes
        self.bytes_written += write_bytes
        t5 = self.clock()
        self._emit(node, "write", t4, t5, bytes_written=write_bytes)
        self._cut(node, "write")

        # record completion (atomic state update)
        ready = record_completion(
            svc.state, node, svc.analysis.children, svc.analysis.parent_count
        )
        self._cut(node, "record")

        # enqueue newly-ready children
        for child in ready:
            self._check_alive()
            self._enqueue_child(child)
        self._cut(node, "enqueue")

        # delete last: stale delete just means someone else finished it
        svc.queue.delete(receipt)
        t6 = self.clock()
        self._emit(node, "finalize", t5, t6)

    def _enqueue_child(self, child: NodeRef):
        svc = self.services
        dup = 1
        if svc.fault is not None:
            dup = max(1, int(svc.fault.enqueue_copies(child)))
        try:
            for _ in range(dup):
                svc.queue.enqueue(TaskMessage(node=child, run_id=svc.run_id))
        except QueueClosedError:
            return
        svc.state.mark_enqueued(child)

    def _tiles_of(self, node: NodeRef, *, reads: bool):
        fn = node_reads if reads else node_writes
        return fn(self.services.program, node, self.services.params)

    def _check_shape(self, matrix: str, idx, tile: Tile):
        rules = self.services.shape_rules
        if not rules or matrix not in rules:
            return
        expected = rules[matrix](idx)
        if (tile.rows, tile.cols) != tuple(expected):
            raise WriteConflictError(
                f"{matrix}[{idx}] has shape {tile.rows}x{tile.cols}, expected {expected}"
            )

    def _stall_if_frozen(self):
        now = self.clock()
        if now < self.frozen_until:
            time.sleep(self.frozen_until - now)

    def _emit(self, node: NodeRef, phase: str, t0: float, t1: float, **kw):
        sink = self.services.sink
        if sink is not None:
            sink(
                self.worker_id,
                TaskEvent(self.services.run_id, str(node), phase, t0, t1, **kw),
            )

    # -- slot lifecycle

    def _run_slot(self, slot: _Slot):
        svc = self.services
        try:
            self.execute_task(slot.msg, slot.receipt)
            self.tasks_completed += 1
            self._durations.append(self.clock() - slot.received_at)
        except WorkerKilled:
            self.killed.set()
        except MissingTileError as e:
            # producer tile not visible yet: transient unless it keeps happening
            if slot.msg.delivery_count >= self.cfg.retry_cap:
                svc.state.abort(
                    f"missing input {e} for {slot.msg.node} after "
                    f"{slot.msg.delivery_count} deliveries"
                )
            slot.lost = True  # stop renewing; lease lapse requeues the task
        except kernels.KernelError as e:
            svc.state.mark_failed(slot.msg.node, str(e))
            svc.state.abort(f"kernel failure at {slot.msg.node}: {e}")
        except WriteConflictError as e:
            svc.state.abort(f"single-assignment violation: {e}")
        except QueueClosedError:
            pass
        finally:
            slot.finished = True

    def _renew_loop(self):
        cfg = self.cfg
        while not self.stop.is_set() and not self.killed.is_set():
            time.sleep(min(0.005, cfg.renew_interval / 4))
            now = self.clock()
            if now < self.frozen_until:  # a stalled worker renews nothing
                continue
            with self._slots_lock:
                slots = list(self._slots)
            for slot in slots:
                if slot.finished or slot.lost or now < slot.next_renew:
                    continue
                if slot.renewals >= cfg.max_renewals:
                    slot.lost = True  # policy: give the task up to someone else
                    continue
                try:
                    slot.receipt = self.services.queue.renew_lease(
                        slot.receipt, cfg.lease_length
                    )
                    slot.renewals += 1
                    slot.next_renew = now + cfg.renew_interval
                except Exception:
                    slot.lost = True

    def run(self) -> ExitReport:
        """Poll, pipeline, renew; exit near the runtime limit or after idling."""
        cfg = self.cfg
        svc = self.services
        start = self.clock()
        last_found = start
        reason = "stopped"
        renewer = threading.Thread(target=self._renew_loop, daemon=True)
        renewer.start()
        draining = False
        try:
            while True:
                if self.killed.is_set():
                    reason = "killed"
                    break
                now = self.clock()
                with self._slots_lock:
                    self._slots = [s for s in self._slots if not s.finished]
                    active = len(self._slots)
                if self.stop.is_set() or svc.state.aborted or svc.queue.closed:
                    draining, reason = True, "shutdown"
                if not draining and should_self_terminate(
                    cfg, now - start, now - last_found, self._headroom()
                ):
                    draining = True
                    reason = (
                        "idle-timeout"
                        if now - last_found >= cfg.idle_timeout
                        else "runtime-limit"
                    )
                if draining:
                    if active == 0:
                        break
                    time.sleep(cfg.poll_interval / 4)
                    continue
                if active < cfg.pipeline_width and now >= self.frozen_until:
                    got = svc.queue.receive(cfg.lease_length)
                    if got is not None:
                        msg, receipt = got
                        last_found = self.clock()
                        slot = _Slot(
                            msg,
                            receipt,
                            last_found,
                            next_renew=last_found + cfg.renew_interval,
                        )
                        slot.thread = threading.Thread(
                            target=self._run_slot, args=(slot,), daemon=True
                        )
                        with self._slots_lock:
                            self._slots.append(slot)
                        slot.thread.start()
                        continue
                time.sleep(cfg.poll_interval)
        finally:
            self.stop.set()
        end = self.clock()
        self.exit_report = ExitReport(
            self.worker_id,
            reason,
            self.tasks_completed,
            start,
            end,
            self.bytes_read,
            self.bytes_written,
        )
        return self.exit_report


def worker_loop(
    worker_id: str, cfg: WorkerConfig, services: WorkerServices
) -> ExitReport:
    return Worker(worker_id, cfg, services).run()
