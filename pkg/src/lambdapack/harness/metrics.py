"""Run measurement collection and CSV export.

Schemas (documented, fixed):
  events.csv    run_id,node,phase,t_start,t_end,bytes_read,bytes_written,flops
  workers.csv   worker_id,reason,tasks_completed,t_start,t_end,bytes_read,bytes_written
  timeline.csv  t,pending,running,booting
  floprate.csv  t,flops_per_s
  summary.csv   key,value rows: completion_time, core_seconds, tasks_completed,
                bytes_read, bytes_written, exit_status
"""

from __future__ import annotations

import csv
import os
import threading
from dataclasses import dataclass, field

from ..executor import ExitReport, TaskEvent


class MetricsSink:
    """Thread-safe collector the workers and supervisor write into."""

    def __init__(self):
        self._lock = threading.Lock()
        self.events: list[tuple[str, TaskEvent]] = []
        self.exits: list[ExitReport] = []

    def task_event(self, worker_id: str, ev: TaskEvent) -> None:
        with self._lock:
            self.events.append((worker_id, ev))

    def worker_exit(self, report: ExitReport) -> None:
        with self._lock:
            self.exits.append(report)


@dataclass
class RunMetrics:
    """Per-run measurements; core_seconds counts compute-phase time only."""

    run_id: str
    completion_time: float = 0.0
    core_seconds: float = 0.0
    tasks_completed: int = 0
    bytes_read: int = 0
    bytes_written: int = 0
    events: list[tuple[str, TaskEvent]] = field(default_factory=list)
    exits: list[ExitReport] = field(default_factory=list)
    timeline: list[tuple[float, int, int, int]] = field(default_factory=list)
    worker_seconds: float = 0.0
    store_bytes_read: int = 0
    store_bytes_written: int = 0
    check_passed: bool | None = None
    output_bytes: bytes = b""
    aborted: str | None = None
    kill_times: list[float] = field(default_factory=list)

    @classmethod
    def from_run(cls, run_id: str, sink: MetricsSink, timeline, t0: float, t1: float):
        m = cls(run_id)
        m.completion_time = t1 - t0
        m.events = list(sink.events)
        m.exits = list(sink.exits)
        m.timeline = list(timeline)
        m.core_seconds = sum(
            ev.t_end - ev.t_start for _, ev in m.events if ev.phase == "compute"
        )
        m.worker_seconds = sum(r.t_end - r.t_start for r in m.exits)
        m.bytes_read = sum(r.bytes_read for r in m.exits)
        m.bytes_written = sum(r.bytes_written for r in m.exits)
        return m

    def flop_rate_timeline(self, bucket_s: float = 0.1) -> list[tuple[float, float]]:
        computes = [ev for _, ev in self.events if ev.phase == "compute"]
        if not computes:
            return []
        start = min(ev.t_start for ev in computes)
        end = max(ev.t_end for ev in computes)
        n = max(1, int((end - start) / bucket_s) + 1)
        buckets = [0.0] * n
        for ev in computes:
            # attribute flops uniformly across the compute interval
            span = max(ev.t_end - ev.t_start, 1e-9)
            b0 = int((ev.t_start - start) / bucket_s)
            b1 = int((ev.t_end - start) / bucket_s)
            for b in range(b0, min(b1, n - 1) + 1):
                lo = max(ev.t_start, start + b * bucket_s)
                hi = min(ev.t_end, start + (b + 1) * bucket_s)
                if hi > lo:
                    buckets[b] += ev.flops * (hi - lo) / span
        return [(round(b * bucket_s, 6), buckets[b] / bucket_s) for b in range(n)]


def write_metrics(metrics: RunMetrics, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "events.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["run_id", "node", "phase", "t_start", "t_end",
             "bytes_read", "bytes_written", "flops"]
        )
        for _, ev in metrics.events:
            w.writerow(
                [ev.run_id, ev.node, ev.phase, f"{ev.t_start:.6f}", f"{ev.t_end:.6f}",
                 ev.bytes_read, ev.bytes_written, ev.flops]
            )
    with open(os.path.join(out_dir, "workers.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["worker_id", "reason", "tasks_completed", "t_start", "t_end",
             "bytes_read", "bytes_written"]
        )
        for r in metrics.exits:
            w.writerow(
                [r.worker_id, r.reason, r.tasks_completed, f"{r.t_start:.6f}",
                 f"{r.t_end:.6f}", r.bytes_read, r.bytes_written]
            )
    with open(os.path.join(out_dir, "timeline.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "pending", "running", "booting"])
        for t, pending, running, booting in metrics.timeline:
            w.writerow([f"{t:.6f}", pending, running, booting])
    with open(os.path.join(out_dir, "floprate.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "flops_per_s"])
        for t, rate in metrics.flop_rate_timeline():
            w.writerow([f"{t:.6f}", f"{rate:.3f}"])
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["key", "value"])
        w.writerow(["run_id", metrics.run_id])
        w.writerow(["completion_time", f"{metrics.completion_time:.6f}"])
        w.writerow(["core_seconds", f"{metrics.core_seconds:.6f}"])
        w.writerow(["worker_seconds", f"{metrics.worker_seconds:.6f}"])
        w.writerow(["tasks_completed", metrics.tasks_completed])
        w.writerow(["bytes_read", metrics.bytes_read])
        w.writerow(["bytes_written", metrics.bytes_written])
        w.writerow(["check_passed", metrics.check_passed])
        w.writerow(["aborted", metrics.aborted or ""])
