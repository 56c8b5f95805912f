"""Fault injection for runs: worker kills, forced duplicates, stalls, cut kills.

Spec grammar for --fault (comma separated, all optional):

    kill:<fraction>@<pct>%      kill fraction of live workers at completion pct
    kill:<fraction>@<secs>s     ... at wall time after run start
    dup:all | dup:<line_id>     deliver matching tasks twice
    stall:w<index>@<secs>s      freeze worker #index for secs at its next compute
    cut:<node>@<step>           kill the executing worker right after step
                                (step in read|compute|write|record|enqueue)

A node in cut events is the canonical form, e.g. ``2:i=0,j=1,k=1``, or ``*``.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field

from ..executor import CUT_POINTS
from ..lang.iteration import NodeRef, format_node


@dataclass(frozen=True)
class KillEvent:
    fraction: float
    at_completion: float | None = None  # fraction of total tasks done
    at_time: float | None = None  # seconds after run start


@dataclass(frozen=True)
class DuplicateEvent:
    pattern: str  # "all" or str(line_id)


@dataclass(frozen=True)
class StallEvent:
    worker_index: int
    duration: float


@dataclass(frozen=True)
class CutEvent:
    node: str  # canonical node or "*"
    step: str
    times: int = 1


@dataclass
class FaultPlan:
    kills: list[KillEvent] = field(default_factory=list)
    duplicates: list[DuplicateEvent] = field(default_factory=list)
    stalls: list[StallEvent] = field(default_factory=list)
    cuts: list[CutEvent] = field(default_factory=list)

    def __bool__(self):
        return bool(self.kills or self.duplicates or self.stalls or self.cuts)


def _split_events(spec: str) -> list[str]:
    """Split on commas, except commas inside a node reference (a piece that
    does not start a new kill/dup/stall/cut event continues the previous)."""
    events: list[str] = []
    for piece in spec.split(","):
        piece = piece.strip()
        if not piece:
            continue
        head = piece.split(":", 1)[0]
        if head in ("kill", "dup", "stall", "cut") or not events:
            events.append(piece)
        else:
            events[-1] += "," + piece
    return events


def parse_fault_spec(spec: str) -> FaultPlan:
    plan = FaultPlan()
    for part in _split_events(spec):
        kind, _, rest = part.partition(":")
        if kind == "kill":
            frac_s, _, when = rest.partition("@")
            frac = float(frac_s)
            if not 0 <= frac <= 1:
                raise ValueError(f"kill fraction must be in [0,1]: {part!r}")
            if when.endswith("%"):
                plan.kills.append(KillEvent(frac, at_completion=float(when[:-1]) / 100))
            elif when.endswith("s"):
                plan.kills.append(KillEvent(frac, at_time=float(when[:-1])))
            else:
                raise ValueError(f"kill needs @<pct>%% or @<secs>s: {part!r}")
        elif kind == "dup":
            plan.duplicates.append(DuplicateEvent(rest or "all"))
        elif kind == "stall":
            who, _, dur = rest.partition("@")
            if not who.startswith("w") or not dur.endswith("s"):
                raise ValueError(f"stall needs stall:w<i>@<secs>s: {part!r}")
            plan.stalls.append(StallEvent(int(who[1:]), float(dur[:-1])))
        elif kind == "cut":
            node, _, step = rest.rpartition("@")
            if step not in CUT_POINTS:
                raise ValueError(f"cut step must be one of {CUT_POINTS}: {part!r}")
            plan.cuts.append(CutEvent(node, step))
        else:
            raise ValueError(f"unknown fault event {part!r}")
    return plan


class FaultController:
    """Run-scoped fault state shared by the supervisor and all workers.

    Workers ask should_die / stall_duration / enqueue_copies at well-defined
    points; the supervisor calls tick() to fire time- and progress-based
    kill events against the live worker set.
    """

    def __init__(self, plan: FaultPlan | None, seed: int = 0):
        self.plan = plan or FaultPlan()
        self.rng = random.Random(seed)
        self._lock = threading.Lock()
        self._fired_kills: set[int] = set()
        self._fired_cuts: dict[int, int] = {}
        self._fired_stalls: set[int] = set()
        self.kill_times: list[float] = []  # when each kill event actually fired

    # -- worker-side hooks

    def should_die(self, worker_id: str, node: NodeRef, step: str) -> bool:
        node_s = format_node(node)
        with self._lock:
            for i, cut in enumerate(self.plan.cuts):
                if self._fired_cuts.get(i, 0) >= cut.times:
                    continue
                if cut.step == step and cut.node in ("*", node_s):
                    self._fired_cuts[i] = self._fired_cuts.get(i, 0) + 1
                    return True
        return False

    def enqueue_copies(self, node: NodeRef) -> int:
        node_line = str(node.line_id)
        for d in self.plan.duplicates:
            if d.pattern in ("all", node_line):
                return 2
        return 1

    def stall_duration(self, worker_index: int) -> float:
        with self._lock:
            for i, s in enumerate(self.plan.stalls):
                if s.worker_index == worker_index and i not in self._fired_stalls:
                    self._fired_stalls.add(i)
                    return s.duration
        return 0.0

    # -- supervisor-side

    def tick(self, elapsed: float, completed: int, total: int, live_workers: list):
        """Fire due kill events; live_workers entries expose .killed (Event)."""
        for i, k in enumerate(self.plan.kills):
            with self._lock:
                if i in self._fired_kills:
                    continue
                due = (
                    k.at_time is not None
                    and elapsed >= k.at_time
                    or k.at_completion is not None
                    and total > 0
                    and completed >= k.at_completion * total
                )
                if not due:
                    continue
                self._fired_kills.add(i)
            victims = [w for w in live_workers if not w.killed.is_set()]
            n = round(k.fraction * len(victims))
            for w in self.rng.sample(victims, min(n, len(victims))):
                w.killed.set()
            self.kill_times.append(elapsed)
