"""Auto-scaling control loop.

Scale-up: each period the provisioner samples queue depth and launches
workers to close the gap ceil(sf * pending / pipeline_width) minus what is
already running or booting. Booting workers count toward the target so one
deep queue sample cannot trigger a launch storm. Scale-down is entirely
worker-side (idle timeout); the provisioner never kills anything.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable


@dataclass
class ScalingPolicy:
    sf: Fraction | float = 0.5
    pipeline_width: int = 1
    period: float = 1.0
    startup_latency: float = 10.0  # simulated worker boot time
    max_workers: int = 64

    def __post_init__(self):
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        if self.pipeline_width < 1:
            raise ValueError("pipeline_width must be >= 1")
        if not 0 < float(self.sf):
            raise ValueError("sf must be positive")


def desired_launches(
    pending: int, running: int, booting: int, policy: ScalingPolicy
) -> int:
    """max(0, ceil(sf * pending / width) - running - booting), capped.

    Example: 100 pending, 40 running, sf=0.5, width=1 -> 10 launches.
    """
    if min(pending, running, booting) < 0:
        raise ValueError("counts must be nonnegative")
    target = math.ceil(Fraction(policy.sf) * pending / policy.pipeline_width)
    want = max(0, target - running - booting)
    room = max(0, policy.max_workers - running - booting)
    return min(want, room)


@dataclass
class PoolState:
    """Counts plus a (time, pending, running, booting) timeline."""

    running: int = 0
    booting: int = 0
    timeline: list[tuple[float, int, int, int]] = field(default_factory=list)

    def sample(self, t: float, pending: int):
        self.timeline.append((t, pending, self.running, self.booting))


class WorkerLauncher:
    """What the provisioner drives; the harness provides the real one."""

    def launch(self, count: int) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def counts(self) -> tuple[int, int]:
        """(running, booting)."""
        raise NotImplementedError  # pragma: no cover


def control_step(
    depth_fn: Callable[[], int],
    launcher: WorkerLauncher,
    policy: ScalingPolicy,
    pool: PoolState,
    now: float,
) -> int:
    """One provisioner period: sample, compute, launch, record."""
    pending = depth_fn()
    running, booting = launcher.counts()
    n = desired_launches(pending, running, booting, policy)
    if n:
        launcher.launch(n)
        running, booting = launcher.counts()
    pool.running, pool.booting = running, booting
    pool.sample(now, pending)
    return n


class Provisioner(threading.Thread):
    """Periodic control loop running alongside the workers."""

    def __init__(
        self,
        depth_fn: Callable[[], int],
        launcher: WorkerLauncher,
        policy: ScalingPolicy,
        clock: Callable[[], float] = time.monotonic,
    ):
        super().__init__(daemon=True, name="provisioner")
        self.depth_fn = depth_fn
        self.launcher = launcher
        self.policy = policy
        self.clock = clock
        self.pool = PoolState()
        self._halt = threading.Event()

    def stop(self):
        self._halt.set()

    def run(self):
        while not self._halt.is_set():
            try:
                control_step(
                    self.depth_fn, self.launcher, self.policy, self.pool, self.clock()
                )
            except Exception:
                pass  # launch failures are retried next period
            self._halt.wait(self.policy.period)


class SimLauncher(WorkerLauncher):
    """Clock-driven launcher for policy simulations: workers 'boot' for
    startup_latency and then count as running until released."""

    def __init__(self, startup_latency: float, clock: Callable[[], float]):
        self.startup_latency = startup_latency
        self.clock = clock
        self._boots: list[float] = []  # ready times
        self._running = 0

    def launch(self, count: int) -> None:
        t = self.clock()
        self._boots.extend([t + self.startup_latency] * count)

    def _promote(self):
        now = self.clock()
        ready = [b for b in self._boots if b <= now]
        self._boots = [b for b in self._boots if b > now]
        self._running += len(ready)

    def counts(self) -> tuple[int, int]:
        self._promote()
        return self._running, len(self._boots)

    def kill(self, count: int):
        self._promote()
        self._running = max(0, self._running - count)
