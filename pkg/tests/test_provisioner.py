"""Scaling policy arithmetic and the control loop under a simulated clock."""

from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lambdapack.provisioner import (
    PoolState,
    ScalingPolicy,
    SimLauncher,
    control_step,
    desired_launches,
)


class Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


class TestDesiredLaunches:
    def test_headline_formula(self):
        # 100 pending, 40 running, sf=0.5, width=1 -> 100*0.5 - 40 = 10
        policy = ScalingPolicy(sf=0.5, pipeline_width=1, max_workers=1000)
        assert desired_launches(100, 40, 0, policy) == 10

    def test_no_pending_no_launches(self):
        policy = ScalingPolicy(sf=0.5)
        assert desired_launches(0, 17, 0, policy) == 0

    def test_pipeline_width_divides_demand(self):
        policy = ScalingPolicy(sf=0.5, pipeline_width=2, max_workers=1000)
        assert desired_launches(100, 40, 0, policy) == 0  # ceil(25) - 40 < 0
        assert desired_launches(100, 10, 0, policy) == 15

    def test_booting_counts_toward_target(self):
        policy = ScalingPolicy(sf=0.5, max_workers=1000)
        assert desired_launches(100, 40, 10, policy) == 0

    def test_cap(self):
        policy = ScalingPolicy(sf=1, max_workers=8)
        assert desired_launches(100, 5, 1, policy) == 2

    def test_fractional_sf_ceils(self):
        policy = ScalingPolicy(sf=Fraction(1, 3), max_workers=1000)
        assert desired_launches(4, 0, 0, policy) == 2  # ceil(4/3)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            desired_launches(-1, 0, 0, ScalingPolicy())

    @given(
        st.integers(min_value=0, max_value=500),
        st.integers(min_value=0, max_value=500),
        st.integers(min_value=0, max_value=100),
        st.integers(min_value=0, max_value=100),
    )
    def test_monotone_in_pending(self, p1, p2, running, booting):
        policy = ScalingPolicy(sf=0.5, max_workers=64)
        lo, hi = sorted((p1, p2))
        assert desired_launches(lo, running, booting, policy) <= desired_launches(
            hi, running, booting, policy
        )

    @given(st.integers(min_value=0, max_value=1000), st.integers(min_value=0, max_value=200))
    def test_never_exceeds_cap(self, pending, running):
        policy = ScalingPolicy(sf=1, max_workers=32)
        n = desired_launches(pending, running, 0, policy)
        assert running + n <= max(32, running)


class TestControlLoop:
    def test_equilibrium_under_held_queue(self):
        clock = Clock()
        policy = ScalingPolicy(sf=0.5, period=1.0, startup_latency=1.5, max_workers=64)
        launcher = SimLauncher(policy.startup_latency, clock)
        pool = PoolState()
        for _ in range(5):
            control_step(lambda: 40, launcher, policy, pool, clock())
            clock.t += policy.period
        running, booting = launcher.counts()
        assert abs(running - 20) <= 1 and booting == 0

    def test_drain_to_zero_launches_nothing(self):
        clock = Clock()
        policy = ScalingPolicy(sf=0.5, period=1.0, startup_latency=0.5)
        launcher = SimLauncher(policy.startup_latency, clock)
        pool = PoolState()
        control_step(lambda: 10, launcher, policy, pool, clock())
        clock.t += 2.0
        for _ in range(3):
            launched = control_step(lambda: 0, launcher, policy, pool, clock())
            assert launched == 0
            clock.t += 1.0
        # scale-down is worker-side; the provisioner merely stops launching
        assert launcher.counts()[0] == 5

    def test_replenish_after_kill(self):
        clock = Clock()
        policy = ScalingPolicy(sf=1, period=1.0, startup_latency=1.0, max_workers=64)
        launcher = SimLauncher(policy.startup_latency, clock)
        pool = PoolState()
        control_step(lambda: 10, launcher, policy, pool, clock())
        clock.t += 1.5
        assert launcher.counts() == (10, 0)
        launcher.kill(8)
        t_kill = clock.t
        clock.t += policy.period  # next control step
        control_step(lambda: 10, launcher, policy, pool, clock())
        running, booting = launcher.counts()
        assert running + booting == 10  # replenished (booting) within one period
        assert clock.t - t_kill <= policy.startup_latency + policy.period

    def test_timeline_records_samples(self):
        clock = Clock()
        policy = ScalingPolicy(sf=0.5, period=1.0, startup_latency=0.0)
        launcher = SimLauncher(0.0, clock)
        pool = PoolState()
        for depth in (10, 5, 0):
            control_step(lambda: depth, launcher, policy, pool, clock())
            clock.t += 1.0
        assert [s[1] for s in pool.timeline] == [10, 5, 0]
        assert [s[0] for s in pool.timeline] == [0.0, 1.0, 2.0]
