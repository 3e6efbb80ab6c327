"""Pure scheduling cores: batch formation and autoscaling decisions are
deterministic functions; properties are checked over randomized traces."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from modelhub.gateway import (
    BatchPolicy,
    ScalePolicy,
    ScaleState,
    autoscale_step,
    form_batches,
)


def trace(arrival_times):
    return [(t, f"job-{i}") for i, t in enumerate(arrival_times)]


class TestFormBatchesExamples:
    def test_ten_simultaneous_b8_w50(self):
        # Hand simulation: the first eight fill a batch at t=0; the leftover
        # two wait out the window and dispatch at t=50.
        batches = form_batches(trace([0] * 10), BatchPolicy(max_batch=8, window_ms=50))
        assert [len(b.jobs) for b in batches] == [8, 2]
        assert batches[0].dispatch_ms == 0
        assert batches[1].dispatch_ms == 50

    def test_single_arrival_waits_out_window(self):
        batches = form_batches(trace([100]), BatchPolicy(max_batch=8, window_ms=50))
        assert len(batches) == 1
        assert batches[0].jobs == ("job-0",)
        assert batches[0].dispatch_ms == 150

    def test_b1_degenerate(self):
        arrivals = trace([0, 0, 3, 7, 7])
        batches = form_batches(arrivals, BatchPolicy(max_batch=1, window_ms=50))
        assert [len(b.jobs) for b in batches] == [1] * 5
        for (t, _), b in zip(arrivals, batches):
            assert b.dispatch_ms == t  # immediate dispatch

    def test_window_expiry_splits(self):
        batches = form_batches(trace([0, 10, 60, 61]),
                               BatchPolicy(max_batch=8, window_ms=50))
        assert [len(b.jobs) for b in batches] == [2, 2]
        assert batches[0].dispatch_ms == 50
        assert batches[1].dispatch_ms == 110

    def test_arrival_exactly_at_window_edge_starts_new_batch(self):
        batches = form_batches(trace([0, 50]), BatchPolicy(max_batch=8, window_ms=50))
        assert [len(b.jobs) for b in batches] == [1, 1]

    def test_empty(self):
        assert form_batches([], BatchPolicy()) == []


def assert_batch_invariants(arrivals, batches, policy):
    flattened = [job for b in batches for job in b.jobs]
    # Conservation + FIFO: concatenation reproduces the arrival order.
    assert flattened == [job for _, job in arrivals]
    arrival_of = {job: t for t, job in arrivals}
    for b in batches:
        assert 1 <= len(b.jobs) <= policy.max_batch
        assert b.first_arrival_ms == arrival_of[b.jobs[0]]
        # Window bound: nothing waits past first arrival + window.
        assert b.dispatch_ms <= b.first_arrival_ms + policy.window_ms
        for job in b.jobs:
            assert arrival_of[job] <= b.dispatch_ms


class TestFormBatchesProperties:
    def test_randomized_traces(self):
        rng = random.Random(42)
        for _ in range(1000):
            n = rng.randint(0, 60)
            times = sorted(rng.randint(0, 500) for _ in range(n))
            policy = BatchPolicy(max_batch=rng.randint(1, 10),
                                 window_ms=rng.randint(0, 80))
            arrivals = trace(times)
            batches = form_batches(arrivals, policy)
            assert_batch_invariants(arrivals, batches, policy)

    @given(times=st.lists(st.integers(0, 1000), max_size=50).map(sorted),
           max_batch=st.integers(1, 12), window_ms=st.integers(0, 100))
    @settings(max_examples=200, deadline=None)
    def test_property_search(self, times, max_batch, window_ms):
        policy = BatchPolicy(max_batch=max_batch, window_ms=window_ms)
        arrivals = trace(times)
        batches = form_batches(arrivals, policy)
        assert_batch_invariants(arrivals, batches, policy)

    def test_deterministic(self):
        arrivals = trace([0, 5, 5, 20, 90, 91])
        policy = BatchPolicy(max_batch=3, window_ms=25)
        assert form_batches(arrivals, policy) == form_batches(arrivals, policy)


POLICY = ScalePolicy(min_replicas=1, max_replicas=4, q_hi=4.0, q_lo=0.5,
                     sustain_ms=3000, cooldown_ms=10000)


def run_trace(depths, policy=POLICY, replicas=1, step_ms=1000):
    """Feed a depth trace through the pure scaler, acting on each target."""
    state = ScaleState()
    now = 0
    decisions = []
    for depth in depths:
        target, state = autoscale_step(now, depth, replicas, policy, state)
        decisions.append(target)
        replicas = target
        now += step_ms
    return decisions


class TestAutoscaleExamples:
    def test_idle_at_min_stays(self):
        target, _ = autoscale_step(0, 0.0, 1, POLICY, ScaleState())
        assert target == 1

    def test_sustained_high_scales_up(self):
        # depth 2*q_hi for longer than sustain_ms: scale up exactly once,
        # then hold through the cooldown.
        decisions = run_trace([8.0] * 8)
        assert decisions[:3] == [1, 1, 1]   # sustain clock still running
        assert decisions[3] == 2            # 3000 ms sustained at t=3000
        assert all(d == 2 for d in decisions[4:])  # cooldown holds

    def test_at_max_any_load(self):
        state = ScaleState()
        target, _ = autoscale_step(0, 1e9, POLICY.max_replicas, POLICY, state)
        assert target == POLICY.max_replicas

    def test_sustained_low_scales_down(self):
        # Each step requires its own full sustain window: down at t=2000,
        # then the clock restarts and the next step lands at t=5000.
        policy = ScalePolicy(min_replicas=1, max_replicas=4, q_hi=4.0, q_lo=0.5,
                             sustain_ms=2000, cooldown_ms=0)
        decisions = run_trace([0.0] * 6, policy=policy, replicas=3)
        assert decisions == [3, 3, 2, 2, 2, 1]

    def test_mid_band_resets_sustain_clock(self):
        decisions = run_trace([8.0, 8.0, 2.0, 8.0, 8.0, 8.0, 8.0])
        assert decisions[:6] == [1, 1, 1, 1, 1, 1]
        assert decisions[6] == 2  # the clock restarted at index 3


class TestAutoscaleProperties:
    def test_replay_determinism_and_clamping(self):
        rng = random.Random(99)
        for _ in range(100):
            n = rng.randint(1, 80)
            depths = [rng.uniform(0, 12) for _ in range(n)]
            policy = ScalePolicy(
                min_replicas=rng.randint(1, 2),
                max_replicas=rng.randint(3, 6),
                q_hi=4.0, q_lo=0.5,
                sustain_ms=rng.choice([0, 500, 3000]),
                cooldown_ms=rng.choice([0, 1000, 10000]))
            start = rng.randint(policy.min_replicas, policy.max_replicas)
            first = run_trace(depths, policy=policy, replicas=start)
            second = run_trace(depths, policy=policy, replicas=start)
            assert first == second
            assert all(policy.min_replicas <= t <= policy.max_replicas for t in first)

    def test_single_step_changes_by_at_most_one(self):
        rng = random.Random(5)
        state = ScaleState()
        replicas = 2
        now = 0
        for _ in range(500):
            depth = rng.uniform(0, 10)
            target, state = autoscale_step(now, depth, replicas, POLICY, state)
            assert abs(target - replicas) <= 1
            replicas = target
            now += rng.randint(50, 2000)


class TestPolicyValidation:
    def test_bad_batch_policy(self):
        with pytest.raises(ValueError):
            BatchPolicy(max_batch=0)
        with pytest.raises(ValueError):
            BatchPolicy(window_ms=-1)

    def test_bad_scale_policy(self):
        with pytest.raises(ValueError):
            ScalePolicy(min_replicas=5, max_replicas=2)
        with pytest.raises(ValueError):
            ScalePolicy(q_lo=5.0, q_hi=4.0)
