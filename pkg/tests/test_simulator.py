#!/usr/bin/env python3
"""
Test the discrete-event replay in pipelined and serial modes
"""
from dataclasses import replace

import numpy as np
import pytest

from conftest import requests_at
from ragsched.cost_model import CostModelFit
from ragsched.domain import GiB, PlacementConfig, Request, is_valid
from ragsched.errors import ConfigError, SimulationError
from ragsched.scheduler import PolicyEntry, PolicyTable
from ragsched.simulator import (
    BatchPolicy, SimConfig, SimMode, batch_seed, largest_serial_batch, run, serial_placement,
)
from ragsched.workload import IntervalSchedule


def config(one_layer, mode, **overrides):
    hw, model, db, _, policy = one_layer
    values = dict(mode=mode, hw=hw, model=model, db=db, policy=policy, batch_candidates=(1,),
                  serial_batch_size=1)
    values.update(overrides)
    return SimConfig(**values)


def test_pipelined_overlaps_retrieval_and_generation(one_layer):
    outcome = run(requests_at(0.0, 1.0), config(one_layer, SimMode.PIPELINED))
    first, second = outcome.traces
    assert (first.retrieval_start, first.retrieval_end) == (0.0, 2.0)
    assert (first.generation_start, first.generation_end) == (2.0, 5.0)
    assert (second.retrieval_start, second.retrieval_end) == (2.0, 4.0)
    assert (second.generation_start, second.generation_end) == (5.0, 8.0)
    assert outcome.stats.makespan == pytest.approx(8.0)


def test_serial_runs_one_batch_at_a_time(one_layer):
    outcome = run(requests_at(0.0, 1.0), config(one_layer, SimMode.SERIAL))
    first, second = outcome.traces
    assert first.generation_end == pytest.approx(5.0)
    assert (second.retrieval_start, second.generation_end) == (5.0, 10.0)
    assert outcome.stats.makespan == pytest.approx(10.0)


def test_every_request_is_traced_in_order(one_layer):
    workload = requests_at(0.0, 0.0, 0.5, 3.0, 9.0)
    for mode in SimMode:
        outcome = run(workload, config(one_layer, mode))
        assert [t.request_id for t in outcome.traces] == [0, 1, 2, 3, 4]
        assert all(is_valid(t) for t in outcome.traces)
        for trace in outcome.traces:
            assert trace.waiting + trace.retrieval + trace.generation == pytest.approx(trace.latency)


def test_retrieval_drains_queue_greedily(one_layer):
    outcome = run(requests_at(0.0, 0.5, 0.6, 0.7), config(one_layer, SimMode.PIPELINED))
    batches = [t.retrieval_batch for t in outcome.traces]
    assert batches == [0, 1, 1, 1]
    capped = run(requests_at(0.0, 0.5, 0.6, 0.7),
                 config(one_layer, SimMode.PIPELINED, max_retrieval_batch=2))
    assert [t.retrieval_batch for t in capped.traces] == [0, 1, 1, 2]


def test_events_are_logged_in_time_order(one_layer):
    outcome = run(requests_at(0.0, 1.0), config(one_layer, SimMode.PIPELINED))
    times = [e.time for e in outcome.events]
    assert times == sorted(times)
    kinds = {e.kind for e in outcome.events}
    assert {"arrived", "retrieval_batched", "retrieval_done", "generation_batched",
            "done"} <= kinds
    assert outcome.events[0].to_dict() == {"time": 0.0, "event": "arrived", "ids": [0]}


def test_replay_is_deterministic(one_layer):
    workload = requests_at(0.0, 0.2, 0.4, 5.0)
    first = run(workload, config(one_layer, SimMode.PIPELINED))
    second = run(workload, config(one_layer, SimMode.PIPELINED))
    assert first.traces == second.traces
    assert first.events == second.events
    assert first.workload_digest == second.workload_digest


def test_empty_workload(one_layer):
    outcome = run([], config(one_layer, SimMode.PIPELINED))
    assert outcome.traces == []
    assert outcome.stats.count == 0


def test_reconfiguration_is_charged_up_front(tiny_hw, tiny_model, tiny_db):
    small = PlacementConfig.from_split(0.5, 0.5, 1.0, 0.0, 2, 2)
    large = PlacementConfig.from_split(0.25, 0.75, 1.0, 0.0, 1, 4)
    policy = PolicyTable([PolicyEntry(1, 1, small, CostModelFit(1.0, 0.1)),
                          PolicyEntry(2, None, large, CostModelFit(1.0, 0.1))])
    cfg = SimConfig(mode=SimMode.PIPELINED, hw=tiny_hw, model=tiny_model, db=tiny_db,
                    policy=policy, batch_candidates=(1, 2, 4))
    outcome = run(requests_at(0.0, 0.0, 0.0), cfg)

    reconfigured = [e for e in outcome.events if e.kind == "reconfigured"]
    assert reconfigured
    # 2 GiB of weights leave the GPU over a 1 GiB/s link
    assert reconfigured[0].payload["duration"] == pytest.approx(2.0)
    assert reconfigured[0].payload["resident"] == 1
    generation = [e for e in outcome.events if e.kind == "generation_batched"]
    assert generation[0].payload["start"] == pytest.approx(generation[0].time + 2.0)
    assert [d.placement for d in outcome.decisions] == [large]


def test_partition_loads_delay_retrieval(tiny_hw, tiny_model, tiny_db):
    low = PlacementConfig.from_split(0.5, 0.5, 1.0, 0.0, 1, 2)
    high = PlacementConfig.from_split(0.5, 0.5, 1.0, 0.0, 3, 2)
    policy = PolicyTable([PolicyEntry(1, 1, low, CostModelFit(1.0, 0.1)),
                          PolicyEntry(2, None, high, CostModelFit(1.0, 0.1))])
    cfg = SimConfig(mode=SimMode.PIPELINED, hw=tiny_hw, model=tiny_model, db=tiny_db,
                    policy=policy, batch_candidates=(1, 2))
    outcome = run(requests_at(0.0, 0.0, 100.0), cfg)
    loaded = [e for e in outcome.events if e.kind == "partitions_loaded"]
    assert loaded
    assert loaded[0].payload["count"] == 2
    assert loaded[0].payload["duration"] == pytest.approx(4.0)
    last = outcome.traces[2]
    assert last.retrieval_start == pytest.approx(104.0)


def test_fixed_max_uses_largest_entry_and_pads(tiny_hw, tiny_model, tiny_db):
    small = PlacementConfig.from_split(0.5, 0.5, 1.0, 0.0, 2, 1)
    large = PlacementConfig.from_split(0.25, 0.75, 1.0, 0.0, 2, 8)
    policy = PolicyTable([PolicyEntry(1, 4, small, CostModelFit(1.0, 0.1)),
                          PolicyEntry(5, None, large, CostModelFit(1.0, 0.1))])
    base = dict(mode=SimMode.PIPELINED, hw=tiny_hw, model=tiny_model, db=tiny_db,
                policy=policy, batch_candidates=(1, 8))
    adaptive = run(requests_at(0.0), SimConfig(**base))
    fixed = run(requests_at(0.0), SimConfig(batch_policy=BatchPolicy.FIXED_MAX, **base))
    assert [d.placement for d in fixed.decisions] == [large]
    assert fixed.decisions[0].chosen_batch == 8
    assert fixed.decisions[0].taken == 1
    assert fixed.traces[0].generation > adaptive.traces[0].generation


def test_serial_batch_follows_the_arrival_rate(tiny_hw, tiny_model, tiny_db):
    schedule = IntervalSchedule.of([(10.0, 0.5), (10.0, 1.0)])
    cfg = SimConfig(mode=SimMode.SERIAL, hw=tiny_hw, model=tiny_model, db=tiny_db,
                    schedule=schedule, serial_window=4.0)
    assert largest_serial_batch(cfg) == 4
    placement = serial_placement(cfg)
    assert placement.gen_batch_size == 4
    outcome = run([Request(i, 0.0) for i in range(6)], cfg)
    # rate 0.5/s over a 4 s window: batches of two
    assert [d.taken for d in outcome.decisions][0] == 2


def test_memory_peaks_are_tracked(one_layer):
    outcome = run(requests_at(0.0), config(one_layer, SimMode.PIPELINED))
    assert outcome.peak_gpu == pytest.approx(GiB)
    assert outcome.peak_cpu == pytest.approx(GiB)
    assert outcome.capacities["gpu"] == 100 * GiB


@pytest.mark.parametrize("overrides", [
    {"policy": None},
    {"policy": PolicyTable([])},
    {"max_retrieval_batch": 0},
])
def test_invalid_pipelined_config(one_layer, overrides):
    with pytest.raises(ConfigError):
        run(requests_at(0.0), config(one_layer, SimMode.PIPELINED, **overrides))


def test_policy_with_gaps_is_rejected(one_layer):
    _, _, _, placement, _ = one_layer
    gappy = PolicyTable([PolicyEntry(1, 2, placement, CostModelFit(3.0, 0.0)),
                         PolicyEntry(4, None, placement, CostModelFit(3.0, 0.0))])
    with pytest.raises(ConfigError):
        run(requests_at(0.0), config(one_layer, SimMode.PIPELINED, policy=gappy))


def test_infeasible_policy_entry_fails_before_replay(one_layer):
    _, _, _, placement, _ = one_layer
    huge = PolicyTable([PolicyEntry(1, None, placement.with_partitions(200),
                                    CostModelFit(3.0, 0.0))])
    with pytest.raises(SimulationError):
        run(requests_at(0.0), config(one_layer, SimMode.PIPELINED, policy=huge))


def test_bad_workloads_are_rejected(one_layer):
    cfg = config(one_layer, SimMode.SERIAL)
    with pytest.raises(ConfigError):
        run([Request(0, 0.0), Request(0, 1.0)], cfg)
    with pytest.raises(ConfigError):
        run([Request(0, -1.0)], cfg)
    with pytest.raises(ConfigError):
        run(requests_at(0.0), config(one_layer, SimMode.SERIAL, serial_batch_size=None))


def test_batch_seeds_are_independent():
    seeds = {batch_seed(7, stream, index) for stream in (1, 2) for index in range(50)}
    assert len(seeds) == 100
    assert batch_seed(7, 2, 3) == batch_seed(7, 2, 3)


STAGES = ["arrived", "retrieval_batched", "retrieval_done", "generation_batched", "done"]


@pytest.mark.parametrize("mode", list(SimMode))
def test_each_request_moves_through_the_stages_in_order(one_layer, mode):
    rng = np.random.default_rng(3)
    workload = requests_at(*np.sort(rng.uniform(0.0, 20.0, 12)))
    outcome = run(workload, config(one_layer, mode, batch_candidates=(1, 2, 4),
                                   serial_batch_size=3))
    seen = {r.id: [] for r in workload}
    for event in outcome.events:
        for request_id in event.payload.get("ids", []):
            seen[request_id].append((event.kind, event.time))
    for request_id, stages in seen.items():
        assert [kind for kind, _ in stages] == STAGES
        times = [t for _, t in stages]
        assert times == sorted(times)


def serial_completions(arrivals, batch_size, batch_seconds):
    """Completion times when each batch takes the arrived requests, oldest first"""
    done, free, i = [], 0.0, 0
    while i < len(arrivals):
        start = max(free, arrivals[i])
        batch = [t for t in arrivals[i:i + batch_size] if t <= start]
        free = start + batch_seconds
        done.extend([free] * len(batch))
        i += len(batch)
    return done


def test_serial_latency_matches_batch_recurrence(one_layer):
    _, _, _, placement, _ = one_layer
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        arrivals = sorted(float(t) for t in rng.uniform(0.0, 12.0, n))
        cfg = config(one_layer, SimMode.SERIAL, serial_batch_size=None, serial_window=4.0,
                     schedule=IntervalSchedule.of([(1000.0, 0.5)]),
                     serial_placement=placement.with_batch(8))
        outcome = run(requests_at(*arrivals), cfg)
        # retrieval 2 s then generation 3 s, whatever the batch size
        expected = serial_completions(arrivals, 2, 5.0)
        assert len(outcome.decisions) <= 5
        assert [t.generation_end for t in outcome.traces] == pytest.approx(expected)
        average = float(np.mean([c - a for c, a in zip(expected, arrivals)]))
        assert outcome.stats.average == pytest.approx(average)


def test_memory_check_sees_the_batch_that_runs(one_layer):
    hw, model, db, placement, _ = one_layer
    heavy = replace(model, kv_bytes_per_request=GiB, workspace_bytes_per_request=GiB)
    policy = PolicyTable([PolicyEntry(1, None, placement, CostModelFit(3.0, 0.0))])
    cfg = SimConfig(mode=SimMode.PIPELINED, hw=hw, model=heavy, db=db, policy=policy,
                    batch_candidates=(1, 32))
    outcome = run(requests_at(*[0.0] * 32), cfg)
    assert [d.taken for d in outcome.decisions] == [32]
    # 1 GiB of weights plus 32 GiB of cache and 32 GiB of workspace
    assert outcome.peak_gpu == pytest.approx(65 * GiB)


def two_partition_scenario(tiny_hw, tiny_model, tiny_db, cpu_mem):
    hw = replace(tiny_hw, cpu_mem=cpu_mem)
    db = replace(tiny_db, num_partitions=2)
    searching = PlacementConfig.from_split(0.5, 0.5, 1.0, 0.0, 2, 2)
    lean = PlacementConfig.from_split(0.25, 0.75, 1.0, 0.0, 0, 2)
    policy = PolicyTable([PolicyEntry(1, 1, searching, CostModelFit(1.0, 0.1)),
                          PolicyEntry(2, None, lean, CostModelFit(1.0, 0.1))])
    return SimConfig(mode=SimMode.PIPELINED, hw=hw, model=tiny_model, db=db, policy=policy,
                     batch_candidates=(1, 2))


@pytest.mark.parametrize("cpu_mem,generation_start", [(100 * GiB, 4.0), (13 * GiB, 6.0)])
def test_partitions_are_released_between_retrieval_batches(tiny_hw, tiny_model, tiny_db,
                                                           cpu_mem, generation_start):
    cfg = two_partition_scenario(tiny_hw, tiny_model, tiny_db, cpu_mem)
    outcome = run(requests_at(0.0, 0.0, 0.5), cfg)

    retrievals = [e.payload for e in outcome.events if e.kind == "retrieval_batched"]
    assert [(r["start"], r["end"], r["resident"]) for r in retrievals] == [
        (0.0, 2.0, 2), (2.0, 4.0, 2)]
    released = [e for e in outcome.events if e.kind == "partitions_released"]
    assert [(e.time, e.payload["count"]) for e in released] == [(4.0, 2)]
    for event in released:
        assert not any(r["start"] < event.time < r["end"] for r in retrievals)

    first = [e.payload for e in outcome.events if e.kind == "generation_batched"][0]
    assert first["start"] == pytest.approx(generation_start)
    assert outcome.peak_cpu <= cpu_mem
