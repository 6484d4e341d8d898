#!/usr/bin/env python3
"""
Test value types and their invariants
"""
import pytest

from ragsched.domain import (
    GiB, DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, Request,
    RequestTrace, ensure_valid, is_valid, validate,
)
from ragsched.errors import ConfigError
from ragsched.presets import DB_256G, MODEL_70B, MODEL_8B, PF_HIGH, PF_LOW, get_preset, preset_names


def test_presets_are_valid():
    for preset in (PF_HIGH, PF_LOW, MODEL_8B, MODEL_70B, DB_256G):
        assert validate(preset) == []


def test_database_load_time_derived_from_disk_link():
    assert DB_256G.load_seconds_per_partition == pytest.approx(4.0)
    assert DB_256G.total_bytes == 256 * GiB


def test_weight_fractions_must_sum_to_one():
    cfg = PlacementConfig(0.5, 0.3, 0.1, 1.0, 0.0, 0.0, 0, 1)
    problems = validate(cfg)
    assert len(problems) == 1
    assert problems[0].field == "w_gpu+w_cpu+w_disk"
    assert "sum 0.9 ≠ 1" in problems[0].message


def test_every_violation_is_reported():
    hw = HardwareProfile(gpu_mem=0, cpu_mem=-1, disk_capacity=GiB, bw_gpu_cpu=0.0,
                         bw_cpu_disk=1.0, jitter_sigma=-0.1)
    fields = {v.field for v in validate(hw)}
    assert fields == {"gpu_mem", "cpu_mem", "bw_gpu_cpu", "jitter_sigma"}


def test_partition_count_checked_against_database():
    cfg = PlacementConfig.from_split(0.5, 0.5, 1.0, 0.0, 40, 8)
    assert is_valid(cfg)
    assert [v.field for v in validate(cfg, DB_256G)] == ["resident_partitions"]


def test_from_split_derives_disk_share():
    cfg = PlacementConfig.from_split(0.1, 0.7, 0.25, 0.5, 3, 16)
    assert cfg.w_disk == pytest.approx(0.2)
    assert cfg.c_disk == pytest.approx(0.25)
    assert cfg.offloaded_weight_fraction == pytest.approx(0.9)


def test_from_split_absorbs_rounding_noise():
    cfg = PlacementConfig.from_split(0.7, 0.3 + 1e-15, 0.0, 1.0, 0, 1)
    assert cfg.w_disk == 0.0
    assert is_valid(cfg)


def test_placement_dict_round_trip():
    cfg = PlacementConfig.from_split(0.15, 0.85, 0.2, 0.8, 16, 16)
    assert PlacementConfig.from_dict(cfg.to_dict()) == cfg


def test_request_and_trace_validation():
    assert not is_valid(Request(0, -1.0))
    assert not is_valid(Request(0, float("nan")))
    assert not is_valid(Request(0, 1.0, top_k=0))
    trace = RequestTrace(0, 1.0, 2.0, 1.5, 1.2, 4.0)
    assert [v.field for v in validate(trace)] == ["retrieval_end", "generation_start"]


def test_trace_breakdown_sums_to_latency():
    trace = RequestTrace(3, 1.0, 2.0, 4.0, 5.5, 9.0)
    assert trace.waiting == pytest.approx(2.5)
    assert trace.retrieval == pytest.approx(2.0)
    assert trace.generation == pytest.approx(3.5)
    assert trace.waiting + trace.retrieval + trace.generation == pytest.approx(trace.latency)
    assert trace.completion == 9.0


def test_model_footprint_helpers():
    assert MODEL_70B.kv_cache_bytes(16) == 5 * GiB
    assert MODEL_70B.workspace_bytes(16) == 2 * GiB
    assert MODEL_70B.per_layer_weight == pytest.approx(140 * GiB / 80)


def test_time_scaling():
    hw = PF_HIGH.scaled(60)
    assert hw.bw_gpu_cpu == pytest.approx(PF_HIGH.bw_gpu_cpu * 60)
    assert hw.gpu_mem == PF_HIGH.gpu_mem
    model = MODEL_70B.scaled(60)
    assert model.compute_prefill_per_layer == pytest.approx(0.0175 / 60)
    db = DB_256G.scaled(60)
    assert db.load_seconds_per_partition == pytest.approx(4.0 / 60)


def test_ensure_valid_raises_config_error():
    with pytest.raises(ConfigError) as info:
        ensure_valid(DatabaseProfile(0, GiB, 1.0, 1.0), "database")
    assert info.value.exit_code == 2
    assert "num_partitions" in str(info.value)


def test_validate_rejects_unknown_types():
    with pytest.raises(TypeError):
        validate(object())


def test_preset_lookup():
    assert get_preset("PF-High", HardwareProfile) is PF_HIGH
    assert "model-70b" in preset_names(ModelProfile)
    with pytest.raises(ConfigError):
        get_preset("pf-high", ModelProfile)
    with pytest.raises(ConfigError):
        get_preset("nope")
