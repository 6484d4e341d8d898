#!/usr/bin/env python3
"""
Test quantity parsing, YAML profiles and experiment files
"""
import json
import textwrap
from pathlib import Path

import pytest

from ragsched.config import (
    from_config_dict, load_experiment, load_profile, read_config, write_config,
)
from ragsched.domain import GiB, MiB, DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig
from ragsched.errors import ConfigError
from ragsched.presets import DB_256G, MODEL_70B, PF_HIGH, PF_LOW
from ragsched.prefetch_timeline import PrefetchMode
from ragsched.scheduler import choose_retrieval_batch
from ragsched.settings import DEFAULTS, load_settings
from ragsched.simulator import SimConfig, SimMode
from ragsched.units import format_bytes, parse_bandwidth, parse_bytes, parse_duration, parse_rate


@pytest.mark.parametrize("text,expected", [
    ("24GiB", 24 * GiB), ("512 MiB", 512 * MiB), ("1.5GiB", 3 * GiB // 2),
    ("2GB", 2 * 10 ** 9), (1024, 1024), ("4096", 4096),
])
def test_parse_bytes(text, expected):
    assert parse_bytes(text) == expected


def test_parse_rates_durations_bandwidths():
    assert parse_rate("4/min") == pytest.approx(4 / 60)
    assert parse_rate("30/h") == pytest.approx(30 / 3600)
    assert parse_rate("0.5/s") == 0.5
    assert parse_duration("20min") == 1200.0
    assert parse_duration("1h") == 3600.0
    assert parse_duration(90) == 90.0
    assert parse_bandwidth("16 GiB/s") == 16.0 * GiB
    assert format_bytes(24 * GiB) == "24.00 GiB"


@pytest.mark.parametrize("bad", ["12 parsecs", "GiB", "", "-3GiB"])
def test_parse_bytes_rejects_garbage(bad):
    with pytest.raises(ConfigError):
        parse_bytes(bad)


def test_parse_rate_rejects_unknown_unit():
    with pytest.raises(ConfigError):
        parse_rate("4/fortnight")
    with pytest.raises(ConfigError):
        parse_rate("many/min")


def test_hardware_from_mapping_with_units():
    hw = from_config_dict(HardwareProfile, {
        "gpu_mem": "24GiB", "cpu_mem": "256GiB", "disk_capacity": "8TiB",
        "bw_gpu_cpu": "16GiB/s", "bw_cpu_disk": "2GiB/s", "name": "box",
    })
    assert hw.gpu_mem == 24 * GiB
    assert hw.bw_cpu_disk == 2.0 * GiB


def test_unknown_keys_and_bad_values_are_rejected():
    with pytest.raises(ConfigError):
        from_config_dict(DatabaseProfile, {"num_partitions": 4, "partition_bytes": "1GiB",
                                           "search_seconds_per_partition": 1,
                                           "load_seconds_per_partition": 1, "colour": "red"})
    with pytest.raises(ConfigError) as info:
        from_config_dict(DatabaseProfile, {"num_partitions": 0, "partition_bytes": "1GiB",
                                           "search_seconds_per_partition": 1,
                                           "load_seconds_per_partition": 1})
    assert "num_partitions" in str(info.value)


def test_database_load_time_needs_hardware():
    data = {"num_partitions": 8, "partition_bytes": "4GiB", "search_seconds_per_partition": 1}
    with pytest.raises(ConfigError):
        from_config_dict(DatabaseProfile, data)
    db = from_config_dict(DatabaseProfile, data, PF_LOW)
    assert db.load_seconds_per_partition == pytest.approx(4 / 1.5)


def test_profile_file_round_trip(tmp_path):
    path = tmp_path / "model.yaml"
    write_config(MODEL_70B, path)
    assert read_config(path, ModelProfile) == MODEL_70B


def test_placement_file_derives_disk_shares(tmp_path):
    path = tmp_path / "placement.yaml"
    path.write_text("w_gpu: 0.1\nw_cpu: 0.6\nc_gpu: 0.5\nc_cpu: 0.5\n"
                    "resident_partitions: 2\ngen_batch_size: 8\n")
    cfg = read_config(path, PlacementConfig)
    assert cfg.w_disk == pytest.approx(0.3)
    assert cfg.c_disk == 0.0


def test_placement_with_wrong_sum_is_rejected(tmp_path):
    path = tmp_path / "placement.yaml"
    path.write_text("w_gpu: 0.5\nw_cpu: 0.3\nw_disk: 0.1\nc_gpu: 1\nc_cpu: 0\n"
                    "resident_partitions: 0\ngen_batch_size: 1\n")
    with pytest.raises(ConfigError) as info:
        read_config(path, PlacementConfig)
    assert "≠ 1" in str(info.value)


def test_malformed_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("gpu_mem: [1, 2\n")
    with pytest.raises(ConfigError):
        read_config(path, HardwareProfile)


def test_preset_reference():
    assert load_profile("preset:pf-high", HardwareProfile) is PF_HIGH
    db = load_profile("preset:db-256g", DatabaseProfile, hw=PF_LOW)
    assert db.load_seconds_per_partition == pytest.approx(8 / 1.5)


def write_experiment(tmp_path, body):
    path = tmp_path / "experiment.yaml"
    path.write_text(textwrap.dedent(body))
    return path


def test_experiment_with_presets_and_scaling(tmp_path):
    path = write_experiment(tmp_path, """
        name: reference
        hardware: preset:pf-high
        model: preset:model-70b
        database: preset:db-256g
        intervals:
          - {duration: 20min, rate: 4/min}
          - {duration: 20min, rate: 8/min}
        prefetch_mode: next_layer
        time_scale: 60
        serial_window: 4min
    """)
    spec = load_experiment(path)
    assert spec.prefetch_mode is PrefetchMode.NEXT_LAYER
    assert spec.schedule.intervals == ((1200.0, 4 / 60), (1200.0, 8 / 60))
    assert spec.output_dir == tmp_path / "runs" / "reference"

    scaled = spec.scaled()
    assert scaled.time_scale == 1.0
    assert scaled.schedule.intervals[0] == pytest.approx((20.0, 4.0))
    assert scaled.serial_window == pytest.approx(4.0)
    assert scaled.database.load_seconds_per_partition == pytest.approx(4.0 / 60)


def test_experiment_relative_profile_paths(tmp_path):
    write_config(PF_LOW, tmp_path / "hw.yaml")
    path = write_experiment(tmp_path, """
        hardware: hw.yaml
        model: preset:model-8b
        database: {num_partitions: 4, partition_bytes: 1GiB, search_seconds_per_partition: 0.5}
        intervals: "600:2/min"
    """)
    spec = load_experiment(path)
    assert spec.hardware == PF_LOW
    assert spec.database.load_seconds_per_partition == pytest.approx(1 / 1.5)


def test_experiment_needs_arrivals(tmp_path):
    path = write_experiment(tmp_path, """
        hardware: preset:pf-high
        model: preset:model-70b
        database: preset:db-256g
    """)
    with pytest.raises(ConfigError):
        load_experiment(path)


def test_experiment_rejects_bad_fields(tmp_path):
    path = write_experiment(tmp_path, """
        hardware: preset:pf-high
        model: preset:model-70b
        database: preset:db-256g
        intervals: "600:2/min"
        time_scale: 0
        modes: [pipelined, turbo]
    """)
    with pytest.raises(ConfigError) as info:
        load_experiment(path)
    assert "time_scale" in str(info.value)
    assert "modes" in str(info.value)


def test_settings_overlay(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"GRID_STEP": 0.1}))
    values = load_settings(path)
    assert values["GRID_STEP"] == 0.1
    assert values["BATCH_CANDIDATES"] == DEFAULTS["BATCH_CANDIDATES"]
    assert DEFAULTS["GRID_STEP"] == 0.05

    path.write_text(json.dumps({"GRID_STPE": 0.1}))
    with pytest.raises(ConfigError):
        load_settings(path)


SCENARIOS = Path(__file__).parent.parent / "scenarios"


def test_shipped_scenarios_match_presets():
    reference = load_experiment(SCENARIOS / "reference.yaml")
    assert (reference.hardware, reference.model) == (PF_HIGH, MODEL_70B)
    assert reference.schedule.expected_count() == pytest.approx(800.0)
    assert reference.time_scale == 60.0

    from_files = load_experiment(SCENARIOS / "reference-files.yaml")
    assert from_files.hardware == PF_LOW
    assert from_files.model == MODEL_70B
    assert from_files.database.num_partitions == 32
    assert from_files.schedule == reference.schedule

    placement = read_config(SCENARIOS / "placements" / "pf-high-b64.yaml", PlacementConfig)
    assert placement.w_disk == 0.0
    assert placement.gen_batch_size == 64


def test_settings_are_read_when_defaults_are_needed(tmp_path, monkeypatch):
    monkeypatch.setitem(DEFAULTS, "SERIAL_WINDOW_SECONDS", 60.0)
    monkeypatch.setitem(DEFAULTS, "MAX_RETRIEVAL_BATCH", 4)
    monkeypatch.setitem(DEFAULTS, "PREFETCH_MODE", "next_layer")
    monkeypatch.setitem(DEFAULTS, "DEFAULT_TOP_K", 3)
    path = write_experiment(tmp_path, """
        hardware: preset:pf-high
        model: preset:model-70b
        database: preset:db-256g
        intervals: "600:2/min"
    """)
    spec = load_experiment(path)
    assert spec.serial_window == 60.0
    assert spec.max_retrieval_batch == 4
    assert spec.prefetch_mode is PrefetchMode.NEXT_LAYER
    assert spec.top_k == 3

    cfg = SimConfig(mode=SimMode.SERIAL, hw=PF_HIGH, model=MODEL_70B, db=DB_256G)
    assert (cfg.serial_window, cfg.max_retrieval_batch) == (60.0, 4)
    assert cfg.prefetch_mode is PrefetchMode.NEXT_LAYER
    assert choose_retrieval_batch(10) == 4
