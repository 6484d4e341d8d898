"""
Declared hardware, model and database presets.

Profiles are always declared, never detected: the two platforms mirror a
high-end desktop (24 GiB GPU) and a low-end one (12 GiB GPU); the models
are an 8B-class and a 70B-class LLM; the database is 32 partitions of 8 GiB.
"""
import logging
from typing import Dict, List, Union

from ragsched.domain import GiB, TiB, DatabaseProfile, HardwareProfile, ModelProfile

logger = logging.getLogger(__name__)

PF_HIGH = HardwareProfile(
    gpu_mem=24 * GiB,
    cpu_mem=256 * GiB,
    disk_capacity=8 * TiB,
    bw_gpu_cpu=16.0 * GiB,
    bw_cpu_disk=2.0 * GiB,
    gpu_layer_rate=1.0,
    jitter_sigma=0.05,
    name="pf-high",
)

PF_LOW = HardwareProfile(
    gpu_mem=12 * GiB,
    cpu_mem=176 * GiB,
    disk_capacity=2 * TiB,
    bw_gpu_cpu=8.0 * GiB,
    bw_cpu_disk=1.5 * GiB,
    gpu_layer_rate=1.3,
    jitter_sigma=0.05,
    name="pf-low",
)

MODEL_8B = ModelProfile(
    num_layers=32,
    weight_total=16 * GiB,
    kv_bytes_per_request=GiB // 8,
    workspace_bytes_per_request=GiB // 16,
    compute_prefill_per_layer=0.003,
    compute_decode_per_layer=0.0002,
    output_tokens=32,
    name="model-8b",
)

MODEL_70B = ModelProfile(
    num_layers=80,
    weight_total=140 * GiB,
    kv_bytes_per_request=5 * GiB // 16,
    workspace_bytes_per_request=GiB // 8,
    compute_prefill_per_layer=0.0175,
    compute_decode_per_layer=1.75e-5,
    output_tokens=32,
    name="model-70b",
)

# 32 x 8 GiB = 256 GiB; loads are bound by the PF-High host-disk link
DB_256G = DatabaseProfile.derived(
    num_partitions=32,
    partition_bytes=8 * GiB,
    search_seconds_per_partition=2.0,
    hw=PF_HIGH,
    name="db-256g",
)

PRESETS: Dict[str, Union[HardwareProfile, ModelProfile, DatabaseProfile]] = {
    p.name: p for p in (PF_HIGH, PF_LOW, MODEL_8B, MODEL_70B, DB_256G)
}


def preset_names(kind: type = object) -> List[str]:
    """Names of presets of the given profile type (all presets by default)"""
    return sorted(name for name, p in PRESETS.items() if isinstance(p, kind))


def get_preset(name: str, kind: type = object):
    """Look up a preset by name, optionally checking its profile type"""
    from ragsched.errors import ConfigError

    preset = PRESETS.get(name.strip().lower())
    if preset is None:
        raise ConfigError(f"Unknown preset '{name}' (known: {', '.join(preset_names())})")
    if not isinstance(preset, kind):
        raise ConfigError(f"Preset '{name}' is a {type(preset).__name__}, "
                          f"expected {kind.__name__}")
    logger.debug(f"Using preset {preset.name}")
    return preset
