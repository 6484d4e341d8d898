"""
Shared fixtures: tiny hand-checkable scenarios plus the 70B / PF-High
reference scenario compressed by a time scale of 60.
"""
import sys
from pathlib import Path

import pytest

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from ragsched.cost_model import CostModelFit
from ragsched.domain import (
    GiB, TiB, DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, Request,
)
from ragsched.presets import DB_256G, MODEL_70B, PF_HIGH
from ragsched.scheduler import PolicyEntry, PolicyTable, active_profile
from ragsched.workload import default_schedule, generate_poisson

TIME_SCALE = 60.0
REFERENCE_SEED = 7


@pytest.fixture
def tiny_hw():
    """Fast links, no jitter: timings are exact sums"""
    return HardwareProfile(gpu_mem=10 * GiB, cpu_mem=100 * GiB, disk_capacity=TiB,
                           bw_gpu_cpu=float(GiB), bw_cpu_disk=float(GiB), name="tiny")


@pytest.fixture
def tiny_model():
    return ModelProfile(num_layers=4, weight_total=8 * GiB, kv_bytes_per_request=GiB // 4,
                        workspace_bytes_per_request=GiB // 8, compute_prefill_per_layer=0.01,
                        compute_decode_per_layer=0.001, output_tokens=4, name="tiny")


@pytest.fixture
def tiny_db():
    return DatabaseProfile(num_partitions=4, partition_bytes=4 * GiB,
                           search_seconds_per_partition=1.0, load_seconds_per_partition=2.0,
                           name="tiny")


@pytest.fixture
def one_layer():
    """Single fully resident layer: a batch of any size takes exactly 3 s"""
    hw = HardwareProfile(gpu_mem=100 * GiB, cpu_mem=100 * GiB, disk_capacity=TiB,
                         bw_gpu_cpu=float(GiB), bw_cpu_disk=float(GiB))
    model = ModelProfile(num_layers=1, weight_total=GiB, kv_bytes_per_request=0,
                         workspace_bytes_per_request=0, compute_prefill_per_layer=0.0,
                         compute_decode_per_layer=3.0, output_tokens=1,
                         decode_batch_exponent=0.0)
    db = DatabaseProfile(num_partitions=1, partition_bytes=GiB,
                         search_seconds_per_partition=2.0, load_seconds_per_partition=5.0)
    placement = PlacementConfig.from_split(1.0, 0.0, 1.0, 0.0, 1, 1)
    policy = PolicyTable([PolicyEntry(1, None, placement, CostModelFit(3.0, 0.0))])
    return hw, model, db, placement, policy


def requests_at(*times):
    return [Request(i, float(t)) for i, t in enumerate(times)]


@pytest.fixture(scope="session")
def reference():
    """70B on PF-High with the default four-interval schedule, compressed 60x"""
    hw = PF_HIGH.scaled(TIME_SCALE)
    model = MODEL_70B.scaled(TIME_SCALE)
    db = DB_256G.scaled(TIME_SCALE)
    schedule = default_schedule().scaled(TIME_SCALE)
    workload = generate_poisson(schedule, REFERENCE_SEED)
    return hw, model, db, schedule, workload


@pytest.fixture(scope="session")
def reference_policy(reference):
    hw, model, db, _, _ = reference
    return active_profile(hw, model, db, seed=REFERENCE_SEED)
