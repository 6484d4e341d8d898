"""
Placement feasibility across GPU, host memory and disk, enumeration of
feasible placements over a grid, and the lazy transfer cost of moving from
one placement to another.

Weight and cache fractions apply uniformly to every layer. For transfers a
placement is laid out on the unit interval of the weight tensor: GPU holds
[0, w_gpu), host memory [w_gpu, w_gpu + w_cpu) and disk the rest.
"""
import logging
from dataclasses import dataclass, asdict
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ragsched.domain import (
    FRACTION_TOLERANCE, KiB, DatabaseProfile, HardwareProfile, ModelProfile,
    PlacementConfig,
)

logger = logging.getLogger(__name__)

# Host bytes kept free when filling, so float rounding never tips a fill over capacity
FILL_GUARD_BYTES = KiB

Interval = Tuple[float, float]
OffloadHistory = Tuple[Interval, ...]

TIERS = ("gpu", "cpu", "disk")


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    gpu_used: float
    cpu_used: float
    disk_used: float
    gpu_slack: float
    cpu_slack: float
    disk_slack: float

    def binding(self) -> Optional[str]:
        """Tightest violated device, or None when feasible"""
        slacks = {"gpu": self.gpu_slack, "cpu": self.cpu_slack, "disk": self.disk_slack}
        violated = {k: v for k, v in slacks.items() if v < 0}
        if not violated:
            return None
        return min(violated, key=violated.get)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TransferPlan:
    bytes_gpu_cpu: float
    bytes_cpu_disk: float
    first_time_disk_offload: float
    duration: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


NO_TRANSFER = TransferPlan(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PlacementGrid:
    """Grid of candidate placements; enumeration is lexicographic by (B, P, w_gpu, c_gpu)"""
    w_gpu_steps: Tuple[float, ...]
    c_gpu_steps: Tuple[float, ...]
    partitions: Tuple[int, ...]
    batches: Tuple[int, ...]

    @classmethod
    def default(cls, db: DatabaseProfile, step: float = 0.05,
                max_batch: int = 128) -> "PlacementGrid":
        steps = fraction_steps(step)
        batches = []
        b = 1
        while b <= max_batch:
            batches.append(b)
            b *= 2
        return cls(steps, steps, tuple(range(db.num_partitions + 1)), tuple(batches))

    @property
    def size(self) -> int:
        return (len(self.w_gpu_steps) * len(self.c_gpu_steps)
                * len(self.partitions) * len(self.batches))


def fraction_steps(step: float) -> Tuple[float, ...]:
    """0, step, 2*step, ..., 1 rounded to clean decimals"""
    count = int(round(1.0 / step))
    return tuple(float(v) for v in np.round(np.linspace(0.0, 1.0, count + 1), 10))


def check_feasible(cfg: PlacementConfig, hw: HardwareProfile, model: ModelProfile,
                   db: Optional[DatabaseProfile] = None) -> FeasibilityReport:
    """Evaluate the three capacity inequalities; without db partitions are not counted"""
    weights = model.weight_total
    cache = model.kv_cache_bytes(cfg.gen_batch_size)
    workspace = model.workspace_bytes(cfg.gen_batch_size)

    resident = cached = 0
    if db is not None:
        resident = cfg.resident_partitions * db.partition_bytes
        cached = (db.num_partitions - cfg.resident_partitions) * db.partition_bytes

    gpu_used = cfg.w_gpu * weights + cfg.c_gpu * cache + workspace
    cpu_used = cfg.w_cpu * weights + cfg.c_cpu * cache + resident
    disk_used = cfg.w_disk * weights + cfg.c_disk * cache + cached

    gpu_slack = hw.gpu_mem - gpu_used
    cpu_slack = hw.cpu_mem - cpu_used
    disk_slack = hw.disk_capacity - disk_used
    return FeasibilityReport(
        feasible=gpu_slack >= 0 and cpu_slack >= 0 and disk_slack >= 0,
        gpu_used=gpu_used, cpu_used=cpu_used, disk_used=disk_used,
        gpu_slack=gpu_slack, cpu_slack=cpu_slack, disk_slack=disk_slack,
    )


def fill_placement(w_gpu: float, c_gpu: float, resident_partitions: int, batch: int,
                   hw: HardwareProfile, model: ModelProfile,
                   db: DatabaseProfile) -> PlacementConfig:
    """
    Complete a GPU split: host memory left after the resident partitions takes
    the weight remainder first, then the cache remainder; disk takes the rest.
    The result is not checked for feasibility.
    """
    cpu_free = hw.cpu_mem - resident_partitions * db.partition_bytes - FILL_GUARD_BYTES

    w_rest = max(0.0, 1.0 - w_gpu)
    w_cpu = min(w_rest, max(0.0, cpu_free) / model.weight_total)
    cpu_free -= w_cpu * model.weight_total

    c_rest = max(0.0, 1.0 - c_gpu)
    cache = model.kv_cache_bytes(batch)
    if cache > 0:
        c_cpu = min(c_rest, max(0.0, cpu_free) / cache)
    else:
        c_cpu = c_rest
    return PlacementConfig.from_split(w_gpu, w_cpu, c_gpu, c_cpu, resident_partitions, batch)


def enumerate_feasible(hw: HardwareProfile, model: ModelProfile, db: DatabaseProfile,
                       grid: PlacementGrid) -> List[PlacementConfig]:
    """Every grid point whose filled placement passes check_feasible"""
    found = []
    for batch in sorted(grid.batches):
        for partitions in sorted(grid.partitions):
            for w_gpu in sorted(grid.w_gpu_steps):
                for c_gpu in sorted(grid.c_gpu_steps):
                    cfg = fill_placement(w_gpu, c_gpu, partitions, batch, hw, model, db)
                    if check_feasible(cfg, hw, model, db).feasible:
                        found.append(cfg)
    logger.debug(f"{len(found)} of {grid.size} grid points feasible")
    return found


def spills_to_disk(cfg: PlacementConfig) -> bool:
    return cfg.w_disk > FRACTION_TOLERANCE or cfg.c_disk > FRACTION_TOLERANCE


def most_resident(hw: HardwareProfile, model: ModelProfile, db: DatabaseProfile,
                  batch: int, resident_partitions: int, step: float = 0.05,
                  allow_disk: bool = True) -> Optional[PlacementConfig]:
    """
    Feasible placement with the lexicographically largest (w_gpu, c_gpu) on
    the step grid, or None. allow_disk=False also requires weights and cache
    to stay off disk.
    """
    steps = fraction_steps(step)
    for w_gpu in reversed(steps):
        for c_gpu in reversed(steps):
            cfg = fill_placement(w_gpu, c_gpu, resident_partitions, batch, hw, model, db)
            if not allow_disk and spills_to_disk(cfg):
                continue
            if check_feasible(cfg, hw, model, db).feasible:
                return cfg
    return None


def baseline_placement(hw: HardwareProfile, model: ModelProfile, db: DatabaseProfile,
                       batch: int, step: float = 0.05) -> Optional[PlacementConfig]:
    """
    Static placement for the serial baseline: the most GPU-resident split with
    weights and cache kept off disk and as many resident partitions as fit.
    Falls back to allowing disk spill with no resident partitions.
    """
    for partitions in range(db.num_partitions, -1, -1):
        cfg = most_resident(hw, model, db, batch, partitions, step, allow_disk=False)
        if cfg is not None:
            return cfg
    return most_resident(hw, model, db, batch, 0, step)


def diagnose(hw: HardwareProfile, model: ModelProfile, db: DatabaseProfile,
             batch: int, step: float = 0.05) -> str:
    """Name the constraint that rules out every placement at batch size `batch`"""
    workspace = model.workspace_bytes(batch)
    if workspace > hw.gpu_mem:
        return "GPU constraint binding at workspace"
    if db.total_bytes > hw.cpu_mem + hw.disk_capacity:
        return "CPU+disk constraint binding at database"
    footprint = model.weight_total + model.kv_cache_bytes(batch) + db.total_bytes
    if footprint > hw.cpu_mem + hw.disk_capacity + (hw.gpu_mem - workspace):
        return "CPU+disk constraint binding at total footprint"
    return f"GPU constraint binding at weights (no {step:g} grid step fits)"


# Transfer planning

def tier_intervals(cfg: PlacementConfig) -> Dict[str, Interval]:
    gpu_end = cfg.w_gpu
    cpu_end = min(1.0, cfg.w_gpu + cfg.w_cpu)
    return {"gpu": (0.0, gpu_end), "cpu": (gpu_end, cpu_end), "disk": (cpu_end, 1.0)}


def _overlap(a: Interval, b: Interval) -> Interval:
    return (max(a[0], b[0]), min(a[1], b[1]))


def _length(span: Interval) -> float:
    return max(0.0, span[1] - span[0])


def _merge(spans: Iterable[Interval]) -> OffloadHistory:
    merged: List[List[float]] = []
    for start, end in sorted(s for s in spans if s[1] > s[0]):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return tuple((s, e) for s, e in merged)


def _uncovered(span: Interval, history: Sequence[Interval]) -> float:
    """Length of span not already covered by history"""
    covered = sum(_length(_overlap(span, h)) for h in _merge(history))
    return max(0.0, _length(span) - covered)


def record_offload(history: Iterable[Interval], cfg: PlacementConfig) -> OffloadHistory:
    """History extended with the weight range cfg keeps on disk"""
    return _merge(list(history) + [tier_intervals(cfg)["disk"]])


def plan_transfer(old: PlacementConfig, new: PlacementConfig, hw: HardwareProfile,
                  model: ModelProfile, db: DatabaseProfile,
                  disk_resident_history: Iterable[Interval] = ()) -> TransferPlan:
    """
    Bytes each link carries to move from old to new. Weight ranges already
    written to disk are reused instead of rewritten; the KV cache is rebuilt
    rather than moved; every partition loaded or released costs one
    partition of host-disk traffic.
    """
    if old == new:
        return NO_TRANSFER

    history = tuple(disk_resident_history)
    weights = model.weight_total
    before, after = tier_intervals(old), tier_intervals(new)

    gpu_cpu = cpu_disk = first_write = 0.0
    for src in TIERS:
        for dst in TIERS:
            if src == dst:
                continue
            span = _overlap(before[src], after[dst])
            moved = _length(span) * weights
            if moved <= 0:
                continue
            if "gpu" in (src, dst) and "cpu" in (src, dst):
                gpu_cpu += moved
            elif "cpu" in (src, dst):
                # host <-> disk
                if dst == "disk":
                    fresh = _uncovered(span, history) * weights
                    cpu_disk += fresh
                    first_write += fresh
                else:
                    cpu_disk += moved
            else:
                # gpu <-> disk routes through host memory
                gpu_cpu += moved
                if dst == "disk":
                    fresh = _uncovered(span, history) * weights
                    cpu_disk += fresh
                    first_write += fresh
                else:
                    cpu_disk += moved

    cpu_disk += abs(new.resident_partitions - old.resident_partitions) * db.partition_bytes

    duration = gpu_cpu / hw.bw_gpu_cpu + cpu_disk / hw.bw_cpu_disk
    return TransferPlan(gpu_cpu, cpu_disk, first_write, duration)
