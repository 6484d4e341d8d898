"""
Stage latency models.

Retrieval scans every partition per batch: resident partitions are searched
in place, the others are loaded then searched. Generation composes one
prefill step and output_tokens decode steps, each a layer timeline of
per-layer compute against per-layer transfer of the offloaded share.

Batch processing time is summarized as a power law T(B) = a * B**c fitted in
log-log space.
"""
import math
import logging
from dataclasses import dataclass, asdict
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ragsched.domain import DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig
from ragsched.errors import InfeasiblePlacementError, SchedulingError, UnderdeterminedFitError
from ragsched.memory_planner import check_feasible
from ragsched.prefetch_timeline import (
    LayerTimeline, Phase, PrefetchMode, queue_capacity, simulate_layer_timeline,
)

logger = logging.getLogger(__name__)

Sample = Tuple[int, float]


@dataclass(frozen=True)
class CostModelFit:
    """T(B) = a * B**c; residual is the RMS error in log space"""
    a: float
    c: float
    residual: float = 0.0
    sample_count: int = 0
    clamped: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CostModelFit":
        return cls(float(data["a"]), float(data["c"]), float(data.get("residual", 0.0)),
                   int(data.get("sample_count", 0)), bool(data.get("clamped", False)))


def predict(fit: CostModelFit, batch: float) -> float:
    return fit.a * batch ** fit.c


def fit_power_law(samples: Iterable[Sample]) -> CostModelFit:
    """
    Least-squares line through (log B, log T). A negative slope is clamped
    to 0 and the scale refitted as the geometric mean of T.
    """
    samples = list(samples)
    batches = np.array([b for b, _ in samples], dtype=float)
    times = np.array([t for _, t in samples], dtype=float)
    if len(np.unique(batches)) < 2:
        raise UnderdeterminedFitError(
            f"underdetermined fit: need 2 distinct batch sizes, got {sorted(set(batches.tolist()))}")
    if np.any(batches < 1) or np.any(times <= 0):
        raise UnderdeterminedFitError("power-law samples need B >= 1 and T > 0")

    log_b, log_t = np.log(batches), np.log(times)
    c, log_a = np.polyfit(log_b, log_t, 1)
    clamped = False
    if abs(c) < 1e-12:
        c = 0.0
    if c < 0:
        logger.warning(f"Power-law exponent {c:.4g} < 0 clamped to 0")
        c, log_a, clamped = 0.0, float(np.mean(log_t)), True
    residual = float(np.sqrt(np.mean((log_t - (log_a + c * log_b)) ** 2)))
    return CostModelFit(float(math.exp(log_a)), float(c), residual, len(samples), clamped)


def constant_fit(samples: Sequence[Sample]) -> CostModelFit:
    """Batch-independent cost from samples that share one batch size"""
    times = np.array([t for _, t in samples], dtype=float)
    return CostModelFit(float(np.exp(np.mean(np.log(times)))), 0.0, 0.0, len(samples))


def fit_samples(samples: Sequence[Sample]) -> CostModelFit:
    if len({b for b, _ in samples}) < 2:
        return constant_fit(samples)
    return fit_power_law(samples)


def retrieval_time(resident_partitions: int, db: DatabaseProfile) -> float:
    """Seconds per retrieval batch; independent of the batch size"""
    if not 0 <= resident_partitions <= db.num_partitions:
        raise SchedulingError(f"resident partitions must lie in [0, {db.num_partitions}], "
                              f"got {resident_partitions}")
    offloaded = db.num_partitions - resident_partitions
    return (resident_partitions * db.search_seconds_per_partition
            + offloaded * (db.load_seconds_per_partition + db.search_seconds_per_partition))


def layer_transfer_time(cfg: PlacementConfig, hw: HardwareProfile, model: ModelProfile) -> float:
    """Seconds to bring one layer's offloaded weights and KV share to the GPU"""
    weight = model.per_layer_weight * (
        cfg.w_cpu / hw.bw_gpu_cpu
        + cfg.w_disk * (1.0 / hw.bw_cpu_disk + 1.0 / hw.bw_gpu_cpu))
    kv_layer = model.kv_cache_bytes(cfg.gen_batch_size) / model.num_layers
    kv = model.kv_traffic_coefficient * (
        (cfg.c_cpu + cfg.c_disk) * kv_layer / hw.bw_gpu_cpu
        + cfg.c_disk * kv_layer / hw.bw_cpu_disk)
    return weight + kv


def layer_compute_time(cfg: PlacementConfig, hw: HardwareProfile, model: ModelProfile,
                       phase: Phase, prefill_scale: float = 1.0) -> float:
    """Jitter-free seconds of GPU compute per layer for one step of the batch"""
    batch = cfg.gen_batch_size
    if Phase(phase) is Phase.PREFILL:
        base = model.compute_prefill_per_layer * batch * prefill_scale
    else:
        base = model.compute_decode_per_layer * batch ** model.decode_batch_exponent
    return base * hw.gpu_layer_rate


def step_timeline(cfg: PlacementConfig, hw: HardwareProfile, model: ModelProfile,
                  phase: Phase, mode: PrefetchMode = PrefetchMode.CONTINUOUS,
                  prefill_scale: float = 1.0,
                  jitter: Optional[np.ndarray] = None) -> LayerTimeline:
    """Timeline of one prefill or decode step; jitter multiplies per-layer compute"""
    compute = np.full(model.num_layers, layer_compute_time(cfg, hw, model, phase, prefill_scale))
    if jitter is not None:
        compute = compute * jitter
    fetch = layer_transfer_time(cfg, hw, model)
    transfer = [fetch] * model.num_layers if fetch > 0 else [0.0] * model.num_layers
    capacity = queue_capacity(cfg, hw, model, phase)
    return simulate_layer_timeline(compute.tolist(), transfer, capacity, mode)


def _jitter(rng: Optional[np.random.Generator], sigma: float, size: int) -> Optional[np.ndarray]:
    """Mean-preserving lognormal factors"""
    if rng is None:
        return None
    return np.exp(sigma * rng.standard_normal(size) - 0.5 * sigma * sigma)


def generation_time(cfg: PlacementConfig, hw: HardwareProfile, model: ModelProfile,
                    prefetch_mode: PrefetchMode = PrefetchMode.CONTINUOUS, seed: int = 0,
                    db: Optional[DatabaseProfile] = None,
                    prefill_scale: float = 1.0) -> float:
    """
    Seconds to generate output_tokens tokens for a batch of cfg.gen_batch_size.
    Deterministic given seed. Without db only the GPU and weight/cache tiers
    are checked.
    """
    report = check_feasible(cfg, hw, model, db)
    if not report.feasible:
        raise InfeasiblePlacementError(
            f"placement infeasible ({report.binding()} over capacity): {cfg.describe()}", report)

    rng = np.random.default_rng(seed) if hw.jitter_sigma > 0 else None
    layers = model.num_layers
    prefill = step_timeline(cfg, hw, model, Phase.PREFILL, prefetch_mode, prefill_scale,
                            _jitter(rng, hw.jitter_sigma, layers)).total
    if rng is None:
        decode = model.output_tokens * step_timeline(
            cfg, hw, model, Phase.DECODE, prefetch_mode).total
    else:
        decode = sum(step_timeline(cfg, hw, model, Phase.DECODE, prefetch_mode,
                                   jitter=_jitter(rng, hw.jitter_sigma, layers)).total
                     for _ in range(model.output_tokens))
    return prefill + decode


def profile_samples(cfg: PlacementConfig, hw: HardwareProfile, model: ModelProfile,
                    batches: Iterable[int], prefetch_mode: PrefetchMode = PrefetchMode.CONTINUOUS,
                    seed: int = 0, db: Optional[DatabaseProfile] = None) -> List[Sample]:
    """(B, generation_time) for each batch size run on cfg's placement"""
    return [(b, generation_time(cfg.with_batch(b), hw, model, prefetch_mode, seed + i, db))
            for i, b in enumerate(batches)]
