"""
Layer-by-layer timeline of one offloaded inference step.

A single transfer channel brings offloaded layers to the GPU while compute
runs layers strictly in order. The prefetch mode decides how far ahead the
channel may run:

  CONTINUOUS   up to queue_capacity fetched layers wait ahead of compute
  NEXT_LAYER   layer j is fetched only once layer j-1 starts computing
  SYNCHRONOUS  layer j is fetched only once layer j-1 finishes computing

For identical inputs totals order as CONTINUOUS <= NEXT_LAYER <= SYNCHRONOUS.
"""
import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import pandas as pd

from ragsched.domain import HardwareProfile, ModelProfile, PlacementConfig, FRACTION_TOLERANCE
from ragsched.errors import TimelineError

logger = logging.getLogger(__name__)


class PrefetchMode(str, Enum):
    CONTINUOUS = "continuous"
    NEXT_LAYER = "next_layer"
    SYNCHRONOUS = "synchronous"


class Phase(str, Enum):
    PREFILL = "prefill"
    DECODE = "decode"


@dataclass(frozen=True)
class LayerTiming:
    layer: int
    transfer_start: Optional[float]
    transfer_end: Optional[float]
    compute_start: float
    compute_end: float
    stall: float


@dataclass(frozen=True)
class LayerTimeline:
    layers: List[LayerTiming]
    total: float
    total_stall: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(t.layer, t.transfer_start, t.transfer_end, t.compute_start, t.compute_end, t.stall)
             for t in self.layers],
            columns=["layer", "transfer_start", "transfer_end",
                     "compute_start", "compute_end", "stall"],
        )

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format="%.9g", na_rep="",
                                      lineterminator="\n")


def simulate_layer_timeline(compute: Sequence[float], transfer: Sequence[float],
                            queue_capacity: Optional[int] = None,
                            mode: PrefetchMode = PrefetchMode.CONTINUOUS) -> LayerTimeline:
    """
    Schedule every layer's transfer and compute. Layers with zero transfer are
    GPU-resident. queue_capacity=None means no limit on layers fetched ahead.
    """
    if len(compute) != len(transfer):
        raise TimelineError(f"compute has {len(compute)} layers, transfer has {len(transfer)}")
    if any(c < 0 for c in compute) or any(t < 0 for t in transfer):
        raise TimelineError("layer times must be >= 0")
    if queue_capacity is not None and queue_capacity < 1:
        raise TimelineError(f"queue capacity must be >= 1, got {queue_capacity}")
    mode = PrefetchMode(mode)

    layers: List[LayerTiming] = []
    fetched_starts: List[float] = []   # compute_start of each offloaded layer, in order
    channel_free = 0.0
    prev_end = 0.0
    total_stall = 0.0

    for j, (work, fetch) in enumerate(zip(compute, transfer)):
        if fetch > 0:
            start = channel_free
            if mode is PrefetchMode.CONTINUOUS:
                slot = len(fetched_starts) - (queue_capacity or math.inf)
                if slot >= 0:
                    start = max(start, fetched_starts[int(slot)])
            elif j > 0 and mode is PrefetchMode.NEXT_LAYER:
                start = max(start, layers[j - 1].compute_start)
            elif j > 0:
                start = max(start, layers[j - 1].compute_end)
            end = start + fetch
            channel_free = end
            stall = max(0.0, end - prev_end)
            compute_start = max(prev_end, end)
            fetched_starts.append(compute_start)
            timing = LayerTiming(j, start, end, compute_start, compute_start + work, stall)
        else:
            timing = LayerTiming(j, None, None, prev_end, prev_end + work, 0.0)
        total_stall += timing.stall
        prev_end = timing.compute_end
        layers.append(timing)

    return LayerTimeline(layers, prev_end, total_stall)


def queue_capacity(cfg: PlacementConfig, hw: HardwareProfile, model: ModelProfile,
                   phase: Phase) -> Optional[int]:
    """
    Offloaded layers that fit in the GPU memory left free during `phase`, at
    least 1. None means nothing is offloaded and the queue is unbounded.
    """
    offloaded = (1.0 - cfg.w_gpu) * model.per_layer_weight
    if offloaded <= FRACTION_TOLERANCE * model.per_layer_weight:
        return None
    workspace = model.workspace_bytes(cfg.gen_batch_size)
    if Phase(phase) is Phase.DECODE:
        workspace *= model.decode_workspace_fraction
    free_gpu = (hw.gpu_mem - cfg.w_gpu * model.weight_total
                - cfg.c_gpu * model.kv_cache_bytes(cfg.gen_batch_size) - workspace)
    return max(1, int(math.floor(free_gpu / offloaded)))
