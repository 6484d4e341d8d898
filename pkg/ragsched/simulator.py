"""
Deterministic discrete-event replay of a workload through the RAG serving
pipeline.

PIPELINED runs two logical workers in one event loop: the retrieval worker
drains its queue in greedy batches, and the generation worker batches the
retrieved contexts using the policy table. SERIAL runs each batch through
retrieval then generation before starting the next one.

Simultaneous events are processed in (time, worker id, sequence) order.
Device occupancy is checked against capacity at every event.
"""
import heapq
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ragsched.cost_model import generation_time, retrieval_time
from ragsched.domain import (
    DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, Request, RequestTrace,
)
from ragsched.errors import (
    ConfigError, InfeasiblePlacementError, ScenarioInfeasibleError, SimulationError,
)
from ragsched.memory_planner import (
    baseline_placement, check_feasible, diagnose, plan_transfer, record_offload,
)
from ragsched.prefetch_timeline import PrefetchMode
from ragsched.scheduler import (
    PolicyTable, choose_generation_batch, choose_retrieval_batch, max_feasible_batch,
)
from ragsched.settings import DEFAULTS
from ragsched.units import format_bytes
from ragsched.workload import IntervalSchedule, workload_digest

logger = logging.getLogger(__name__)

# Worker ids order simultaneous events
ARRIVAL, RETRIEVAL, GENERATION, DISPATCH = 0, 1, 2, 3


class SimMode(str, Enum):
    PIPELINED = "pipelined"
    SERIAL = "serial"


class BatchPolicy(str, Enum):
    BACKLOG_AWARE = "backlog_aware"
    FIXED_MAX = "fixed_max"


@dataclass(frozen=True)
class SimConfig:
    mode: SimMode
    hw: HardwareProfile
    model: ModelProfile
    db: DatabaseProfile
    policy: Optional[PolicyTable] = None
    prefetch_mode: PrefetchMode = field(
        default_factory=lambda: PrefetchMode(DEFAULTS["PREFETCH_MODE"]))
    max_retrieval_batch: int = field(default_factory=lambda: DEFAULTS["MAX_RETRIEVAL_BATCH"])
    seed: int = 0
    batch_candidates: Tuple[int, ...] = field(
        default_factory=lambda: tuple(DEFAULTS["BATCH_CANDIDATES"]))
    batch_policy: BatchPolicy = BatchPolicy.BACKLOG_AWARE
    fixed_batch: Optional[int] = None
    schedule: Optional[IntervalSchedule] = None
    serial_window: float = field(default_factory=lambda: DEFAULTS["SERIAL_WINDOW_SECONDS"])
    serial_batch_size: Optional[int] = None
    serial_placement: Optional[PlacementConfig] = None


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: str
    payload: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return {"time": self.time, "event": self.kind, **self.payload}


@dataclass(frozen=True)
class GenerationDecision:
    time: float
    backlog: int
    chosen_batch: int
    taken: int
    placement: PlacementConfig


@dataclass
class SimOutcome:
    mode: SimMode
    traces: List[RequestTrace]
    events: List[SimEvent]
    decisions: List[GenerationDecision]
    peak_gpu: float
    peak_cpu: float
    peak_disk: float
    workload_digest: str
    batch_policy: BatchPolicy = BatchPolicy.BACKLOG_AWARE
    schedule: Optional[IntervalSchedule] = None
    capacities: Dict[str, float] = field(default_factory=dict)

    @property
    def stats(self):
        from ragsched.metrics import latency_stats
        return latency_stats(self.traces)


def batch_seed(seed: int, stream: int, index: int) -> int:
    """Independent sub-seed for one batch of one worker"""
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1)[0])


@dataclass
class _Pending:
    request: Request
    retrieval_start: float = 0.0
    retrieval_end: float = 0.0
    generation_start: float = 0.0
    generation_end: float = 0.0
    retrieval_batch: int = -1
    generation_batch: int = -1

    def trace(self) -> RequestTrace:
        r = self.request
        return RequestTrace(r.id, r.arrival_time, self.retrieval_start, self.retrieval_end,
                            self.generation_start, self.generation_end, r.top_k,
                            self.retrieval_batch, self.generation_batch)


class _Engine:
    """Event loop state shared by both modes"""

    def __init__(self, workload: Sequence[Request], cfg: SimConfig):
        self.cfg = cfg
        self.heap: List[Tuple[float, int, int, str, Any]] = []
        self.seq = 0
        self.events: List[SimEvent] = []
        self.decisions: List[GenerationDecision] = []
        self.pending: Dict[int, _Pending] = {}
        self.dispatch_at: Optional[float] = None
        self.peaks = {"gpu": 0.0, "cpu": 0.0, "disk": 0.0}
        self.placement: Optional[PlacementConfig] = None
        self.batch: Optional[int] = None
        self.resident = 0

        for r in workload:
            self.pending[r.id] = _Pending(r)
            self.push(r.arrival_time, ARRIVAL, "arrival", r)

    def push(self, time: float, worker: int, kind: str, data: Any = None):
        heapq.heappush(self.heap, (time, worker, self.seq, kind, data))
        self.seq += 1

    def log(self, time: float, kind: str, **payload):
        self.events.append(SimEvent(time, kind, payload))

    def request_dispatch(self, now: float):
        if self.dispatch_at != now:
            self.dispatch_at = now
            self.push(now, DISPATCH, "dispatch")

    def occupancy(self) -> PlacementConfig:
        """Current placement at the batch size last run on it and the partitions held now"""
        placement = self.placement
        if self.batch is not None:
            placement = placement.with_batch(self.batch)
        return placement.with_partitions(self.resident)

    def check_memory(self, now: float):
        cfg = self.cfg
        occupied = self.occupancy()
        report = check_feasible(occupied, cfg.hw, cfg.model, cfg.db)
        if not report.feasible:
            raise SimulationError(
                f"memory capacity exceeded at t={now:.6f}s on {report.binding()}: "
                f"{occupied.describe()}")
        self.peaks["gpu"] = max(self.peaks["gpu"], report.gpu_used)
        self.peaks["cpu"] = max(self.peaks["cpu"], report.cpu_used)
        self.peaks["disk"] = max(self.peaks["disk"], report.disk_used)

    def generate(self, cfg: PlacementConfig, batch: List[Request], index: int,
                 padded_to: Optional[int] = None) -> float:
        """Generation seconds for the batch; padded_to runs it at a fixed size"""
        sim = self.cfg
        scale = float(np.mean([r.top_k for r in batch])) / sim.model.reference_top_k
        try:
            return generation_time(cfg.with_batch(padded_to or len(batch)), sim.hw, sim.model,
                                   sim.prefetch_mode, batch_seed(sim.seed, GENERATION, index),
                                   None, scale)
        except InfeasiblePlacementError as e:
            raise SimulationError(f"policy placement {cfg.describe()} cannot run a batch "
                                  f"of {len(batch)}: {e}")

    def run(self, handlers: Dict[str, Any]):
        while self.heap:
            now, _, _, kind, data = heapq.heappop(self.heap)
            if kind == "arrival":
                self.log(now, "arrived", ids=[data.id])
                handlers["arrival"](now, data)
                self.request_dispatch(now)
            elif kind == "dispatch":
                self.dispatch_at = None
                handlers["dispatch"](now)
            else:
                handlers[kind](now, data)
            self.check_memory(now)


class _Pipelined:
    def __init__(self, engine: _Engine):
        self.engine = engine
        cfg = engine.cfg
        self.retrieval_queue: Deque[Request] = deque()
        self.context_queue: Deque[Request] = deque()
        self.retrieving = False
        self.generating = False
        self.retrieval_batches = 0
        self.generation_batches = 0
        self.retrieval_end = 0.0
        # Placement and batch size waiting for the running retrieval batch to end
        self.deferred: Optional[Tuple[PlacementConfig, int]] = None

        first = (cfg.policy.largest if cfg.batch_policy is BatchPolicy.FIXED_MAX
                 else cfg.policy.lookup(1))
        engine.placement = first.placement
        engine.resident = first.placement.resident_partitions
        self.target_partitions = engine.resident
        self.history = record_offload((), first.placement)

    def on_arrival(self, now: float, request: Request):
        self.retrieval_queue.append(request)

    def on_dispatch(self, now: float):
        self.start_retrieval(now)
        self.start_generation(now)

    def release_partitions(self, now: float):
        """Drop partitions above the target; only between retrieval batches"""
        engine = self.engine
        if engine.resident <= self.target_partitions:
            return
        count = engine.resident - self.target_partitions
        engine.resident = self.target_partitions
        engine.log(now, "partitions_released", count=count, resident=engine.resident)

    def start_retrieval(self, now: float):
        engine, cfg = self.engine, self.engine.cfg
        if self.retrieving or not self.retrieval_queue:
            return
        self.release_partitions(now)
        start = now
        if engine.resident < self.target_partitions:
            count = self.target_partitions - engine.resident
            load = count * cfg.db.load_seconds_per_partition
            engine.resident = self.target_partitions
            engine.log(now, "partitions_loaded", count=count, duration=load,
                       resident=engine.resident)
            start += load

        size = choose_retrieval_batch(len(self.retrieval_queue), cfg.max_retrieval_batch)
        batch = [self.retrieval_queue.popleft() for _ in range(size)]
        end = start + retrieval_time(engine.resident, cfg.db)
        index = self.retrieval_batches
        self.retrieval_batches += 1
        for r in batch:
            item = engine.pending[r.id]
            item.retrieval_start, item.retrieval_end, item.retrieval_batch = start, end, index
        engine.log(now, "retrieval_batched", ids=[r.id for r in batch], batch=index,
                   start=start, end=end, resident=engine.resident)
        self.retrieving = True
        self.retrieval_end = end
        engine.push(end, RETRIEVAL, "retrieval_done", batch)

    def on_retrieval_done(self, now: float, batch: List[Request]):
        engine = self.engine
        self.retrieving = False
        self.release_partitions(now)
        if self.deferred is not None:
            engine.placement, engine.batch = self.deferred
            self.deferred = None
        self.context_queue.extend(batch)
        engine.log(now, "retrieval_done", ids=[r.id for r in batch])
        engine.request_dispatch(now)

    def fits_with_held_partitions(self, placement: PlacementConfig, batch_size: int) -> bool:
        """Whether placement can run batch_size before surplus partitions are released"""
        engine, cfg = self.engine, self.engine.cfg
        held = max(engine.resident, placement.resident_partitions)
        occupied = placement.with_batch(batch_size).with_partitions(held)
        return check_feasible(occupied, cfg.hw, cfg.model, cfg.db).feasible

    def reconfigure(self, now: float, target: PlacementConfig, start: float) -> float:
        """Seconds to move weights from the current placement to target, starting at start"""
        engine, cfg = self.engine, self.engine.cfg
        old = engine.placement
        if target == old:
            return 0.0
        # Partitions are loaded and released by the retrieval worker
        weights_only = plan_transfer(old.with_partitions(0), target.with_partitions(0),
                                     cfg.hw, cfg.model, cfg.db, self.history)
        duration = weights_only.duration
        self.history = record_offload(self.history, target)
        engine.log(now, "reconfigured", placement=target.to_dict(), start=start,
                   duration=duration, bytes_gpu_cpu=weights_only.bytes_gpu_cpu,
                   bytes_cpu_disk=weights_only.bytes_cpu_disk, resident=engine.resident)
        return duration

    def start_generation(self, now: float):
        engine, cfg = self.engine, self.engine.cfg
        if self.generating or not self.context_queue:
            return
        backlog = list(self.context_queue)
        n = len(backlog)

        if cfg.batch_policy is BatchPolicy.FIXED_MAX:
            entry = cfg.policy.largest
            chosen = cfg.fixed_batch or max(cfg.batch_candidates)
        else:
            entry = cfg.policy.lookup(n)
            limit = max_feasible_batch(entry.placement, cfg.batch_candidates,
                                       cfg.hw, cfg.model, cfg.db)
            if limit == 0:
                raise SimulationError(f"policy entry {entry.range_label()} "
                                      f"({entry.placement.describe()}) fits no batch candidate")
            chosen = choose_generation_batch(backlog, cfg.batch_candidates, entry.fit,
                                             limit, now).chosen_batch
        take = min(chosen, n)
        padded = chosen if cfg.batch_policy is BatchPolicy.FIXED_MAX else None
        running = padded or take

        target = entry.placement
        self.target_partitions = target.resident_partitions
        if not self.retrieving:
            self.release_partitions(now)
        switch_at = now
        if self.retrieving and not self.fits_with_held_partitions(target, running):
            # the split needs the memory of partitions the running retrieval still searches
            switch_at = self.retrieval_end

        delay = self.reconfigure(now, target, switch_at)
        if switch_at > now:
            self.deferred = (target, running)
        else:
            engine.placement, engine.batch = target, running
        batch = [self.context_queue.popleft() for _ in range(take)]
        index = self.generation_batches
        self.generation_batches += 1
        start = switch_at + delay
        end = start + engine.generate(target, batch, index, padded)
        for r in batch:
            item = engine.pending[r.id]
            item.generation_start, item.generation_end, item.generation_batch = start, end, index
        engine.decisions.append(GenerationDecision(now, n, chosen, take, target))
        engine.log(now, "generation_batched", ids=[r.id for r in batch], batch=index,
                   backlog=n, chosen=chosen, start=start, end=end)
        self.generating = True
        engine.push(end, GENERATION, "generation_done", batch)

    def on_generation_done(self, now: float, batch: List[Request]):
        self.generating = False
        self.engine.log(now, "done", ids=[r.id for r in batch])
        self.engine.request_dispatch(now)

    def handlers(self) -> Dict[str, Any]:
        return {"arrival": self.on_arrival, "dispatch": self.on_dispatch,
                "retrieval_done": self.on_retrieval_done,
                "generation_done": self.on_generation_done}


class _Serial:
    def __init__(self, engine: _Engine, placement: PlacementConfig):
        self.engine = engine
        self.queue: Deque[Request] = deque()
        self.busy = False
        self.batches = 0
        engine.placement = placement
        engine.resident = placement.resident_partitions

    def batch_size(self, now: float) -> int:
        cfg = self.engine.cfg
        if cfg.serial_batch_size is not None:
            return cfg.serial_batch_size
        return max(1, int(round(cfg.schedule.rate_at(now) * cfg.serial_window)))

    def on_arrival(self, now: float, request: Request):
        self.queue.append(request)

    def on_dispatch(self, now: float):
        engine, cfg = self.engine, self.engine.cfg
        if self.busy or not self.queue:
            return
        size = min(self.batch_size(now), len(self.queue), engine.placement.gen_batch_size)
        batch = [self.queue.popleft() for _ in range(size)]
        index = self.batches
        self.batches += 1
        end = now + retrieval_time(engine.resident, cfg.db)
        for r in batch:
            item = engine.pending[r.id]
            item.retrieval_start, item.retrieval_end, item.retrieval_batch = now, end, index
        engine.log(now, "retrieval_batched", ids=[r.id for r in batch], batch=index,
                   start=now, end=end, resident=engine.resident)
        self.busy = True
        engine.push(end, RETRIEVAL, "retrieval_done", (index, batch))

    def on_retrieval_done(self, now: float, data):
        engine = self.engine
        index, batch = data
        engine.log(now, "retrieval_done", ids=[r.id for r in batch])
        end = now + engine.generate(engine.placement, batch, index)
        for r in batch:
            item = engine.pending[r.id]
            item.generation_start, item.generation_end, item.generation_batch = now, end, index
        engine.decisions.append(GenerationDecision(now, len(batch), len(batch), len(batch),
                                                   engine.placement))
        engine.log(now, "generation_batched", ids=[r.id for r in batch], batch=index,
                   backlog=len(batch), chosen=len(batch), start=now, end=end)
        engine.push(end, GENERATION, "generation_done", batch)

    def on_generation_done(self, now: float, batch: List[Request]):
        self.busy = False
        self.engine.log(now, "done", ids=[r.id for r in batch])
        self.engine.request_dispatch(now)

    def handlers(self) -> Dict[str, Any]:
        return {"arrival": self.on_arrival, "dispatch": self.on_dispatch,
                "retrieval_done": self.on_retrieval_done,
                "generation_done": self.on_generation_done}


def largest_serial_batch(cfg: SimConfig) -> int:
    if cfg.serial_batch_size is not None:
        return cfg.serial_batch_size
    peak = max((rate for _, rate in cfg.schedule.intervals), default=0.0)
    return max(1, int(round(peak * cfg.serial_window)))


def serial_placement(cfg: SimConfig) -> PlacementConfig:
    """Explicit serial placement, or the static baseline sized for the largest serial batch"""
    if cfg.serial_placement is not None:
        return cfg.serial_placement
    batch = largest_serial_batch(cfg)
    placement = baseline_placement(cfg.hw, cfg.model, cfg.db, batch)
    if placement is None:
        raise ScenarioInfeasibleError("scenario infeasible",
                                      diagnose(cfg.hw, cfg.model, cfg.db, batch))
    return placement


def _check_config(workload: Sequence[Request], cfg: SimConfig):
    ids = [r.id for r in workload]
    if len(set(ids)) != len(ids):
        raise ConfigError("workload request ids must be unique")
    if any(r.arrival_time < 0 for r in workload):
        raise ConfigError("workload arrivals must be >= 0")
    if cfg.max_retrieval_batch < 1:
        raise ConfigError(f"max_retrieval_batch must be >= 1, got {cfg.max_retrieval_batch}")
    if cfg.mode is SimMode.PIPELINED:
        if cfg.policy is None or not cfg.policy.entries:
            raise ConfigError("pipelined mode needs a non-empty policy table")
        problems = cfg.policy.range_problems()
        if problems:
            raise ConfigError("policy table ranges do not partition [1, inf)", problems)
        for entry in cfg.policy.entries:
            report = check_feasible(entry.placement, cfg.hw, cfg.model, cfg.db)
            if not report.feasible:
                raise SimulationError(f"policy entry {entry.range_label()} is infeasible on "
                                      f"{report.binding()}: {entry.placement.describe()}")
    else:
        if cfg.serial_batch_size is None and cfg.schedule is None:
            raise ConfigError("serial mode needs an interval schedule or a serial batch size")
        if cfg.serial_batch_size is not None and cfg.serial_batch_size < 1:
            raise ConfigError(f"serial_batch_size must be >= 1, got {cfg.serial_batch_size}")


def run(workload: Sequence[Request], cfg: SimConfig) -> SimOutcome:
    """Replay the workload; deterministic given (workload, cfg)"""
    cfg = replace(cfg, mode=SimMode(cfg.mode), batch_policy=BatchPolicy(cfg.batch_policy))
    workload = sorted(workload, key=lambda r: (r.arrival_time, r.id))
    _check_config(workload, cfg)

    engine = _Engine(workload, cfg)
    if cfg.mode is SimMode.PIPELINED:
        actor = _Pipelined(engine)
    else:
        actor = _Serial(engine, serial_placement(cfg))
    engine.check_memory(0.0)
    engine.run(actor.handlers())

    traces = sorted((p.trace() for p in engine.pending.values()), key=lambda t: t.request_id)
    logger.info(f"{cfg.mode.value} run: {len(traces)} requests, {len(engine.events)} events, "
                f"{len(engine.decisions)} generation batches, peak GPU "
                f"{format_bytes(engine.peaks['gpu'])}, peak CPU {format_bytes(engine.peaks['cpu'])}")
    return SimOutcome(
        mode=cfg.mode, traces=traces, events=engine.events, decisions=engine.decisions,
        peak_gpu=engine.peaks["gpu"], peak_cpu=engine.peaks["cpu"],
        peak_disk=engine.peaks["disk"], workload_digest=workload_digest(workload),
        batch_policy=cfg.batch_policy, schedule=cfg.schedule,
        capacities={"gpu": float(cfg.hw.gpu_mem), "cpu": float(cfg.hw.cpu_mem),
                    "disk": float(cfg.hw.disk_capacity)},
    )
