"""
Batch scheduling and offline policy search.

Online: the generation worker picks a batch size from its backlog by
comparing the predicted average latency of serving the backlog in k equal
batches against one large batch; the retrieval worker drains greedily.

Offline: active_profile walks each backlog range's placement space with a
hill climb that balances retrieval and generation time, then fits a
power-law batch cost for the chosen placement.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ragsched.cost_model import (
    CostModelFit, fit_samples, generation_time, predict, profile_samples, retrieval_time,
)
from ragsched.domain import (
    DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, Request,
)
from ragsched.errors import ScenarioInfeasibleError, SchedulingError
from ragsched.memory_planner import (
    check_feasible, diagnose, fill_placement, most_resident, spills_to_disk,
)
from ragsched.prefetch_timeline import PrefetchMode
from ragsched.settings import DEFAULTS

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BatchDecision:
    chosen_batch: int
    predicted_avg_latency: float
    evaluated: List[Tuple[int, float]]


def avg_latency_equal_split(n: int, arrivals: Sequence[float], k: int, fit: CostModelFit,
                            now: float = 0.0) -> float:
    """
    Average latency of serving n queued requests as k back-to-back batches
    of n/k, measured from each request's arrival. Arrivals are absolute
    times; `now` is the instant the first batch starts.
    """
    if n < 1:
        raise SchedulingError(f"backlog must be >= 1, got {n}")
    if k < 1 or k > n:
        raise SchedulingError(f"split count k={k} outside [1, {n}]")
    if len(arrivals) != n:
        raise SchedulingError(f"{len(arrivals)} arrivals for a backlog of {n}")
    relative = float(np.mean(np.asarray(arrivals, dtype=float) - now))
    return (k + 1) / 2.0 * predict(fit, n / k) - relative


def max_batch_optimal(c: float, k: int) -> bool:
    """True when one batch of n beats k batches of n/k: 2 * k**c <= k + 1"""
    if k < 2:
        raise SchedulingError(f"split count must be >= 2, got {k}")
    return 2.0 * k ** c <= k + 1 + TIE_TOLERANCE


def choose_generation_batch(backlog: Sequence[Request], candidates: Sequence[int],
                            fit: CostModelFit, max_feasible: int,
                            now: Optional[float] = None) -> BatchDecision:
    """
    Pick the candidate batch size with the lowest predicted average latency
    for the current backlog; ties go to the larger batch. A backlog that does
    not divide evenly is costed as ceil(n/b) full batches of b.
    """
    n = len(backlog)
    if n == 0:
        raise SchedulingError("cannot choose a batch for an empty backlog")
    sizes = sorted(set(int(b) for b in candidates))
    if not sizes:
        raise SchedulingError("no batch candidates")

    covering = next((b for b in sizes if b >= n), sizes[-1])
    limit = min(max_feasible, covering)
    eligible = [b for b in sizes if b <= limit]
    if not eligible:
        raise SchedulingError(f"no feasible batch: candidates {sizes}, max feasible {max_feasible}")

    if now is None:
        now = max(r.arrival_time for r in backlog)
    relative = float(np.mean([r.arrival_time - now for r in backlog]))

    evaluated = []
    best_batch, best_latency = eligible[0], math.inf
    for b in eligible:
        k = math.ceil(n / b)
        latency = (k + 1) / 2.0 * predict(fit, b) - relative
        evaluated.append((b, latency))
        if latency <= best_latency + TIE_TOLERANCE * max(1.0, abs(best_latency)):
            best_batch, best_latency = b, min(latency, best_latency)
    chosen_latency = dict(evaluated)[best_batch]
    return BatchDecision(best_batch, chosen_latency, evaluated)


def choose_retrieval_batch(backlog_size: int, max_retrieval_batch: Optional[int] = None) -> int:
    if max_retrieval_batch is None:
        max_retrieval_batch = DEFAULTS["MAX_RETRIEVAL_BATCH"]
    if backlog_size < 1:
        raise SchedulingError(f"retrieval backlog must be >= 1, got {backlog_size}")
    return min(backlog_size, max_retrieval_batch)


def max_feasible_batch(placement: PlacementConfig, candidates: Sequence[int],
                       hw: HardwareProfile, model: ModelProfile,
                       db: Optional[DatabaseProfile] = None) -> int:
    """Largest candidate the placement can host, 0 when none fits"""
    fitting = [b for b in candidates
               if check_feasible(placement.with_batch(b), hw, model, db).feasible]
    return max(fitting, default=0)


# Policy table

@dataclass(frozen=True)
class ProfileStep:
    placement: PlacementConfig
    t_retrieval: float
    t_generation: float

    @property
    def objective(self) -> float:
        return max(self.t_retrieval, self.t_generation)

    def to_dict(self) -> Dict[str, Any]:
        return {"placement": self.placement.to_dict(), "t_retrieval": self.t_retrieval,
                "t_generation": self.t_generation, "objective": self.objective}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProfileStep":
        return cls(PlacementConfig.from_dict(data["placement"]),
                   float(data["t_retrieval"]), float(data["t_generation"]))


@dataclass(frozen=True)
class PolicyEntry:
    """Placement and batch-cost fit for backlogs in [backlog_min, backlog_max]"""
    backlog_min: int
    backlog_max: Optional[int]
    placement: PlacementConfig
    fit: CostModelFit
    path: List[ProfileStep] = field(default_factory=list)

    def covers(self, backlog: int) -> bool:
        return backlog >= self.backlog_min and (self.backlog_max is None
                                                or backlog <= self.backlog_max)

    def range_label(self) -> str:
        upper = "inf" if self.backlog_max is None else str(self.backlog_max)
        return f"[{self.backlog_min}, {upper}]"

    def to_dict(self) -> Dict[str, Any]:
        return {"backlog_min": self.backlog_min, "backlog_max": self.backlog_max,
                "placement": self.placement.to_dict(), "fit": self.fit.to_dict(),
                "path": [s.to_dict() for s in self.path]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PolicyEntry":
        upper = data.get("backlog_max")
        return cls(int(data["backlog_min"]), None if upper is None else int(upper),
                   PlacementConfig.from_dict(data["placement"]),
                   CostModelFit.from_dict(data["fit"]),
                   [ProfileStep.from_dict(s) for s in data.get("path", [])])


@dataclass(frozen=True)
class PolicyTable:
    entries: List[PolicyEntry]

    def lookup(self, backlog: int) -> PolicyEntry:
        """Entry whose range holds the backlog (an empty backlog maps to the first)"""
        if not self.entries:
            raise SchedulingError("policy table is empty")
        for entry in self.entries:
            if entry.covers(max(1, backlog)):
                return entry
        return self.entries[-1]

    @property
    def largest(self) -> PolicyEntry:
        return self.entries[-1]

    def range_problems(self) -> List[str]:
        """Gaps or overlaps in the backlog ranges; empty when they partition [1, inf)"""
        problems = []
        expected = 1
        for i, entry in enumerate(self.entries):
            if entry.backlog_min != expected:
                problems.append(f"entry {i} starts at {entry.backlog_min}, expected {expected}")
            if entry.backlog_max is None:
                if i != len(self.entries) - 1:
                    problems.append(f"entry {i} is open-ended but not last")
                break
            if entry.backlog_max < entry.backlog_min:
                problems.append(f"entry {i} has an empty range {entry.range_label()}")
            expected = entry.backlog_max + 1
        else:
            problems.append("last entry must be open-ended")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PolicyTable":
        return cls([PolicyEntry.from_dict(e) for e in data.get("entries", [])])


# Active profiling

def _start_placement(hw: HardwareProfile, model: ModelProfile, db: DatabaseProfile,
                     batch: int, partitions: Sequence[int], step: float) -> Optional[PlacementConfig]:
    """Most GPU-resident split, then as many resident partitions as fit without disk spill"""
    split = most_resident(hw, model, db, batch, partitions[0], step)
    if split is None:
        return None
    for p in reversed(partitions):
        cfg = fill_placement(split.w_gpu, split.c_gpu, p, batch, hw, model, db)
        if not spills_to_disk(cfg) and check_feasible(cfg, hw, model, db).feasible:
            return cfg
    return split


def _neighbors(current: ProfileStep, partitions: Sequence[int], step: float,
               hw: HardwareProfile, model: ModelProfile,
               db: DatabaseProfile) -> List[PlacementConfig]:
    cfg = current.placement
    index = partitions.index(cfg.resident_partitions)
    batch = cfg.gen_batch_size
    moves = []
    if current.t_retrieval > current.t_generation and index + 1 < len(partitions):
        more = partitions[index + 1]
        moves.append(fill_placement(cfg.w_gpu, cfg.c_gpu, more, batch, hw, model, db))
        if cfg.w_gpu + step <= 1.0 + 1e-9:
            w_gpu = round(min(1.0, cfg.w_gpu + step), 10)
            moves.append(fill_placement(w_gpu, cfg.c_gpu, more, batch, hw, model, db))
    elif current.t_generation > current.t_retrieval and index > 0:
        fewer = partitions[index - 1]
        moves.append(fill_placement(cfg.w_gpu, cfg.c_gpu, fewer, batch, hw, model, db))
    return [m for m in moves if check_feasible(m, hw, model, db).feasible]


def hill_climb(start: PlacementConfig, hw: HardwareProfile, model: ModelProfile,
               db: DatabaseProfile, partitions: Sequence[int],
               prefetch_mode: PrefetchMode = PrefetchMode.CONTINUOUS, seed: int = 0,
               step: float = 0.05) -> List[ProfileStep]:
    """
    Balance the two pipelines from `start`. Each accepted move strictly lowers
    max(t_retrieval, t_generation); the returned path starts at `start`.
    """
    partitions = sorted(set(partitions) | {start.resident_partitions})

    def measure(cfg: PlacementConfig) -> ProfileStep:
        return ProfileStep(cfg, retrieval_time(cfg.resident_partitions, db),
                           generation_time(cfg, hw, model, prefetch_mode, seed, db))

    path = [measure(start)]
    while True:
        options = [measure(cfg) for cfg in _neighbors(path[-1], partitions, step, hw, model, db)]
        if not options:
            break
        best = min(options, key=lambda s: s.objective)
        if best.objective >= path[-1].objective:
            break
        logger.debug(f"Hill climb: {best.placement.describe()} objective {best.objective:.3f}s")
        path.append(best)
    return path


def _largest_feasible_batch(hw: HardwareProfile, model: ModelProfile, db: DatabaseProfile,
                            probe: int, partitions: Sequence[int], step: float) -> int:
    for b in range(probe, 0, -1):
        if most_resident(hw, model, db, b, partitions[0], step) is not None:
            return b
    return 0


def active_profile(hw: HardwareProfile, model: ModelProfile, db: DatabaseProfile,
                   probe_batches: Optional[Sequence[int]] = None,
                   partition_candidates: Optional[Sequence[int]] = None,
                   batch_candidates: Optional[Sequence[int]] = None,
                   prefetch_mode: PrefetchMode = PrefetchMode.CONTINUOUS, seed: int = 0,
                   step: Optional[float] = None) -> PolicyTable:
    """
    One PolicyTable entry per probe batch size. Probe b_i covers backlogs in
    (b_{i-1}, b_i]; the last entry is open-ended. Deterministic given inputs.
    """
    if probe_batches is None:
        probe_batches = DEFAULTS["PROBE_BATCHES"]
    if batch_candidates is None:
        batch_candidates = DEFAULTS["BATCH_CANDIDATES"]
    if step is None:
        step = DEFAULTS["GRID_STEP"]
    probes = sorted(set(int(b) for b in probe_batches))
    if not probes:
        raise SchedulingError("probe_batches must not be empty")
    if partition_candidates is None:
        partition_candidates = range(db.num_partitions + 1)
    partitions = sorted(set(int(p) for p in partition_candidates))
    if not partitions:
        raise SchedulingError("partition_candidates must not be empty")
    if partitions[0] < 0 or partitions[-1] > db.num_partitions:
        raise SchedulingError(f"partition candidates must lie in [0, {db.num_partitions}]")

    entries = []
    lower = 1
    for i, probe in enumerate(probes):
        batch = _largest_feasible_batch(hw, model, db, probe, partitions, step)
        if batch == 0:
            raise ScenarioInfeasibleError("scenario infeasible", diagnose(hw, model, db, probe, step))
        if batch < probe:
            logger.warning(f"Probe batch {probe} does not fit; profiling batch {batch} instead")

        start = _start_placement(hw, model, db, batch, partitions, step)
        path = hill_climb(start, hw, model, db, partitions, prefetch_mode, seed + i, step)
        chosen = path[-1].placement

        sizes = sorted({b for b in batch_candidates if b <= batch} | {batch})
        fit = fit_samples(profile_samples(chosen, hw, model, sizes, prefetch_mode, seed + i, db))

        upper = None if i == len(probes) - 1 else probe
        entries.append(PolicyEntry(lower, upper, chosen, fit, path))
        logger.info(f"Backlog {entries[-1].range_label()}: {chosen.describe()} "
                    f"t_ret={path[-1].t_retrieval:.2f}s t_gen={path[-1].t_generation:.2f}s "
                    f"fit a={fit.a:.4g} c={fit.c:.4g}")
        lower = probe + 1
    return PolicyTable(entries)
