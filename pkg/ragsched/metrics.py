"""
Latency statistics, per-interval breakdowns and side-by-side comparison of
simulation outcomes.

Percentiles use the nearest-rank rule. Reports render byte-stable text for
a fixed outcome.
"""
import logging
from dataclasses import dataclass, asdict, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ragsched.domain import RequestTrace
from ragsched.errors import WorkloadMismatchError

logger = logging.getLogger(__name__)

COMPARED_METRICS = ("average", "p50", "p90", "p99", "max", "waiting", "retrieval", "generation")


@dataclass(frozen=True)
class LatencyStats:
    """Aggregate latency of a set of traces (seconds)"""
    count: int = 0
    average: float = 0.0
    p50: float = 0.0
    p90: float = 0.0
    p99: float = 0.0
    max: float = 0.0
    waiting: float = 0.0
    retrieval: float = 0.0
    generation: float = 0.0
    makespan: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def nearest_rank(values: Sequence[float], q: float) -> float:
    return float(np.percentile(np.asarray(values, dtype=float), q, method="inverted_cdf"))


def latency_stats(traces: Sequence[RequestTrace]) -> LatencyStats:
    if not traces:
        return LatencyStats()
    latency = np.array([t.latency for t in traces], dtype=float)
    return LatencyStats(
        count=len(traces),
        average=float(latency.mean()),
        p50=nearest_rank(latency, 50),
        p90=nearest_rank(latency, 90),
        p99=nearest_rank(latency, 99),
        max=float(latency.max()),
        waiting=float(np.mean([t.waiting for t in traces])),
        retrieval=float(np.mean([t.retrieval for t in traces])),
        generation=float(np.mean([t.generation for t in traces])),
        makespan=float(max(t.completion for t in traces)),
    )


def interval_latency(outcome) -> List[Dict[str, Any]]:
    """Latency stats of requests grouped by the schedule interval they arrived in"""
    schedule = outcome.schedule
    if schedule is None:
        return []
    groups: List[List[RequestTrace]] = [[] for _ in schedule.intervals]
    for t in outcome.traces:
        groups[schedule.interval_index(t.arrival)].append(t)
    rows = []
    for i, ((start, end), (_, rate), traces) in enumerate(
            zip(schedule.boundaries(), schedule.intervals, groups)):
        rows.append({"interval": i, "start": start, "end": end, "rate_per_min": rate * 60.0,
                     **latency_stats(traces).to_dict()})
    return rows


def policy_by_interval(outcome) -> List[Dict[str, Any]]:
    """Mean generation decisions per schedule interval, by decision time"""
    schedule = outcome.schedule
    if schedule is None:
        return []
    groups: List[list] = [[] for _ in schedule.intervals]
    for d in outcome.decisions:
        groups[schedule.interval_index(d.time)].append(d)
    rows = []
    for i, decisions in enumerate(groups):
        row: Dict[str, Any] = {"interval": i, "decisions": len(decisions)}
        if decisions:
            row.update({
                "mean_backlog": float(np.mean([d.backlog for d in decisions])),
                "mean_chosen_batch": float(np.mean([d.chosen_batch for d in decisions])),
                "mean_taken": float(np.mean([d.taken for d in decisions])),
                "mean_c_cpu": float(np.mean([d.placement.c_cpu for d in decisions])),
                "mean_w_gpu": float(np.mean([d.placement.w_gpu for d in decisions])),
                "mean_resident_partitions": float(np.mean(
                    [d.placement.resident_partitions for d in decisions])),
            })
        else:
            row.update({"mean_backlog": None, "mean_chosen_batch": None, "mean_taken": None,
                        "mean_c_cpu": None, "mean_w_gpu": None,
                        "mean_resident_partitions": None})
        rows.append(row)
    return rows


@dataclass
class MetricsReport:
    mode: str
    batch_policy: str
    workload_digest: str
    stats: LatencyStats
    peak_occupancy: Dict[str, float] = field(default_factory=dict)
    capacities: Dict[str, float] = field(default_factory=dict)
    intervals: List[Dict[str, Any]] = field(default_factory=list)
    policy_by_interval: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "batch_policy": self.batch_policy,
            "workload_digest": self.workload_digest,
            "requests": self.stats.count,
            "latency": self.stats.to_dict(),
            "peak_occupancy": self.peak_occupancy,
            "capacities": self.capacities,
            "intervals": self.intervals,
            "policy_by_interval": self.policy_by_interval,
        }

    def render(self) -> str:
        s = self.stats
        lines = [
            f"mode: {self.mode} ({self.batch_policy})",
            f"requests: {s.count}",
            "",
            f"{'metric':<12}{'seconds':>14}",
            f"{'average':<12}{s.average:>14.3f}",
            f"{'p50':<12}{s.p50:>14.3f}",
            f"{'p90':<12}{s.p90:>14.3f}",
            f"{'p99':<12}{s.p99:>14.3f}",
            f"{'max':<12}{s.max:>14.3f}",
            "",
            f"{'Waiting':>12}{'Retrieval':>12}{'Generation':>12}{'Total':>12}",
            f"{s.waiting:>12.3f}{s.retrieval:>12.3f}{s.generation:>12.3f}{s.average:>12.3f}",
        ]
        if self.intervals:
            lines += ["", f"{'interval':<10}{'rate/min':>10}{'requests':>10}{'average':>12}"]
            for row in self.intervals:
                lines.append(f"{row['interval']:<10}{row['rate_per_min']:>10.2f}"
                             f"{row['count']:>10}{row['average']:>12.3f}")
        return "\n".join(lines) + "\n"


def metrics_report(outcome) -> MetricsReport:
    return MetricsReport(
        mode=outcome.mode.value,
        batch_policy=outcome.batch_policy.value,
        workload_digest=outcome.workload_digest,
        stats=latency_stats(outcome.traces),
        peak_occupancy={"gpu": outcome.peak_gpu, "cpu": outcome.peak_cpu,
                        "disk": outcome.peak_disk},
        capacities=dict(outcome.capacities),
        intervals=interval_latency(outcome),
        policy_by_interval=policy_by_interval(outcome),
    )


@dataclass
class Comparison:
    metrics: Dict[str, Dict[str, Optional[float]]]
    dominant: str

    def ratio(self, metric: str) -> Optional[float]:
        return self.metrics[metric]["ratio"]

    def to_dict(self) -> Dict[str, Any]:
        return {"metrics": self.metrics, "dominant": self.dominant}

    def render(self) -> str:
        lines = [f"{'metric':<12}{'a':>14}{'b':>14}{'a/b':>10}{'a-b':>14}"]
        for name in COMPARED_METRICS:
            m = self.metrics[name]
            ratio = "n/a" if m["ratio"] is None else f"{m['ratio']:.4f}"
            lines.append(f"{name:<12}{m['a']:>14.3f}{m['b']:>14.3f}{ratio:>10}{m['delta']:>14.3f}")
        lines.append(f"dominant on average latency: {self.dominant}")
        return "\n".join(lines) + "\n"


Summary = Union[Dict[str, Any], MetricsReport, Any]


def _as_summary(item: Summary) -> Dict[str, Any]:
    if isinstance(item, dict):
        return item
    if isinstance(item, MetricsReport):
        return item.to_dict()
    return metrics_report(item).to_dict()


def _ratio(a: float, b: float) -> Optional[float]:
    if b == 0:
        return 1.0 if a == 0 else None
    return a / b


def compare(a: Summary, b: Summary) -> Comparison:
    """
    Ratios a/b and deltas a-b of the latency metrics of two outcomes (or
    their summary dicts). Both must come from the same workload.
    """
    left, right = _as_summary(a), _as_summary(b)
    if left.get("workload_digest") != right.get("workload_digest"):
        raise WorkloadMismatchError("outcomes come from different workloads "
                                    f"({left.get('workload_digest')} vs {right.get('workload_digest')})")
    metrics = {}
    for name in COMPARED_METRICS:
        x, y = float(left["latency"][name]), float(right["latency"][name])
        metrics[name] = {"a": x, "b": y, "ratio": _ratio(x, y), "delta": x - y}

    avg_a, avg_b = metrics["average"]["a"], metrics["average"]["b"]
    dominant = "a" if avg_a < avg_b else "b" if avg_b < avg_a else "tie"
    logger.debug(f"Comparison: average ratio {metrics['average']['ratio']}, dominant {dominant}")
    return Comparison(metrics, dominant)
