"""
Synthetic workloads: interval-rated Poisson arrivals and the workload.csv
trace format (columns id, arrival_seconds, top_k).
"""
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ragsched.domain import Request, Violation
from ragsched.errors import ConfigError, TraceFormatError
from ragsched.settings import DEFAULTS, atomic_write_text
from ragsched.units import parse_duration, parse_rate

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["id", "arrival_seconds", "top_k"]


@dataclass(frozen=True)
class IntervalSchedule:
    """Piecewise-constant arrival rate: ordered (duration seconds, rate requests/second)"""
    intervals: Tuple[Tuple[float, float], ...]

    @classmethod
    def of(cls, intervals: Iterable[Tuple[float, float]]) -> "IntervalSchedule":
        return cls(tuple((float(d), float(r)) for d, r in intervals))

    @property
    def total_duration(self) -> float:
        return sum(d for d, _ in self.intervals)

    def boundaries(self) -> List[Tuple[float, float]]:
        """(start, end) of every interval"""
        spans, start = [], 0.0
        for duration, _ in self.intervals:
            spans.append((start, start + duration))
            start += duration
        return spans

    def interval_index(self, t: float) -> int:
        """Index of the interval containing t; times past the end map to the last one"""
        for i, (start, end) in enumerate(self.boundaries()):
            if t < end:
                return i
        return len(self.intervals) - 1

    def rate_at(self, t: float) -> float:
        if not self.intervals:
            return 0.0
        return self.intervals[self.interval_index(t)][1]

    def expected_count(self) -> float:
        return sum(d * r for d, r in self.intervals)

    def scaled(self, time_scale: float) -> "IntervalSchedule":
        return IntervalSchedule(tuple((d / time_scale, r * time_scale)
                                      for d, r in self.intervals))

    def violations(self) -> List[Violation]:
        problems = []
        if not self.intervals:
            problems.append(Violation("intervals", [], "schedule needs at least one interval"))
        for i, (duration, rate) in enumerate(self.intervals):
            if not (duration > 0 and math.isfinite(duration)):
                problems.append(Violation(f"intervals[{i}].duration", duration, "must be > 0"))
            if not (rate >= 0 and math.isfinite(rate)):
                problems.append(Violation(f"intervals[{i}].rate", rate, "must be >= 0"))
        return problems

    def to_string(self) -> str:
        return ",".join(f"{d:g}:{r * 60:g}/min" for d, r in self.intervals)


def parse_intervals(text: str) -> IntervalSchedule:
    """
    Parse 'duration:rate' pairs separated by commas, e.g.
    '1200:4/min,1200:8/min' or '20min:0.1/s'.
    """
    pairs = []
    for chunk in (c.strip() for c in text.split(",")):
        if not chunk:
            continue
        duration, sep, rate = chunk.partition(":")
        if not sep:
            raise ConfigError(f"Interval '{chunk}' must look like '<duration>:<rate>'")
        pairs.append((parse_duration(duration), parse_rate(rate)))
    schedule = IntervalSchedule.of(pairs)
    problems = schedule.violations()
    if problems:
        raise ConfigError(f"Invalid interval schedule '{text}'", problems)
    return schedule


def default_schedule() -> IntervalSchedule:
    return parse_intervals(DEFAULTS["DEFAULT_INTERVALS"])


def generate_poisson(schedule: IntervalSchedule, seed: int,
                     top_k: Optional[int] = None) -> List[Request]:
    """Exponential inter-arrival gaps per interval; ids are sequential from 0"""
    if top_k is None:
        top_k = DEFAULTS["DEFAULT_TOP_K"]
    problems = schedule.violations()
    if problems:
        raise ConfigError("Invalid interval schedule", problems)
    rng = np.random.default_rng(seed)
    arrivals: List[float] = []
    for (start, end), (_, rate) in zip(schedule.boundaries(), schedule.intervals):
        if rate <= 0:
            continue
        t = start
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= end:
                break
            arrivals.append(float(t))
    logger.debug(f"Generated {len(arrivals)} arrivals over {schedule.total_duration:g} s "
                 f"(expected {schedule.expected_count():g})")
    return [Request(i, t, top_k) for i, t in enumerate(arrivals)]


def trace_to_csv(requests: Sequence[Request]) -> str:
    frame = pd.DataFrame({
        "id": pd.Series([r.id for r in requests], dtype="int64"),
        "arrival_seconds": pd.Series([r.arrival_time for r in requests], dtype="float64"),
        "top_k": pd.Series([r.top_k for r in requests], dtype="int64"),
    }, columns=TRACE_COLUMNS)
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def save_trace(requests: Sequence[Request], path: Union[str, Path]):
    atomic_write_text(path, trace_to_csv(requests))
    logger.info(f"Wrote {len(requests)} requests to {path}")


def load_trace(path: Union[str, Path]) -> List[Request]:
    """Read workload.csv; any malformed row raises TraceFormatError with its line number"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise TraceFormatError(f"Workload file {path} does not exist")
    except pd.errors.EmptyDataError:
        raise TraceFormatError("missing header", line=1)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise TraceFormatError(f"Cannot parse {path}: {e}")

    if list(frame.columns) != TRACE_COLUMNS:
        raise TraceFormatError(f"header must be {','.join(TRACE_COLUMNS)}, "
                               f"got {','.join(map(str, frame.columns))}", line=1)

    requests: List[Request] = []
    seen = set()
    for row, (raw_id, raw_arrival, raw_top_k) in enumerate(frame.itertuples(index=False)):
        line = row + 2
        try:
            request_id = int(_cell(raw_id))
            arrival = float(_cell(raw_arrival))
            top_k = int(_cell(raw_top_k))
        except ValueError as e:
            raise TraceFormatError(str(e), line=line)
        if not math.isfinite(arrival) or arrival < 0:
            raise TraceFormatError(f"arrival_seconds must be a finite value >= 0, got {raw_arrival}",
                                   line=line)
        if top_k < 1:
            raise TraceFormatError(f"top_k must be >= 1, got {top_k}", line=line)
        if request_id in seen:
            raise TraceFormatError(f"duplicate request id {request_id}", line=line)
        seen.add(request_id)
        requests.append(Request(request_id, arrival, top_k))
    logger.debug(f"Loaded {len(requests)} requests from {path}")
    return requests


def _cell(value) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValueError("missing value")
    return value.strip()


def workload_digest(requests: Iterable[Request]) -> str:
    """SHA-256 over (id, arrival) pairs; equal digests mean the same workload"""
    digest = hashlib.sha256()
    for r in requests:
        digest.update(f"{r.id}:{r.arrival_time!r}\n".encode("utf-8"))
    return digest.hexdigest()


def requests_per_interval(requests: Sequence[Request],
                          schedule: IntervalSchedule) -> List[int]:
    counts = [0] * len(schedule.intervals)
    for r in requests:
        counts[schedule.interval_index(r.arrival_time)] += 1
    return counts
