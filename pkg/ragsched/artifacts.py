"""
Result files of a simulation run: traces.csv, events.jsonl and summary.json.
All writes are atomic and byte-stable for a fixed outcome.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import pandas as pd

from ragsched.errors import ConfigError
from ragsched.metrics import metrics_report
from ragsched.settings import atomic_write_text

logger = logging.getLogger(__name__)

TRACES_FILE = "traces.csv"
EVENTS_FILE = "events.jsonl"
SUMMARY_FILE = "summary.json"

TRACE_COLUMNS = [
    "id", "arrival", "retrieval_start", "retrieval_end", "generation_start",
    "generation_end", "completion", "waiting", "retrieval", "generation", "latency",
    "top_k", "retrieval_batch", "generation_batch",
]


def ensure_writable(paths: Iterable[Union[str, Path]], force: bool):
    """Refuse to overwrite existing outputs unless forced"""
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise ConfigError(f"Output exists (use --force to overwrite): {', '.join(existing)}")


def to_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json(data: Any, path: Union[str, Path]):
    atomic_write_text(path, to_json(data))


def traces_csv(outcome) -> str:
    rows = [(t.request_id, t.arrival, t.retrieval_start, t.retrieval_end, t.generation_start,
             t.generation_end, t.completion, t.waiting, t.retrieval, t.generation, t.latency,
             t.top_k, t.retrieval_batch, t.generation_batch) for t in outcome.traces]
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def events_jsonl(outcome) -> str:
    return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in outcome.events)


def summary(outcome) -> Dict[str, Any]:
    return metrics_report(outcome).to_dict()


def outcome_paths(out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    return [out_dir / TRACES_FILE, out_dir / EVENTS_FILE, out_dir / SUMMARY_FILE]


def write_outcome(outcome, out_dir: Union[str, Path], force: bool = False) -> List[Path]:
    paths = outcome_paths(out_dir)
    ensure_writable(paths, force)
    traces_path, events_path, summary_path = paths
    atomic_write_text(traces_path, traces_csv(outcome))
    atomic_write_text(events_path, events_jsonl(outcome))
    write_json(summary(outcome), summary_path)
    logger.info(f"Wrote {len(outcome.traces)} traces and {len(outcome.events)} events to {out_dir}")
    return paths


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read {path}: {e}")


def read_summary(path: Union[str, Path]) -> Dict[str, Any]:
    """summary.json itself or the run directory holding it"""
    path = Path(path)
    if path.is_dir():
        path = path / SUMMARY_FILE
    return read_json(path)
