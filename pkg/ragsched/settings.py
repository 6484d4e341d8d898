# ragsched/settings.py
"""
Tunable defaults for profiling and simulation.
Values live in DEFAULTS; an explicit JSON settings file may overlay them.
There is no environment overlay: every run is fully described by its arguments.
"""
import os
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

DEFAULTS: Dict[str, Any] = {
    # Placement grid
    "GRID_STEP": 0.05,                      # w_gpu / c_gpu step
    "GRID_MAX_BATCH": 128,                  # powers of two up to this

    # Batch scheduling
    "BATCH_CANDIDATES": [8, 16, 32, 48, 64],
    "PROBE_BATCHES": [16, 32, 48, 64],
    "MAX_RETRIEVAL_BATCH": 128,

    # Serial baseline: batch size = rate * window
    "SERIAL_WINDOW_SECONDS": 240.0,

    # Offloading runtime
    "PREFETCH_MODE": "continuous",          # continuous | next_layer | synchronous

    # Workload
    "DEFAULT_TOP_K": 5,
    "DEFAULT_INTERVALS": "1200:4/min,1200:8/min,1200:12/min,1200:16/min",
}


def atomic_write_text(file_path: Union[str, Path], text: str):
    """Atomic write to prevent torn artifacts when a run is interrupted"""
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = file_path.with_suffix(f"{file_path.suffix}.tmp.{os.getpid()}")
    try:
        with open(temp_path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(temp_path, file_path)
    except Exception:
        if temp_path.exists():
            temp_path.unlink()
        raise


def load_settings(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Defaults overlaid with an explicit settings file (unknown keys rejected)"""
    from ragsched.errors import ConfigError

    combined = json.loads(json.dumps(DEFAULTS))  # deep copy
    if path is None:
        return combined
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read settings file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Settings file {path} must hold a JSON object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"Unknown settings in {path}: {', '.join(unknown)}")
    combined.update(data)
    return combined

