"""
Structured config files (YAML) for profiles, placements and experiments.

Files are parsed through pydantic schemas into the frozen domain types.
Byte sizes accept KiB/MiB/GiB/TiB (and KB/MB/GB/TB) suffixes, bandwidths
the same followed by '/s', durations s/min/h and rates N/s, N/min, N/h.
A profile reference is an inline mapping, a path relative to the
referencing file, or 'preset:<name>'.
"""
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ragsched.domain import (
    DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, ensure_valid,
)
from ragsched.errors import ConfigError
from ragsched.presets import get_preset
from ragsched.prefetch_timeline import PrefetchMode
from ragsched.settings import DEFAULTS, atomic_write_text
from ragsched.units import parse_bandwidth, parse_bytes, parse_duration, parse_rate
from ragsched.workload import IntervalSchedule, parse_intervals

logger = logging.getLogger(__name__)

PRESET_PREFIX = "preset:"


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HardwareSchema(_Schema):
    gpu_mem: int
    cpu_mem: int
    disk_capacity: int
    bw_gpu_cpu: float
    bw_cpu_disk: float
    gpu_layer_rate: float = 1.0
    jitter_sigma: float = 0.0
    name: str = "custom"

    @field_validator("gpu_mem", "cpu_mem", "disk_capacity", mode="before")
    @classmethod
    def _bytes(cls, value):
        return parse_bytes(value)

    @field_validator("bw_gpu_cpu", "bw_cpu_disk", mode="before")
    @classmethod
    def _bandwidth(cls, value):
        return parse_bandwidth(value)

    def to_domain(self) -> HardwareProfile:
        return HardwareProfile(**self.model_dump())


class ModelSchema(_Schema):
    num_layers: int
    weight_total: int
    kv_bytes_per_request: int
    workspace_bytes_per_request: int
    compute_prefill_per_layer: float
    compute_decode_per_layer: float
    output_tokens: int
    decode_batch_exponent: float = 1.0
    decode_workspace_fraction: float = 0.25
    kv_traffic_coefficient: float = 1.0
    reference_top_k: int = Field(default_factory=lambda: DEFAULTS["DEFAULT_TOP_K"])
    name: str = "custom"

    @field_validator("weight_total", "kv_bytes_per_request", "workspace_bytes_per_request",
                     mode="before")
    @classmethod
    def _bytes(cls, value):
        return parse_bytes(value)

    @field_validator("compute_prefill_per_layer", "compute_decode_per_layer", mode="before")
    @classmethod
    def _seconds(cls, value):
        return parse_duration(value)

    def to_domain(self) -> ModelProfile:
        return ModelProfile(**self.model_dump())


class DatabaseSchema(_Schema):
    num_partitions: int
    partition_bytes: int
    search_seconds_per_partition: float
    load_seconds_per_partition: Optional[float] = None
    name: str = "custom"

    @field_validator("partition_bytes", mode="before")
    @classmethod
    def _bytes(cls, value):
        return parse_bytes(value)

    @field_validator("search_seconds_per_partition", "load_seconds_per_partition", mode="before")
    @classmethod
    def _seconds(cls, value):
        return None if value is None else parse_duration(value)

    def to_domain(self, hw: Optional[HardwareProfile] = None) -> DatabaseProfile:
        if self.load_seconds_per_partition is None:
            if hw is None:
                raise ConfigError("load_seconds_per_partition is required without a hardware profile")
            return DatabaseProfile.derived(self.num_partitions, self.partition_bytes,
                                           self.search_seconds_per_partition, hw, self.name)
        return DatabaseProfile(self.num_partitions, self.partition_bytes,
                               self.search_seconds_per_partition,
                               self.load_seconds_per_partition, self.name)


class PlacementSchema(_Schema):
    w_gpu: float
    w_cpu: float
    w_disk: Optional[float] = None
    c_gpu: float
    c_cpu: float
    c_disk: Optional[float] = None
    resident_partitions: int
    gen_batch_size: int

    def to_domain(self) -> PlacementConfig:
        cfg = PlacementConfig.from_split(self.w_gpu, self.w_cpu, self.c_gpu, self.c_cpu,
                                         self.resident_partitions, self.gen_batch_size)
        if self.w_disk is not None:
            cfg = replace(cfg, w_disk=self.w_disk)
        if self.c_disk is not None:
            cfg = replace(cfg, c_disk=self.c_disk)
        return cfg


class IntervalItem(_Schema):
    duration: float
    rate: float

    @field_validator("duration", mode="before")
    @classmethod
    def _duration(cls, value):
        return parse_duration(value)

    @field_validator("rate", mode="before")
    @classmethod
    def _rate(cls, value):
        return parse_rate(value)


class ExperimentSchema(_Schema):
    name: str = "experiment"
    hardware: Union[str, Dict[str, Any]]
    model: Union[str, Dict[str, Any]]
    database: Union[str, Dict[str, Any]]
    intervals: Optional[Union[str, List[IntervalItem]]] = None
    workload: Optional[str] = None
    modes: List[str] = Field(default_factory=lambda: ["pipelined", "serial"])
    batch_policy: str = "backlog_aware"
    prefetch_mode: PrefetchMode = Field(
        default_factory=lambda: PrefetchMode(DEFAULTS["PREFETCH_MODE"]))
    output_dir: Optional[str] = None
    seed: int = 7
    time_scale: float = Field(default=1.0, gt=0)
    top_k: int = Field(default_factory=lambda: DEFAULTS["DEFAULT_TOP_K"], ge=1)
    batch_candidates: List[int] = Field(default_factory=lambda: list(DEFAULTS["BATCH_CANDIDATES"]))
    probe_batches: List[int] = Field(default_factory=lambda: list(DEFAULTS["PROBE_BATCHES"]))
    partition_candidates: Optional[List[int]] = None
    max_retrieval_batch: int = Field(default_factory=lambda: DEFAULTS["MAX_RETRIEVAL_BATCH"], ge=1)
    serial_window: float = Field(default_factory=lambda: DEFAULTS["SERIAL_WINDOW_SECONDS"])
    serial_batch_size: Optional[int] = Field(default=None, ge=1)
    fixed_batch: Optional[int] = Field(default=None, ge=1)
    policy: Optional[str] = None

    @field_validator("serial_window", mode="before")
    @classmethod
    def _window(cls, value):
        return parse_duration(value)

    @field_validator("modes")
    @classmethod
    def _modes(cls, value):
        unknown = [m for m in value if m not in ("pipelined", "serial")]
        if unknown:
            raise ValueError(f"unknown modes {unknown}")
        return value

    @field_validator("batch_policy")
    @classmethod
    def _policy(cls, value):
        if value not in ("backlog_aware", "fixed_max"):
            raise ValueError(f"unknown batch policy '{value}'")
        return value

    @field_validator("batch_candidates", "probe_batches")
    @classmethod
    def _sizes(cls, value):
        if not value or any(b < 1 for b in value):
            raise ValueError("must be a non-empty list of sizes >= 1")
        return sorted(set(value))


SCHEMAS: Dict[type, Type[_Schema]] = {
    HardwareProfile: HardwareSchema,
    ModelProfile: ModelSchema,
    DatabaseProfile: DatabaseSchema,
    PlacementConfig: PlacementSchema,
}


def _errors(e: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()]


def read_yaml(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed YAML in {path}: {e}")


def from_config_dict(kind: type, data: Dict[str, Any],
                     hw: Optional[HardwareProfile] = None):
    """Build and validate a profile or placement of type `kind` from a mapping"""
    if not isinstance(data, dict):
        raise ConfigError(f"{kind.__name__} config must be a mapping, got {type(data).__name__}")
    try:
        schema = SCHEMAS[kind].model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid {kind.__name__}", _errors(e))
    obj = schema.to_domain(hw) if kind is DatabaseProfile else schema.to_domain()
    ensure_valid(obj, kind.__name__)
    return obj


def to_config_dict(obj) -> Dict[str, Any]:
    """Plain mapping that from_config_dict reads back to an equal object"""
    return asdict(obj)


def write_config(obj, path: Union[str, Path]):
    atomic_write_text(path, yaml.safe_dump(to_config_dict(obj), sort_keys=False))


def read_config(path: Union[str, Path], kind: type, hw: Optional[HardwareProfile] = None):
    return from_config_dict(kind, read_yaml(path), hw)


def load_profile(ref: Union[str, Dict[str, Any]], kind: type, base_dir: Path = Path("."),
                 hw: Optional[HardwareProfile] = None):
    """Resolve an inline mapping, a file path or 'preset:<name>'"""
    if isinstance(ref, str) and ref.startswith(PRESET_PREFIX):
        preset = get_preset(ref[len(PRESET_PREFIX):], kind)
        if kind is DatabaseProfile and hw is not None:
            # Re-derive partition loads for the experiment's host-disk link
            return DatabaseProfile.derived(preset.num_partitions, preset.partition_bytes,
                                           preset.search_seconds_per_partition, hw, preset.name)
        return preset
    if isinstance(ref, str):
        return read_config(base_dir / ref, kind, hw)
    return from_config_dict(kind, ref, hw)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one experiment run needs, with profiles resolved"""
    name: str
    hardware: HardwareProfile
    model: ModelProfile
    database: DatabaseProfile
    schedule: Optional[IntervalSchedule]
    workload_path: Optional[Path]
    modes: Tuple[str, ...]
    batch_policy: str
    prefetch_mode: PrefetchMode
    output_dir: Path
    seed: int
    time_scale: float
    top_k: int
    batch_candidates: Tuple[int, ...]
    probe_batches: Tuple[int, ...]
    partition_candidates: Optional[Tuple[int, ...]]
    max_retrieval_batch: int
    serial_window: float
    serial_batch_size: Optional[int]
    fixed_batch: Optional[int]
    policy_path: Optional[Path]

    def scaled(self) -> "ExperimentSpec":
        """Apply time_scale to every time constant; the result has time_scale 1"""
        ts = self.time_scale
        if ts == 1.0:
            return self
        return replace(
            self,
            hardware=self.hardware.scaled(ts),
            model=self.model.scaled(ts),
            database=self.database.scaled(ts),
            schedule=None if self.schedule is None else self.schedule.scaled(ts),
            serial_window=self.serial_window / ts,
            time_scale=1.0,
        )


def parse_experiment(data: Dict[str, Any], base_dir: Path = Path(".")) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise ConfigError("Experiment config must be a mapping")
    try:
        schema = ExperimentSchema.model_validate(data)
    except ValidationError as e:
        raise ConfigError("Invalid experiment", _errors(e))

    hardware = load_profile(schema.hardware, HardwareProfile, base_dir)
    model = load_profile(schema.model, ModelProfile, base_dir)
    database = load_profile(schema.database, DatabaseProfile, base_dir, hardware)

    if isinstance(schema.intervals, str):
        schedule = parse_intervals(schema.intervals)
    elif schema.intervals is not None:
        schedule = IntervalSchedule.of((i.duration, i.rate) for i in schema.intervals)
        problems = schedule.violations()
        if problems:
            raise ConfigError("Invalid interval schedule", problems)
    else:
        schedule = None
    if schedule is None and schema.workload is None:
        raise ConfigError("Experiment needs 'intervals' or 'workload'")

    return ExperimentSpec(
        name=schema.name,
        hardware=hardware,
        model=model,
        database=database,
        schedule=schedule,
        workload_path=None if schema.workload is None else base_dir / schema.workload,
        modes=tuple(schema.modes),
        batch_policy=schema.batch_policy,
        prefetch_mode=schema.prefetch_mode,
        output_dir=base_dir / (schema.output_dir or f"runs/{schema.name}"),
        seed=schema.seed,
        time_scale=schema.time_scale,
        top_k=schema.top_k,
        batch_candidates=tuple(schema.batch_candidates),
        probe_batches=tuple(schema.probe_batches),
        partition_candidates=(None if schema.partition_candidates is None
                              else tuple(schema.partition_candidates)),
        max_retrieval_batch=schema.max_retrieval_batch,
        serial_window=schema.serial_window,
        serial_batch_size=schema.serial_batch_size,
        fixed_batch=schema.fixed_batch,
        policy_path=None if schema.policy is None else base_dir / schema.policy,
    )


def load_experiment(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    spec = parse_experiment(read_yaml(path), path.parent)
    logger.info(f"Loaded experiment '{spec.name}' from {path}")
    return spec
