# ragsched/domain.py
"""
Core value types shared by every ragsched module: hardware, model, database,
placement, request and trace descriptions.

All types are frozen dataclasses. Time is seconds (float), memory is bytes
(int), fractions are floats in [0, 1]. Construction never raises on bad
values; call validate() to get the list of violated invariants.
"""
import math
from dataclasses import dataclass, field, replace, asdict
from typing import Any, Dict, List, Optional, Union

KiB = 1024
MiB = 1024 ** 2
GiB = 1024 ** 3
TiB = 1024 ** 4

FRACTION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Violation:
    """One violated invariant"""
    field: str
    value: Any
    message: str

    def __str__(self) -> str:
        return f"{self.field}={self.value!r}: {self.message}"


@dataclass(frozen=True)
class HardwareProfile:
    """
    Declared device capacities and link speeds.

    gpu_layer_rate is a dimensionless multiplier applied to every per-layer
    compute time of a ModelProfile (1.0 = the reference GPU the model's
    compute constants were measured on). jitter_sigma is the log-scale
    standard deviation of the mean-preserving lognormal compute jitter.
    """
    gpu_mem: int
    cpu_mem: int
    disk_capacity: int
    bw_gpu_cpu: float
    bw_cpu_disk: float
    gpu_layer_rate: float = 1.0
    jitter_sigma: float = 0.0
    name: str = "custom"

    def scaled(self, time_scale: float) -> "HardwareProfile":
        """Compress time by time_scale: links move the same bytes time_scale times faster"""
        return replace(self, bw_gpu_cpu=self.bw_gpu_cpu * time_scale,
                       bw_cpu_disk=self.bw_cpu_disk * time_scale)


@dataclass(frozen=True)
class ModelProfile:
    """
    LLM footprint and per-layer compute constants.

    C(B) = B * kv_bytes_per_request, H(B) = B * workspace_bytes_per_request.
    Compute constants are seconds per layer per request; decode compute grows
    with B ** decode_batch_exponent, prefill compute linearly.
    """
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
    reference_top_k: int = 5
    name: str = "custom"

    @property
    def per_layer_weight(self) -> float:
        return self.weight_total / self.num_layers

    def kv_cache_bytes(self, batch: int) -> int:
        return batch * self.kv_bytes_per_request

    def workspace_bytes(self, batch: int) -> int:
        return batch * self.workspace_bytes_per_request

    def scaled(self, time_scale: float) -> "ModelProfile":
        return replace(self,
                       compute_prefill_per_layer=self.compute_prefill_per_layer / time_scale,
                       compute_decode_per_layer=self.compute_decode_per_layer / time_scale)


@dataclass(frozen=True)
class DatabaseProfile:
    """Vector database split into equally sized partitions"""
    num_partitions: int
    partition_bytes: int
    search_seconds_per_partition: float
    load_seconds_per_partition: float
    name: str = "custom"

    @property
    def total_bytes(self) -> int:
        return self.num_partitions * self.partition_bytes

    @classmethod
    def derived(cls, num_partitions: int, partition_bytes: int,
                search_seconds_per_partition: float, hw: HardwareProfile,
                name: str = "custom") -> "DatabaseProfile":
        """Load time derived from the host-disk link"""
        return cls(num_partitions, partition_bytes, search_seconds_per_partition,
                   partition_bytes / hw.bw_cpu_disk, name)

    def scaled(self, time_scale: float) -> "DatabaseProfile":
        return replace(self,
                       search_seconds_per_partition=self.search_seconds_per_partition / time_scale,
                       load_seconds_per_partition=self.load_seconds_per_partition / time_scale)


@dataclass(frozen=True)
class PlacementConfig:
    """
    Tier split of weights and KV cache, resident partition count and the
    generation batch size the GPU workspace is allocated for.

    Use from_split() and the with_* helpers to build configs: they derive
    the disk share so both fraction vectors always sum to 1.
    """
    w_gpu: float
    w_cpu: float
    w_disk: float
    c_gpu: float
    c_cpu: float
    c_disk: float
    resident_partitions: int
    gen_batch_size: int

    @classmethod
    def from_split(cls, w_gpu: float, w_cpu: float, c_gpu: float, c_cpu: float,
                   resident_partitions: int, gen_batch_size: int) -> "PlacementConfig":
        return cls(w_gpu, w_cpu, _remainder(w_gpu, w_cpu),
                   c_gpu, c_cpu, _remainder(c_gpu, c_cpu),
                   resident_partitions, gen_batch_size)

    def with_weights(self, w_gpu: float, w_cpu: float) -> "PlacementConfig":
        return replace(self, w_gpu=w_gpu, w_cpu=w_cpu, w_disk=_remainder(w_gpu, w_cpu))

    def with_cache(self, c_gpu: float, c_cpu: float) -> "PlacementConfig":
        return replace(self, c_gpu=c_gpu, c_cpu=c_cpu, c_disk=_remainder(c_gpu, c_cpu))

    def with_partitions(self, resident_partitions: int) -> "PlacementConfig":
        return replace(self, resident_partitions=resident_partitions)

    def with_batch(self, gen_batch_size: int) -> "PlacementConfig":
        return replace(self, gen_batch_size=gen_batch_size)

    @property
    def offloaded_weight_fraction(self) -> float:
        return self.w_cpu + self.w_disk

    def describe(self) -> str:
        return (f"B={self.gen_batch_size} P={self.resident_partitions} "
                f"w=({self.w_gpu:.3f},{self.w_cpu:.3f},{self.w_disk:.3f}) "
                f"c=({self.c_gpu:.3f},{self.c_cpu:.3f},{self.c_disk:.3f})")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PlacementConfig":
        return cls(float(data["w_gpu"]), float(data["w_cpu"]), float(data["w_disk"]),
                   float(data["c_gpu"]), float(data["c_cpu"]), float(data["c_disk"]),
                   int(data["resident_partitions"]), int(data["gen_batch_size"]))


def _remainder(gpu: float, cpu: float) -> float:
    rest = 1.0 - gpu - cpu
    # Absorb rounding noise; genuine over-allocation is left for validate()
    return 0.0 if -FRACTION_TOLERANCE < rest < 0.0 else rest


@dataclass(frozen=True)
class Request:
    id: int
    arrival_time: float
    top_k: int = 5


@dataclass(frozen=True)
class RequestTrace:
    """Per-stage timestamps of one served request"""
    request_id: int
    arrival: float
    retrieval_start: float
    retrieval_end: float
    generation_start: float
    generation_end: float
    top_k: int = 5
    retrieval_batch: int = -1
    generation_batch: int = -1

    @property
    def completion(self) -> float:
        return self.generation_end

    @property
    def waiting(self) -> float:
        return (self.retrieval_start - self.arrival) + (self.generation_start - self.retrieval_end)

    @property
    def retrieval(self) -> float:
        return self.retrieval_end - self.retrieval_start

    @property
    def generation(self) -> float:
        return self.generation_end - self.generation_start

    @property
    def latency(self) -> float:
        return self.completion - self.arrival


Validatable = Union[HardwareProfile, ModelProfile, DatabaseProfile, PlacementConfig,
                    Request, RequestTrace]


def validate(obj: Validatable, db: Optional[DatabaseProfile] = None) -> List[Violation]:
    """
    Return every violated invariant of a profile, config, request or trace.
    An empty list means the value is valid. Passing db additionally checks
    a PlacementConfig's partition count against the database.
    """
    problems: List[Violation] = []

    def need(ok: bool, name: str, value: Any, message: str):
        if not ok:
            problems.append(Violation(name, value, message))

    if isinstance(obj, HardwareProfile):
        for name in ("gpu_mem", "cpu_mem", "disk_capacity"):
            value = getattr(obj, name)
            need(value > 0, name, value, "capacity must be > 0")
        for name in ("bw_gpu_cpu", "bw_cpu_disk"):
            value = getattr(obj, name)
            need(value > 0, name, value, "bandwidth must be > 0")
        need(obj.gpu_layer_rate > 0, "gpu_layer_rate", obj.gpu_layer_rate, "must be > 0")
        need(obj.jitter_sigma >= 0, "jitter_sigma", obj.jitter_sigma, "must be >= 0")

    elif isinstance(obj, ModelProfile):
        need(obj.num_layers >= 1, "num_layers", obj.num_layers, "must be >= 1")
        need(obj.weight_total > 0, "weight_total", obj.weight_total, "must be > 0")
        need(obj.kv_bytes_per_request >= 0, "kv_bytes_per_request",
             obj.kv_bytes_per_request, "C(B) coefficient must be >= 0")
        need(obj.workspace_bytes_per_request >= 0, "workspace_bytes_per_request",
             obj.workspace_bytes_per_request, "H(B) coefficient must be >= 0")
        need(obj.compute_prefill_per_layer >= 0, "compute_prefill_per_layer",
             obj.compute_prefill_per_layer, "must be >= 0")
        need(obj.compute_decode_per_layer >= 0, "compute_decode_per_layer",
             obj.compute_decode_per_layer, "must be >= 0")
        need(obj.output_tokens >= 1, "output_tokens", obj.output_tokens, "must be >= 1")
        need(obj.decode_batch_exponent >= 0, "decode_batch_exponent",
             obj.decode_batch_exponent, "must be >= 0")
        need(obj.decode_workspace_fraction >= 0, "decode_workspace_fraction",
             obj.decode_workspace_fraction, "must be >= 0")
        need(obj.kv_traffic_coefficient >= 0, "kv_traffic_coefficient",
             obj.kv_traffic_coefficient, "must be >= 0")
        need(obj.reference_top_k >= 1, "reference_top_k", obj.reference_top_k, "must be >= 1")

    elif isinstance(obj, DatabaseProfile):
        need(obj.num_partitions >= 1, "num_partitions", obj.num_partitions, "must be >= 1")
        need(obj.partition_bytes > 0, "partition_bytes", obj.partition_bytes, "must be > 0")
        need(obj.search_seconds_per_partition >= 0, "search_seconds_per_partition",
             obj.search_seconds_per_partition, "must be >= 0")
        need(obj.load_seconds_per_partition >= 0, "load_seconds_per_partition",
             obj.load_seconds_per_partition, "must be >= 0")

    elif isinstance(obj, PlacementConfig):
        for name in ("w_gpu", "w_cpu", "w_disk", "c_gpu", "c_cpu", "c_disk"):
            value = getattr(obj, name)
            need(0.0 <= value <= 1.0, name, value, "fraction must lie in [0, 1]")
        w_sum = obj.w_gpu + obj.w_cpu + obj.w_disk
        need(abs(w_sum - 1.0) <= FRACTION_TOLERANCE, "w_gpu+w_cpu+w_disk", w_sum,
             f"weight fractions sum {w_sum:.6g} ≠ 1")
        c_sum = obj.c_gpu + obj.c_cpu + obj.c_disk
        need(abs(c_sum - 1.0) <= FRACTION_TOLERANCE, "c_gpu+c_cpu+c_disk", c_sum,
             f"cache fractions sum {c_sum:.6g} ≠ 1")
        need(obj.resident_partitions >= 0, "resident_partitions",
             obj.resident_partitions, "must be >= 0")
        if db is not None:
            need(obj.resident_partitions <= db.num_partitions, "resident_partitions",
                 obj.resident_partitions, f"must be <= num_partitions ({db.num_partitions})")
        need(obj.gen_batch_size >= 1, "gen_batch_size", obj.gen_batch_size, "must be >= 1")

    elif isinstance(obj, Request):
        need(math.isfinite(obj.arrival_time) and obj.arrival_time >= 0,
             "arrival_time", obj.arrival_time, "must be a finite value >= 0")
        need(obj.top_k >= 1, "top_k", obj.top_k, "must be >= 1")

    elif isinstance(obj, RequestTrace):
        stamps = [("arrival", obj.arrival), ("retrieval_start", obj.retrieval_start),
                  ("retrieval_end", obj.retrieval_end),
                  ("generation_start", obj.generation_start),
                  ("generation_end", obj.generation_end)]
        for (prev_name, prev), (name, value) in zip(stamps, stamps[1:]):
            need(value >= prev, name, value, f"must be >= {prev_name} ({prev})")

    else:
        raise TypeError(f"validate() does not know {type(obj).__name__}")

    return problems


def is_valid(obj: Validatable, db: Optional[DatabaseProfile] = None) -> bool:
    return not validate(obj, db)


def ensure_valid(obj: Validatable, what: str, db: Optional[DatabaseProfile] = None):
    """Raise ConfigError listing every violation"""
    from ragsched.errors import ConfigError
    problems = validate(obj, db)
    if problems:
        raise ConfigError(f"Invalid {what}", problems)
