# ragsched/errors.py
"""
Exception hierarchy for ragsched.
Each failure the library can report has its own type; the CLI maps them to exit codes.
"""
from typing import List, Optional, Any


class RagschedError(Exception):
    """Base class for all ragsched failures"""

    exit_code = 4


class ConfigError(RagschedError):
    """A profile, config or experiment file failed validation"""

    exit_code = 2

    def __init__(self, message: str, violations: Optional[List[Any]] = None):
        self.violations = list(violations or [])
        if self.violations:
            details = "; ".join(str(v) for v in self.violations)
            message = f"{message}: {details}"
        super().__init__(message)


class InfeasiblePlacementError(RagschedError):
    """A placement does not fit the device capacities"""

    exit_code = 3

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)


class ScenarioInfeasibleError(RagschedError):
    """No placement at all fits the declared scenario"""

    exit_code = 3

    def __init__(self, message: str, binding: str = ""):
        self.binding = binding
        super().__init__(f"{message}: {binding}" if binding else message)


class UnderdeterminedFitError(RagschedError):
    """Not enough distinct batch sizes to fit a power law"""


class SchedulingError(RagschedError):
    """A batch decision could not be made"""


class TimelineError(RagschedError, ValueError):
    """Malformed per-layer timeline input"""


class SimulationError(RagschedError):
    """Runtime failure inside the event engine"""


class TraceFormatError(RagschedError):
    """Malformed workload trace file"""

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class WorkloadMismatchError(RagschedError):
    """Two outcomes were produced from different workloads"""

    exit_code = 2
