"""
Parsing of human-readable quantities used in config files and CLI flags:
byte sizes ("24GiB"), bandwidths ("16 GiB/s"), durations ("20min") and
request rates ("4/min").
"""
import re
from typing import Union

from ragsched.domain import KiB, MiB, GiB, TiB
from ragsched.errors import ConfigError

Number = Union[int, float]

BYTE_UNITS = {
    "": 1, "b": 1,
    "kib": KiB, "mib": MiB, "gib": GiB, "tib": TiB,
    "kb": 10 ** 3, "mb": 10 ** 6, "gb": 10 ** 9, "tb": 10 ** 12,
}

TIME_UNITS = {"": 1.0, "s": 1.0, "sec": 1.0, "min": 60.0, "m": 60.0, "h": 3600.0}

_QUANTITY = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([A-Za-z]*)\s*$")


def _split(text: str, what: str):
    match = _QUANTITY.match(text)
    if not match:
        raise ConfigError(f"Cannot parse {what} '{text}'")
    return float(match.group(1)), match.group(2).lower()


def parse_bytes(value: Union[Number, str]) -> int:
    """Byte count from an integer or a suffixed string (KiB/MiB/GiB/TiB or KB/MB/GB/TB)"""
    if isinstance(value, bool):
        raise ConfigError(f"Cannot parse byte size {value!r}")
    if isinstance(value, (int, float)):
        return int(round(value))
    number, unit = _split(str(value), "byte size")
    if unit not in BYTE_UNITS:
        raise ConfigError(f"Unknown byte unit '{unit}' in '{value}'")
    return int(round(number * BYTE_UNITS[unit]))


def parse_bandwidth(value: Union[Number, str]) -> float:
    """Bytes per second from a number or a string such as '16 GiB/s'"""
    if isinstance(value, bool):
        raise ConfigError(f"Cannot parse bandwidth {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if text.lower().endswith("/s"):
        text = text[:-2]
    return float(parse_bytes(text))


def parse_duration(value: Union[Number, str]) -> float:
    """Seconds from a number or a string such as '20min', '1h', '90s'"""
    if isinstance(value, bool):
        raise ConfigError(f"Cannot parse duration {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    number, unit = _split(str(value), "duration")
    if unit not in TIME_UNITS:
        raise ConfigError(f"Unknown time unit '{unit}' in '{value}'")
    return number * TIME_UNITS[unit]


def parse_rate(value: Union[Number, str]) -> float:
    """Requests per second from a number or a string such as '4/min', '0.5/s', '30/h'"""
    if isinstance(value, bool):
        raise ConfigError(f"Cannot parse rate {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    count, _, unit = text.partition("/")
    try:
        number = float(count)
    except ValueError:
        raise ConfigError(f"Cannot parse rate '{value}'")
    unit = unit.strip().lower()
    if unit not in TIME_UNITS:
        raise ConfigError(f"Unknown rate unit '/{unit}' in '{value}'")
    return number / TIME_UNITS[unit]


def format_bytes(num_bytes: Number) -> str:
    """Compact binary-unit rendering for reports"""
    value = float(num_bytes)
    for unit, size in (("TiB", TiB), ("GiB", GiB), ("MiB", MiB), ("KiB", KiB)):
        if abs(value) >= size:
            return f"{value / size:.2f} {unit}"
    return f"{value:.0f} B"
