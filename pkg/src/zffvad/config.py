"""Flat run configuration shared by the command-line tools.

A config file holds ``key = value`` lines (``#`` starts a comment). Keys are
the field names of :class:`RunConfig`; anything else is rejected.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .pipeline import ENTROPY_SOURCES, PipelineConfig
from .zff import ZffConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    window_divisors: tuple = (1.0, 5.0, 10.0)
    f0_min_hz: float = 60.0
    f0_max_hz: float = 400.0
    t0_fallback_ms: float = 5.0
    min_periodicity: float = 0.1
    cascade_depth: int = 1
    running_mean_ms: float = 40.0
    entropy_window_ms: float = 20.0
    threshold_block_ms: float = 300.0
    min_segment_ms: float = 50.0
    merge_gap_ms: float = 30.0
    entropy_floor: float = 1e-6
    entropy_source: str = "y0"
    activity_floor: float = 0.01
    hop_ms: float = 10.0
    jobs: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        try:
            self.zff_config()
            self.pipeline_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.hop_ms <= 0:
            raise ConfigError("hop_ms must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def zff_config(self) -> ZffConfig:
        return ZffConfig(window_divisors=self.window_divisors,
                         f0_search_hz=(self.f0_min_hz, self.f0_max_hz),
                         t0_fallback_ms=self.t0_fallback_ms,
                         min_periodicity=self.min_periodicity,
                         cascade_depth=self.cascade_depth)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(running_mean_ms=self.running_mean_ms,
                              entropy_window_ms=self.entropy_window_ms,
                              threshold_block_ms=self.threshold_block_ms,
                              min_segment_ms=self.min_segment_ms,
                              merge_gap_ms=self.merge_gap_ms,
                              entropy_floor=self.entropy_floor,
                              entropy_source=self.entropy_source,
                              activity_floor=self.activity_floor)

    def updated(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        unknown = set(changes) - set(FIELD_TYPES)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(f"{v:g}" for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _divisors(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


FIELD_TYPES = {
    f.name: {"window_divisors": _divisors, "jobs": int, "cascade_depth": int, "entropy_source": str,
             "output_dir": str}.get(f.name, float)
    for f in fields(RunConfig)
}


def parse_value(key: str, text: str):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    if key == "entropy_source" and text not in ENTROPY_SOURCES:
        raise ConfigError(f"entropy_source must be one of {ENTROPY_SOURCES}")
    try:
        return FIELD_TYPES[key](text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read(), str(path))
    return (base or RunConfig()).updated(**values)
