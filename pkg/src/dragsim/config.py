"""Scenario configuration and the flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Raised for malformed scenario or experiment files.

    ``lineno`` is the 1-based line of the offending entry, or ``None`` when
    the problem is not tied to a single line.
    """

    def __init__(self, message: str, lineno: int | None = None, path: str | None = None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical constants of the HetNet plus the traffic generator settings.

    Powers are in watts, distances in meters. Arrival rates and loads are
    expressed as fractions of one SBS's capacity.
    """

    n_mbs: int = 1
    n_sbs: int = 10
    sbs_const_power: float = 160.0
    sbs_load_power: float = 216.0
    mbs_load_power: float = 1080.0
    mbs_const_power: float = 780.0
    sbs_sleep_power: float = 0.0
    beta_d: float = 50.0
    beta_s: float = 100.0
    gamma: float = 0.9
    slots_per_day: int = 48
    capacity_ratio: float = 4.0
    load_cap: float = 0.99
    mbs_radius_m: float = 1000.0
    sbs_radius_m: float = 100.0
    sbs_min_dist_m: float = 200.0
    placement_retries: int = 10000
    # traffic generator
    ou_theta: float = 0.05
    ou_sigma: float = 0.03
    scale_low: float = 0.6
    scale_high: float = 1.0
    shift_max: int = 8
    mbs_own_scale: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        powers = (
            self.sbs_const_power,
            self.sbs_load_power,
            self.mbs_load_power,
            self.mbs_const_power,
            self.sbs_sleep_power,
        )
        if any(p < 0 for p in powers):
            raise ConfigError("powers must be non-negative")
        if not 0.0 < self.load_cap < 1.0:
            raise ConfigError("load_cap must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.capacity_ratio <= 0:
            raise ConfigError("capacity_ratio must be positive")
        if self.sbs_min_dist_m > 2 * self.mbs_radius_m:
            raise ConfigError("sbs_min_dist_m exceeds the MBS disc diameter")
        if self.n_mbs < 1 or self.n_sbs < 1:
            raise ConfigError("need at least one MBS and one SBS")
        if self.slots_per_day < 1:
            raise ConfigError("slots_per_day must be positive")
        if self.beta_d < 0 or self.beta_s < 0:
            raise ConfigError("penalty weights must be non-negative")
        if not 0.0 <= self.scale_low <= self.scale_high:
            raise ConfigError("need 0 <= scale_low <= scale_high")
        if self.shift_max < 0:
            raise ConfigError("shift_max must be non-negative")
        if self.ou_theta < 0 or self.ou_sigma < 0:
            raise ConfigError("OU parameters must be non-negative")

    @property
    def n_bs(self) -> int:
        return self.n_mbs + self.n_sbs

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _field_types(cls) -> dict[str, type]:
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    out = {}
    for f in fields(cls):
        name = f.type.__name__ if isinstance(f.type, type) else str(f.type).split("|")[0].strip()
        if name in hints:  # non-scalar fields cannot be set from a file
            out[f.name] = hints[name]
    return out


def _coerce(raw: str, typ: type, lineno: int, key: str, path: str | None):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} (expected {typ.__name__})", lineno, path) from None


def parse_kv_text(text: str, path: str | None = None) -> list[tuple[int, str, str]]:
    """Split ``key = value`` text into ``(lineno, key, value)`` triples."""
    entries = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno, path)
        key, value = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", lineno, path)
        seen[key] = lineno
        entries.append((lineno, key, value))
    return entries


def coerce_entries(cls, entries, path: str | None = None) -> dict:
    types = _field_types(cls)
    values = {}
    for lineno, key, raw in entries:
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        values[key] = _coerce(raw, types[key], lineno, key, path)
    return values


def scenario_from_text(text: str, path: str | None = None) -> ScenarioConfig:
    values = coerce_entries(ScenarioConfig, parse_kv_text(text, path), path)
    try:
        return ScenarioConfig(**values)
    except ConfigError as exc:
        raise ConfigError(str(exc), None, path) from None


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return scenario_from_text(path.read_text(), str(path))


def dump_scenario(config: ScenarioConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(config)]
    return "\n".join(lines) + "\n"
