"""Run-wide configuration: one object bundling every stage's parameters.

Config files are flat text, one ``section.key = value`` assignment per
line; ``#`` starts a comment and blank lines are ignored. Section names
map one-to-one onto the per-stage parameter dataclasses (``fusion``,
``proximity``, ``contact``, ``lattice``, ``render``, ``controller``).
Unknown sections or keys are rejected so a typo fails loudly instead of
silently running on defaults, and every value passes the owning
dataclass's validation before any work starts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace

from .contact import ContactParams
from .fusion import FusionParams
from .lattice import LatticeConfig
from .optics import RenderConfig
from .proximity import ProximityParams
from .scenario import ControllerParams

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "load_config",
    "serialize_config",
]


class ConfigError(ValueError):
    """Malformed or invalid configuration text."""


@dataclass(frozen=True)
class RunConfig:
    fusion: FusionParams = field(default_factory=FusionParams)
    proximity: ProximityParams = field(default_factory=ProximityParams)
    contact: ContactParams = field(default_factory=ContactParams)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    controller: ControllerParams = field(default_factory=ControllerParams)

    @property
    def seed(self) -> int:
        return self.render.seed

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with the render seed replaced (the CLI --seed override)."""
        return replace(self, render=replace(self.render, seed=int(seed)))


_SECTION_TYPES = {
    "fusion": FusionParams,
    "proximity": ProximityParams,
    "contact": ContactParams,
    "lattice": LatticeConfig,
    "render": RenderConfig,
    "controller": ControllerParams,
}

_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False,
               "1": True, "0": False}


def _coerce(section: str, key: str, raw: str, line_no: int):
    cls = _SECTION_TYPES[section]
    fld = {f.name: f for f in dataclasses.fields(cls)}.get(key)
    if fld is None:
        raise ConfigError(f"line {line_no}: unknown key {section}.{key}")
    ann = str(fld.type)
    try:
        if "None" in ann:  # optional float (lattice.k_diag)
            if raw.lower() in ("none", ""):
                return None
            return float(raw)
        if ann == "bool":
            word = raw.lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[word]
        if ann == "int":
            return int(raw)
        if ann == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: bad value for {section}.{key}: {exc}") from None
    raise ConfigError(f"line {line_no}: unsupported field type for {section}.{key}")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``section.key = value`` text into a validated RunConfig."""
    base = base or RunConfig()
    overrides: dict[str, dict[str, object]] = {name: {} for name in _SECTION_TYPES}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key = value, got {stripped!r}")
        lhs, rhs = stripped.split("=", 1)
        lhs, rhs = lhs.strip(), rhs.strip()
        if "." not in lhs:
            raise ConfigError(f"line {line_no}: key must be section.name, got {lhs!r}")
        section, key = lhs.split(".", 1)
        if section not in _SECTION_TYPES:
            raise ConfigError(f"line {line_no}: unknown section {section!r}")
        overrides[section][key] = _coerce(section, key, rhs, line_no)

    kwargs = {}
    for section, values in overrides.items():
        current = getattr(base, section)
        if values:
            try:
                current = replace(current, **values)
            except ValueError as exc:
                raise ConfigError(f"section {section}: {exc}") from None
        kwargs[section] = current
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def serialize_config(cfg: RunConfig) -> str:
    """Full flat dump; parse_config(serialize_config(c)) == c."""
    lines = []
    for section, cls in _SECTION_TYPES.items():
        obj = getattr(cfg, section)
        for fld in dataclasses.fields(cls):
            value = getattr(obj, fld.name)
            lines.append(f"{section}.{fld.name} = {value}")
    return "\n".join(lines) + "\n"
