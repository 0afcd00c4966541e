"""Run configuration: one YAML file with typed sections and CLI overrides.

Unknown keys are rejected; every run writes its fully resolved config next
to its outputs so any table can be regenerated from files alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import yaml

from .model import ModelConfig
from .synthgen import GeneratorConfig
from .train import TrainerConfig


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 2000
    n_test: int = 256


@dataclass(frozen=True)
class EvalConfig:
    shuffle_seed: int = 0
    sweep_samples: int = 128
    place_samples: int = 64
    sweep_angles: int = 9
    place_cell: float = 0.25
    place_grid: int = 5


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig = GeneratorConfig()
    model: ModelConfig = ModelConfig()
    trainer: TrainerConfig = TrainerConfig()
    data: DataConfig = DataConfig()
    eval: EvalConfig = EvalConfig()


_SECTIONS = {
    "generator": GeneratorConfig,
    "model": ModelConfig,
    "trainer": TrainerConfig,
    "data": DataConfig,
    "eval": EvalConfig,
}


class ConfigError(ValueError):
    pass


def _coerce(cls, values: dict):
    names = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    fixed = {}
    for k, v in values.items():
        if isinstance(v, list):
            v = tuple(v)
        fixed[k] = v
    return cls(**fixed)


def load_run_config(path: str | None = None, text: str | None = None) -> RunConfig:
    if text is None:
        with open(path) as f:
            text = f.read()
    raw = yaml.safe_load(text) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    parts = {name: _coerce(cls, raw.get(name) or {}) for name, cls in _SECTIONS.items()}
    return RunConfig(**parts)


def _parse_value(field_type, raw: str):
    text = yaml.safe_load(raw)
    if isinstance(text, list):
        return tuple(text)
    return text


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply "section.key=value" overrides (values parsed as YAML scalars)."""
    sections = {name: getattr(cfg, name) for name in _SECTIONS}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, raw = item.split("=", 1)
        if "." not in key:
            raise ConfigError(f"override key {key!r} must be section.key")
        section, field_name = key.split(".", 1)
        if section not in sections:
            raise ConfigError(f"unknown config section {section!r}")
        cls = _SECTIONS[section]
        valid = {f.name for f in fields(cls)}
        if field_name not in valid:
            raise ConfigError(f"unknown key {field_name!r} in section {section!r}")
        sections[section] = replace(sections[section], **{field_name: _parse_value(None, raw)})
    return RunConfig(**sections)


def resolved_yaml(cfg: RunConfig) -> str:
    doc = {name: asdict(getattr(cfg, name)) for name in _SECTIONS}
    for section in doc.values():
        for k, v in section.items():
            if isinstance(v, tuple):
                section[k] = list(v)
    return yaml.safe_dump(doc, sort_keys=True)
