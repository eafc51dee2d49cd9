"""Experiment configuration: desk-scale defaults and the key=value file format.

A config file is plain text, one ``key = value`` pair per line; blank lines
and ``#`` comments are ignored. Values are coerced to the field's declared
type, and the variant list is comma-separated. Unknown keys are rejected so
a typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .training import VARIANTS

__all__ = ["ExperimentConfig", "parse_config", "load_config", "format_config",
           "write_config"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs: data scale, CV plan, training knobs."""

    seed: int = 0
    repeats: int = 3
    folds: int = 5
    epochs: int = 30
    batch_source: int = 16
    batch_target: int = 8
    lr: float = 1e-3
    grl_lambda: float = 0.5
    mmd_weight: float = 0.5
    per_class_source: int = 20
    per_class_target: int = 4
    duration: float = 2.5
    variants: tuple = VARIANTS

    def __post_init__(self):
        if not 1 <= self.repeats <= 10:
            raise ValueError("repeats must be in 1..10")
        if not 2 <= self.folds <= 5:
            raise ValueError("folds must be in 2..5")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_source < 2 or self.batch_target < 2:
            raise ValueError("batch sizes must be >= 2")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.grl_lambda < 0 or self.mmd_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.per_class_source < self.folds:
            raise ValueError("need at least one source sample per class per fold")
        if self.per_class_target < 1:
            raise ValueError("per_class_target must be >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not self.variants:
            raise ValueError("variant list is empty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ValueError(f"unknown variants {bad}; choose from {VARIANTS}")
        if len(set(self.variants)) != len(self.variants):
            raise ValueError("variant list has duplicates")


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "tuple":
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """ExperimentConfig from key=value text; unknown keys raise."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def write_config(path, config: ExperimentConfig) -> None:
    Path(path).write_text(format_config(config))
