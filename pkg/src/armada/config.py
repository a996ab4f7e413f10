"""Flat ``section.key = value`` experiment configuration files.

Example::

    # lines starting with '#' are comments
    task.n_train = 200
    loss.alpha = 0.5
    loss.manifold_variant = euclid
    sweep.seeds = 0, 1, 2, 3, 4

Every key has a default, so an empty file is a valid configuration.  List
values are comma separated.  ``loss.task_kind`` is not a key: the loss
follows ``task.task_kind``.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

from .errors import ArmadaError, ConfigError
from .experiments import ExperimentConfig
from .losses import LossConfig
from .train import TrainConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}

# keys whose default is None, so the type cannot be read off the default
_OPTIONAL_TYPES = {("train", "classes"): int}

# teacher.file / teacher.test_file live on ExperimentConfig itself
_TEACHER_FILES = {"file": "teacher_file", "test_file": "teacher_test_file"}


def _sections(cfg: ExperimentConfig) -> dict[str, Any]:
    return {"task": cfg.task, "teacher": cfg.teacher, "train": cfg.train, "loss": cfg.train.loss, "sweep": cfg.sweep}


def _field_names(obj) -> list[str]:
    skip = {"loss"} if isinstance(obj, TrainConfig) else {"task_kind"} if isinstance(obj, LossConfig) else set()
    return [f.name for f in dataclasses.fields(obj) if f.name not in skip]


def known_keys() -> list[str]:
    cfg = ExperimentConfig()
    keys = [f"{sec}.{name}" for sec, obj in _sections(cfg).items() for name in _field_names(obj)]
    return keys + [f"teacher.{k}" for k in _TEACHER_FILES]


def _scalar(text: str, kind: type, key: str):
    try:
        if kind is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def _coerce(key: str, text: str, default: Any, section: str, name: str):
    if isinstance(default, list):
        kind = type(default[0]) if default else str
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ConfigError(f"{key}: list must not be empty")
        return [_scalar(t, kind, key) for t in items]
    if default is None:
        if text.lower() in {"none", ""}:
            return None
        return _scalar(text, _OPTIONAL_TYPES.get((section, name), str), key)
    return _scalar(text, type(default), key)


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse config text; raises :class:`ConfigError` naming the offending line and key."""
    cfg = ExperimentConfig()
    sections = _sections(cfg)
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: {key} already set on line {seen[key]}")
        seen[key] = lineno
        section, _, name = key.partition(".")
        if section == "teacher" and name in _TEACHER_FILES:
            setattr(cfg, _TEACHER_FILES[name], None if value.lower() in {"", "none"} else value)
            continue
        obj = sections.get(section)
        if obj is None or name not in _field_names(obj):
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            setattr(obj, name, _coerce(key, value, getattr(obj, name), section, name))
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    cfg.train.loss.task_kind = cfg.task.task_kind
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ArmadaError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load(path: str | Path | None) -> ExperimentConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return parse_text("")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def _render(value) -> str:
    if isinstance(value, list):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return f"{value!r}" if isinstance(value, float) else str(value)


def dump(cfg: ExperimentConfig) -> str:
    """Render every key; ``parse_text(dump(cfg))`` reproduces ``cfg``."""
    lines = []
    for section, obj in _sections(cfg).items():
        for name in _field_names(obj):
            lines.append(f"{section}.{name} = {_render(getattr(obj, name))}")
        if section == "teacher":
            for key, attr in _TEACHER_FILES.items():
                lines.append(f"teacher.{key} = {_render(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Shift all training seeds so the run list starts at ``seed``, keeping its length."""
    out = dataclasses.replace(cfg)
    out.train = dataclasses.replace(cfg.train, seed=seed)
    out.sweep = dataclasses.replace(cfg.sweep, seeds=[seed + i for i in range(len(cfg.sweep.seeds))])
    return out

