"""Sectioned ``key = value`` run configuration.

A config file has up to four sections; every key is optional and falls back
to the dataclass default::

    [data]      SyntheticDatasetSpec fields, plus ``dir`` (load train.npz /
                test.npz from there instead of generating)
    [model]     ModelConfig fields
    [train]     TrrConfig fields
    [ablate]    seeds = 0,1,2

Values are parsed by the type of the default: ints, floats, booleans
(true/false/1/0/yes/no) and bare strings. Overrides ``key=value`` apply after
the file; a bare key updates every section that defines it (so ``T=8`` keeps
data, model and training in agreement) and ``section.key`` targets one.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from .data import SyntheticDatasetSpec
from .errors import ConfigError
from .models import ModelConfig
from .training import TrrConfig

SECTIONS = ("data", "model", "train", "ablate")
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass
class AblateConfig:
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class DataConfig(SyntheticDatasetSpec):
    dir: str = ""

    def spec(self) -> SyntheticDatasetSpec:
        values = asdict(self)
        values.pop("dir")
        return SyntheticDatasetSpec(**values)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrrConfig = field(default_factory=TrrConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def section(self, name: str):
        return getattr(self, name)


def _parse_value(section: str, key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _set(cfg: RunConfig, section: str, key: str, raw: str) -> RunConfig:
    target = cfg.section(section)
    known = {f.name for f in fields(target)}
    if key not in known:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    value = _parse_value(section, key, raw, getattr(target, key))
    return replace(cfg, **{section: replace(target, **{key: value})})


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (T)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            cfg = _set(cfg, section, key, raw)
    return cfg


def apply_overrides(cfg: RunConfig, overrides: Iterable[str]) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown section {section!r} in override {item!r}")
            cfg = _set(cfg, section, key, raw)
            continue
        owners = [s for s in SECTIONS if key in {f.name for f in fields(cfg.section(s))}]
        if not owners:
            raise ConfigError(f"unknown key {key!r}")
        for section in owners:
            cfg = _set(cfg, section, key, raw)
    return cfg


def dump_config(cfg: RunConfig, path) -> Path:
    """Write every resolved value (defaults included) in the loadable format."""
    path = Path(path)
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for f in fields(cfg.section(section)):
            lines.append(f"{f.name} = {_format_value(getattr(cfg.section(section), f.name))}")
        lines.append("")
    path.write_text("\n".join(lines))
    return path
