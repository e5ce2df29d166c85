"""Run configuration: a strict YAML document with nested sections.

Unknown keys and wrongly typed values raise :class:`ConfigError` naming the
key and, when known, the line it came from.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError


@dataclass
class GridConfig:
    T: float = 1.0
    N: int = 32


@dataclass
class EnsembleConfig:
    paths: int = 1000
    seed: int = 1
    workers: int = 1


@dataclass
class BasisConfig:
    family: str = "polynomial"
    degree: int = 2
    ridge: float = 1e-8


@dataclass
class OptimizerConfig:
    step: float = 1.0
    tol: float = 1e-6
    max_iter: int = 100
    newton: bool = False


@dataclass
class VerifyConfig:
    probes: int = 4
    oracles: bool = True
    inject_convex_phi: bool = False


@dataclass
class OutputConfig:
    dir: str = "out"
    format: str = "csv"
    figures: bool = False


@dataclass
class RunConfig:
    scenario: str = "decoupled-quadratic"
    params: dict = field(default_factory=dict)
    grid: GridConfig = field(default_factory=GridConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: Optional[str] = None
    explicit: tuple = ()        # sections present in the file

    def validate(self) -> "RunConfig":
        positive = {"grid.T": self.grid.T, "grid.N": self.grid.N,
                    "ensemble.paths": self.ensemble.paths, "ensemble.workers": self.ensemble.workers,
                    "optimizer.step": self.optimizer.step, "optimizer.tol": self.optimizer.tol}
        for key, val in positive.items():
            if not val > 0:
                raise ConfigError(f"value must be positive, got {val!r}", key=key)
        nonneg = {"ensemble.seed": self.ensemble.seed, "optimizer.max_iter": self.optimizer.max_iter,
                  "basis.degree": self.basis.degree, "basis.ridge": self.basis.ridge,
                  "verify.probes": self.verify.probes}
        for key, val in nonneg.items():
            if val < 0:
                raise ConfigError(f"value must be nonnegative, got {val!r}", key=key)
        if self.basis.family not in ("polynomial", "piecewise-linear"):
            raise ConfigError(f"unknown basis family {self.basis.family!r}", key="basis.family")
        if self.output.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.output.format!r}",
                              key="output.format")
        return self


_SECTIONS = {"grid": GridConfig, "ensemble": EnsembleConfig, "basis": BasisConfig,
             "optimizer": OptimizerConfig, "verify": VerifyConfig, "output": OutputConfig}


def _line(node) -> int:
    return node.start_mark.line + 1


def _coerce(value, target, key, line):
    # bool is an int subclass; keep the two apart
    if target is bool:
        if isinstance(value, bool):
            return value
    elif target is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif target is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif target is str:
        if isinstance(value, str):
            return value
    elif target is dict:
        if isinstance(value, dict):
            return value
    raise ConfigError(f"expected {target.__name__}, got {value!r}", key=key, line=line)


def _section(cls, mapping_node, data, prefix):
    kinds = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key_node, val_node in mapping_node.value:
        key = key_node.value
        full = f"{prefix}.{key}"
        if key not in kinds:
            raise ConfigError("unknown key", key=full, line=_line(key_node))
        target = {"float": float, "int": int, "str": str, "bool": bool}[kinds[key]]
        kwargs[key] = _coerce(data[key], target, full, _line(val_node))
    return cls(**kwargs)


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from None
    if node is None:
        return RunConfig(source=source).validate()
    if not isinstance(node, yaml.MappingNode) or not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=_line(node))
    cfg = RunConfig(source=source)
    for key_node, val_node in node.value:
        key = key_node.value
        if key in _SECTIONS:
            if not isinstance(val_node, yaml.MappingNode):
                raise ConfigError("section must be a mapping", key=key, line=_line(val_node))
            setattr(cfg, key, _section(_SECTIONS[key], val_node, data[key], key))
            cfg.explicit += (key,)
        elif key == "scenario":
            cfg.scenario = _coerce(data[key], str, key, _line(val_node))
        elif key == "params":
            cfg.params = _coerce(data[key], dict, key, _line(val_node))
        else:
            raise ConfigError("unknown key", key=key, line=_line(key_node))
    return cfg.validate()


def load_config(path) -> RunConfig:
    """Read a configuration file; I/O failures propagate as ``OSError``."""
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def load_scenario_file(path) -> tuple:
    """A scenario file names a built-in scenario and its parameters:
    ``{builtin: name, params: {...}}``. Returns ``(name, params)``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid scenario file: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("scenario file must be a mapping", key=str(path))
    for key_node, _ in node.value:
        if key_node.value not in ("builtin", "params"):
            raise ConfigError("unknown key", key=key_node.value, line=_line(key_node))
    if "builtin" not in data:
        raise ConfigError("scenario file needs a 'builtin' entry", key="builtin")
    params = data.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping", key="params")
    return str(data["builtin"]), params


def as_dict(cfg: RunConfig) -> dict[str, Any]:
    """Plain nested dict (for metadata)."""
    out = {"scenario": cfg.scenario, "params": dict(cfg.params)}
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        out[name] = {f.name: getattr(sec, f.name) for f in fields(sec)}
    return out
