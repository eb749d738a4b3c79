"""Experiment configuration files.

A config is a YAML mapping with the sections below. Unknown keys anywhere are
errors; every error names the file, the line and the dotted field path.

.. code-block:: yaml

    name: grid_wang            # label used in reports
    env:
      kind: grid               # grid | point_mass; other keys are env fields
      width: 7
      slip: 0.2
    learner:                   # any LearnerConfig field except seed
      method: ramu
      objective_risk: wang:0.75
    sweep: {parameter: slip, nominal: 0.2, low: 0.0, high: 0.4, count: 5}
    seeds: [0, 1, 2, 3, 4]
    rollouts: 10
    output: runs/grid_wang     # relative paths resolve against the config file
    baseline: runs/base/raw.csv   # optional; adds normalized columns
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from ..envs import ConfigError, GridHazardEnv, PointMassEnv, SweepSpec
from ..learn import LearnerConfig

__all__ = ["ExperimentConfig", "load_config", "parse_config", "ENV_KINDS"]

ENV_KINDS = {"grid": GridHazardEnv, "point_mass": PointMassEnv}
TOP_KEYS = ("name", "env", "learner", "sweep", "seeds", "rollouts", "output", "baseline")
REQUIRED = ("env", "learner", "sweep", "seeds")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env_kind: str
    env: object
    learner: LearnerConfig
    sweep: SweepSpec
    seeds: tuple
    rollouts: int = 10
    output: Path | None = None
    baseline: Path | None = None
    source: dict = dataclasses.field(default_factory=dict, compare=False)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        seeds = _check_seeds(list(seeds), "seeds", _Where("<override>", {}))
        source = dict(self.source, seeds=list(seeds))
        return dataclasses.replace(self, seeds=seeds, source=source)

    def digest(self) -> str:
        """SHA-256 of the canonical config content (output location excluded)."""
        content = {k: v for k, v in self.source.items() if k != "output"}
        blob = json.dumps(content, sort_keys=True, separators=(",", ":"), default=str).encode()
        return hashlib.sha256(blob).hexdigest()


class _Where:
    """Maps dotted field paths to source line numbers for diagnostics."""

    def __init__(self, filename: str, lines: dict):
        self.filename = filename
        self.lines = lines

    def error(self, path: str, message: str) -> ConfigError:
        line = self.lines.get(path)
        loc = f"{self.filename}:{line}" if line else self.filename
        return ConfigError(f"{loc}: {path}: {message}")


def _record_lines(node, prefix: str, out: dict) -> None:
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[path] = key.start_mark.line + 1
            _record_lines(value, path, out)


def _check_keys(data, allowed, path: str, where: _Where) -> None:
    if not isinstance(data, dict):
        raise where.error(path or "<root>", "expected a mapping")
    for key in data:
        if key not in allowed:
            full = f"{path}.{key}" if path else str(key)
            raise where.error(full, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _check_seeds(seeds, path: str, where: _Where) -> tuple:
    if not isinstance(seeds, list) or not seeds:
        raise where.error(path, "expected a non-empty list of integers")
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise where.error(path, "seeds must be non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise where.error(path, "seeds must be distinct")
    return tuple(seeds)


def _build(cls, kwargs: dict, path: str, where: _Where, skip=()):
    fields = {f.name for f in dataclasses.fields(cls)} - set(skip)
    _check_keys(kwargs, fields, path, where)
    try:
        return cls(**dict(kwargs))
    except (TypeError, ValueError) as exc:
        raise where.error(path, str(exc)) from None


def parse_config(text: str, filename: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    """Validate YAML text into an :class:`ExperimentConfig`."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{filename}{line}: syntax error: {exc.problem}") from None
    lines: dict = {}
    _record_lines(node, "", lines)
    where = _Where(filename, lines)
    if data is None:
        raise where.error("<root>", "empty config")
    _check_keys(data, TOP_KEYS, "", where)
    for key in REQUIRED:
        if key not in data:
            raise where.error(key, "missing required section")

    env_data = dict(data["env"]) if isinstance(data["env"], dict) else data["env"]
    _check_keys(env_data, {"kind"} | _env_fields(env_data), "env", where)
    kind = env_data.pop("kind", "grid")
    if kind not in ENV_KINDS:
        raise where.error("env.kind", f"unknown environment kind {kind!r} (allowed: {', '.join(ENV_KINDS)})")
    env = _build(ENV_KINDS[kind], env_data, "env", where)

    learner = _build(LearnerConfig, data["learner"] or {}, "learner", where, skip=("seed",))
    sweep = _build(SweepSpec, data["sweep"] or {}, "sweep", where)
    try:
        sweep.values()
        env.with_param(sweep.parameter, sweep.nominal)
    except ConfigError as exc:
        raise where.error("sweep", str(exc)) from None
    seeds = _check_seeds(data["seeds"], "seeds", where)

    rollouts = data.get("rollouts", 10)
    if not isinstance(rollouts, int) or isinstance(rollouts, bool) or rollouts < 1:
        raise where.error("rollouts", "must be an integer >= 1")
    name = data.get("name", Path(filename).stem)
    if not isinstance(name, str) or not name or "," in name:
        raise where.error("name", "must be a non-empty string without commas")

    base = Path(base_dir) if base_dir is not None else Path.cwd()
    output = Path(os.path.normpath(base / data["output"])) if data.get("output") else None
    baseline = Path(os.path.normpath(base / data["baseline"])) if data.get("baseline") else None
    return ExperimentConfig(name, kind, env, learner, sweep, seeds, rollouts, output, baseline, source=data)


def _env_fields(env_data) -> set:
    kind = env_data.get("kind", "grid") if isinstance(env_data, dict) else "grid"
    cls = ENV_KINDS.get(kind, GridHazardEnv)
    return {f.name for f in dataclasses.fields(cls)}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path), path.parent)
