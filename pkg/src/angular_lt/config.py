"""Run configuration: sectioned key=value files (or JSON) resolved against defaults.

Grammar::

    # comment
    [section]
    key = value          ; lists are comma separated: grid = 0, 0.04, 0.08

Sections are ``run``, ``data``, ``model``, ``train``, ``sweep`` and ``prune``.
Unknown sections or keys are rejected with their dotted path.
"""

import configparser
import json
from dataclasses import dataclass, field, fields, replace

from .dataset import SynthSpec
from .framework import PRESETS, ExperimentConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    seeds: tuple = ()
    threads: int = 1
    preset: str = ""


@dataclass(frozen=True)
class DataSection:
    train_path: str = ""
    test_path: str = ""


@dataclass(frozen=True)
class SweepSection:
    param: str = "s"
    grid: tuple = (0.0, 0.04, 0.08, 0.12, 0.16, 0.2, 0.24, 0.28, 0.32)


@dataclass(frozen=True)
class PruneSection:
    metrics: tuple = ("random", "class_random", "el2n", "avh")
    fractions: tuple = (0.0, 0.1, 0.3, 0.5)
    k: int = 5
    epochs: int = 5
    direction: str = "low"


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    sweep: SweepSection = field(default_factory=SweepSection)
    prune: PruneSection = field(default_factory=PruneSection)

    @property
    def seeds(self):
        return tuple(self.run.seeds) or (self.run.seed,)

    def to_dict(self):
        def sec(obj):
            return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}

        exp = self.experiment.to_dict()
        data = {**sec(self.data), **exp.pop("data")}
        model = {k: exp.pop(k) for k in sorted(_MODEL_KEYS)}
        return {"run": sec(self.run), "data": data, "model": model, "train": exp,
                "sweep": sec(self.sweep), "prune": sec(self.prune)}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


_MODEL_KEYS = {"hidden", "bias", "feature_activation"}


def _range(item):
    if isinstance(item, (list, tuple)):
        lo, hi = item
    else:
        lo, hi = str(item).split("-")
    return (int(lo), int(hi))


def _coerce(raw, default, path):
    if isinstance(raw, (list, tuple)):
        items = list(raw)
    elif isinstance(default, tuple):
        items = [s.strip() for s in str(raw).split(",") if s.strip()]
    else:
        items = None
    try:
        if items is not None:
            if path.endswith("groups"):
                return tuple(_range(it) for it in items)
            proto = default[0] if default else None
            if path.endswith(("hidden", "seeds")):
                return tuple(int(v) for v in items)
            if path.endswith(("grid", "fractions")) or isinstance(proto, float):
                return tuple(float(v) for v in items)
            return tuple(str(v) for v in items)
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _apply(obj, values, section):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    updates = {}
    for key, raw in values.items():
        if key not in known or key == "data":
            raise ConfigError(f"unknown key '{section}.{key}'")
        updates[key] = _coerce(raw, known[key], f"{section}.{key}")
    try:
        return replace(obj, **updates)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_sections(sections):
    """Build a RunConfig from ``{section: {key: value}}``."""
    allowed = {"run", "data", "model", "train", "sweep", "prune"}
    for name in sections:
        if name not in allowed:
            raise ConfigError(f"unknown section '{name}'")
    run = _apply(RunSection(), sections.get("run", {}), "run")
    if run.preset and run.preset not in PRESETS:
        raise ConfigError(f"run.preset: unknown preset {run.preset!r}; choose from {sorted(PRESETS)}")

    data_raw = dict(sections.get("data", {}))
    paths = {k: data_raw.pop(k) for k in ("train_path", "test_path") if k in data_raw}
    data_sec = _apply(DataSection(), paths, "data")
    spec = _apply(SynthSpec(), data_raw, "data")

    exp = ExperimentConfig(**PRESETS.get(run.preset, {}))
    model_raw = sections.get("model", {})
    for key in model_raw:
        if key not in _MODEL_KEYS:
            raise ConfigError(f"unknown key 'model.{key}'")
    exp = _apply(exp, model_raw, "model")
    train_raw = sections.get("train", {})
    for key in train_raw:
        if key in _MODEL_KEYS or key == "seed":
            raise ConfigError(f"unknown key 'train.{key}'")
    exp = _apply(exp, train_raw, "train")
    exp = replace(exp, data=spec, seed=run.seed)
    try:
        exp.group_spec
    except ValueError as exc:
        raise ConfigError(f"train.groups: {exc}") from None

    sweep = _apply(SweepSection(), sections.get("sweep", {}), "sweep")
    if sweep.param not in ("s", "tau"):
        raise ConfigError("sweep.param: must be 's' or 'tau'")
    prune = _apply(PruneSection(), sections.get("prune", {}), "prune")
    if prune.direction not in ("low", "high"):
        raise ConfigError("prune.direction: must be 'low' or 'high'")
    return RunConfig(run, data_sec, exp, sweep, prune)


def read_sections(text):
    """Parse config text (INI-style or JSON) into ``{section: {key: raw value}}``."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if not isinstance(obj, dict) or not all(isinstance(v, dict) for v in obj.values()):
            raise ConfigError("JSON config must map section names to objects")
        return {k: dict(v) for k, v in obj.items()}
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def parse_text(text):
    return parse_sections(read_sections(text))


def load_sections(path=None):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return read_sections(fh.read())


def load_config(path=None):
    return parse_sections(load_sections(path))
