"""YAML run configuration: defaults, validation and dotted-key overrides.

Layout (every section and key optional)::

    scenario:   Scenario fields other than the parameter records
    controller: ControllerConfig
    risk:       RiskParams
    safety:     SafetyBarrierParams (gamma_s comes from controller)
    perception: PerceptionParams (gamma_pi, gamma_eta come from controller)
    camera:     CameraModel
    mask:       MaskParams
    batch:      {n, seeds, jobs, groups: [{name, set: {dotted.key: value}}]}
    nbv:        {pose, heading, ring_radius, candidates, facing, seed}
    output:     {dir, figures}

Unknown keys are rejected with their dotted path and source line.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from splatcbf.barriers import PerceptionParams, SafetyBarrierParams
from splatcbf.controller import ControllerConfig
from splatcbf.info_gain import CameraModel, MaskParams
from splatcbf.risk import RiskParams
from splatcbf.sim import Scenario


class ConfigError(ValueError):
    pass


RECORDS = {
    "controller": ControllerConfig,
    "risk": RiskParams,
    "safety": SafetyBarrierParams,
    "perception": PerceptionParams,
    "camera": CameraModel,
    "mask": MaskParams,
}
SCENARIO_KEYS = [f.name for f in dataclasses.fields(Scenario) if f.name not in RECORDS]
# gains live on the controller; the barrier records receive copies
SYNCED = {("safety", "gamma_s"), ("perception", "gamma_pi"), ("perception", "gamma_eta")}


@dataclass
class BatchGroup:
    name: str
    set: dict = field(default_factory=dict)


@dataclass
class BatchSettings:
    n: int = 1
    seeds: list | None = None
    jobs: int | None = None
    groups: list = field(default_factory=list)

    def seed_list(self, base: int) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [base + k for k in range(self.n)]


@dataclass
class NbvSettings:
    pose: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    heading: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    ring_radius: float | None = None
    candidates: int = 64
    facing: str = "inward"
    seed: int = 0
    top: int = 10


@dataclass
class OutputSettings:
    dir: str = "out"
    figures: bool = True


EXTRA = {"batch": BatchSettings, "nbv": NbvSettings, "output": OutputSettings}


@dataclass
class Config:
    scenario: dict
    records: dict
    batch: BatchSettings
    nbv: NbvSettings
    output: OutputSettings
    raw: dict

    def build_scenario(self, seed: int | None = None, overrides: dict | None = None) -> Scenario:
        """Scenario for this config, optionally with a seed and dotted overrides applied."""
        raw = copy.deepcopy(self.raw)
        for key, value in (overrides or {}).items():
            _set_dotted(raw, key, value)
        cfg = from_dict(raw) if overrides else self
        kwargs = dict(cfg.scenario)
        if seed is not None:
            kwargs["seed"] = int(seed)
        try:
            return Scenario(**kwargs, **cfg.records)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from None

    def snapshot(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def _lines(node, prefix: str = "", out: dict | None = None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _lines(v, path, out)
    return out


def _where(path: str, lines: dict, source: str) -> str:
    line = lines.get(path)
    return f"{source}:{line}: {path}" if line else f"{source}: {path}"


def _coerce(default: Any, value: Any, path: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            if isinstance(value, str):
                try:
                    return float(value)
                except ValueError:
                    pass
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    return value


def _record(cls, section: str, data: Any, lines: dict, source: str) -> Any:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{_where(section, lines, source)}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{section}.{key}"
        if key not in names or (section, key) in SYNCED:
            hint = " (set it under controller)" if (section, key) in SYNCED else ""
            raise ConfigError(f"{_where(path, lines, source)}: unknown key{hint}")
        f = names[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        kwargs[key] = _coerce(default, value, path)
    return kwargs


def from_dict(raw: dict, source: str = "<config>", lines: dict | None = None) -> Config:
    lines = lines or {}
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    known = {"scenario", *RECORDS, *EXTRA}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{_where(str(key), lines, source)}: unknown section")

    scen = raw.get("scenario") or {}
    if not isinstance(scen, dict):
        raise ConfigError(f"{_where('scenario', lines, source)}: expected a mapping")
    defaults = {f.name: f for f in dataclasses.fields(Scenario)}
    scenario = {}
    for key, value in scen.items():
        if key not in SCENARIO_KEYS:
            raise ConfigError(f"{_where('scenario.' + str(key), lines, source)}: unknown key")
        f = defaults[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        scenario[key] = _coerce(default, value, f"scenario.{key}")
    if isinstance(scenario.get("field"), dict) and "kind" not in scenario["field"]:
        raise ConfigError(f"{_where('scenario.field', lines, source)}: synthetic field needs a 'kind'")

    kw = {name: _record(cls, name, raw.get(name), lines, source) for name, cls in RECORDS.items()}
    records = {}
    try:
        ctrl = ControllerConfig(**kw["controller"])
        records["controller"] = ctrl
        records["risk"] = RiskParams(**kw["risk"])
        records["safety"] = SafetyBarrierParams(**kw["safety"], gamma_s=ctrl.gamma_s)
        records["perception"] = PerceptionParams(**kw["perception"], gamma_pi=ctrl.gamma_pi, gamma_eta=ctrl.gamma_eta)
        records["camera"] = CameraModel(**kw["camera"])
        records["mask"] = MaskParams(**kw["mask"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None

    extra = {}
    for name, cls in EXTRA.items():
        kwargs = _record(cls, name, raw.get(name), lines, source)
        extra[name] = cls(**kwargs)
    groups = []
    for i, g in enumerate(extra["batch"].groups or []):
        if not isinstance(g, dict) or "name" not in g or set(g) - {"name", "set"}:
            raise ConfigError(f"{_where('batch.groups', lines, source)}[{i}]: each group needs 'name' and optional 'set'")
        groups.append(BatchGroup(str(g["name"]), dict(g.get("set") or {})))
    extra["batch"].groups = groups
    if extra["batch"].n < 1:
        raise ConfigError(f"{_where('batch.n', lines, source)}: must be >= 1")
    cfg = Config(scenario, records, extra["batch"], extra["nbv"], extra["output"], copy.deepcopy(raw))
    # surfaces Scenario-level validation errors at load time
    cfg.build_scenario()
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return from_dict({})
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
        lines = _lines(yaml.compose(text)) if raw else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return from_dict(raw or {}, str(path), lines)


def parse_override(item: str) -> tuple[str, Any]:
    """``section.key=value`` with the value parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' must look like section.key=value")
    key, text = item.split("=", 1)
    key = key.strip()
    if not key or "." not in key:
        raise ConfigError(f"override '{item}' needs a dotted key")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override '{item}': {exc}") from None
    return key, value


def _set_dotted(raw: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key}: '{p}' is not a mapping")
        node = nxt
    node[parts[-1]] = value


def apply_overrides(cfg: Config, overrides: dict) -> Config:
    raw = copy.deepcopy(cfg.raw)
    for key, value in overrides.items():
        _set_dotted(raw, key, value)
    return from_dict(raw, "<overrides>")


def defaults_document() -> dict:
    """Every configurable key with its default value."""
    doc: dict[str, Any] = {"scenario": {}}
    for f in dataclasses.fields(Scenario):
        if f.name in RECORDS:
            continue
        doc["scenario"][f.name] = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    for name, cls in {**RECORDS, **EXTRA}.items():
        sec = {}
        for f in dataclasses.fields(cls):
            if (name, f.name) in SYNCED:
                continue
            v = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
            sec[f.name] = v
        doc[name] = sec
    return doc
