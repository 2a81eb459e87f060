"""Structured YAML configuration.

One file holds every section so that paired scenarios always share their
parameters.  Errors carry ``file:line:column`` of the offending key or value.

Sections: ``corridor`` (mapping or path to a corridor file), ``planner``,
``vehicle``, ``thermal``, ``powertrain``, ``controller``, ``driver``,
``long_stop``, ``scenarios``, ``calibration``, ``sweep``, plus the scalars
``output_dir``, ``seed`` and ``alpha_samples``.
"""

from __future__ import annotations

import dataclasses
import functools
import os
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import yaml

from . import hvac_control as hc
from . import plant, traffic
from .harness import DriverParams, Scenario, Setup

MPH = hc.MPH


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# YAML with source positions
# ---------------------------------------------------------------------------

class _Loader(yaml.SafeLoader):
    pass


# YAML 1.2 floats, so that 4.32e6 is a number rather than a string
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


class _Map(dict):
    mark = None
    key_marks: dict = {}


class _Seq(list):
    mark = None
    item_marks: list = []


@dataclass
class _Scalar:
    value: object
    mark: object


def _build(node, loader):
    if isinstance(node, yaml.MappingNode):
        out = _Map()
        out.mark = node.start_mark
        out.key_marks = {}
        for k, v in node.value:
            key = loader.construct_object(k, deep=True)
            if key in out:
                raise ConfigError(f"{_where(k.start_mark)}: duplicate key {key!r}")
            out[key] = _build(v, loader)
            out.key_marks[key] = k.start_mark
        return out
    if isinstance(node, yaml.SequenceNode):
        out = _Seq(_build(v, loader) for v in node.value)
        out.mark = node.start_mark
        return out
    return _Scalar(loader.construct_object(node, deep=True), node.start_mark)


def _where(mark) -> str:
    if mark is None:
        return "<config>"
    return f"{mark.name}:{mark.line + 1}:{mark.column + 1}"


def _parse(text: str, name: str):
    try:
        node = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{_where(mark) if mark else name}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if node is None:
        raise ConfigError(f"{name}: empty config")
    for n in _walk(node):
        n.start_mark.name = name
    loader = _Loader("")
    try:
        return _build(node, loader)
    finally:
        loader.dispose()


def _walk(node):
    yield node
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            yield k
            yield from _walk(v)
    elif isinstance(node, yaml.SequenceNode):
        for v in node.value:
            yield from _walk(v)


# ---------------------------------------------------------------------------
# typed accessors
# ---------------------------------------------------------------------------

def _mark(obj):
    return getattr(obj, "mark", None)


def _plain(obj):
    if isinstance(obj, _Scalar):
        return obj.value
    if isinstance(obj, _Map):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, _Seq):
        return [_plain(v) for v in obj]
    return obj


def _need_map(obj, what):
    if not isinstance(obj, _Map):
        raise ConfigError(f"{_where(_mark(obj))}: {what} must be a mapping")
    return obj


def _number(obj, what, integer=False):
    v = obj.value if isinstance(obj, _Scalar) else None
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if not ok or isinstance(v, bool):
        kind = "an integer" if integer else "a number"
        raise ConfigError(f"{_where(_mark(obj))}: {what} must be {kind}, got {_plain(obj)!r}")
    return int(v) if integer else float(v)


def _string(obj, what):
    v = obj.value if isinstance(obj, _Scalar) else None
    if not isinstance(v, str):
        raise ConfigError(f"{_where(_mark(obj))}: {what} must be a string, got {_plain(obj)!r}")
    return v


def _pairs(obj, what):
    if not isinstance(obj, _Seq) or not obj:
        raise ConfigError(f"{_where(_mark(obj))}: {what} must be a non-empty list of [x, y] pairs")
    out = []
    for item in obj:
        if not isinstance(item, _Seq) or len(item) != 2:
            raise ConfigError(f"{_where(_mark(item))}: {what} entries must be [x, y] pairs")
        out.append((_number(item[0], what), _number(item[1], what)))
    return tuple(out)


def _dataclass_from(cls, section: _Map, what: str, extra: Optional[dict] = None, skip=()):
    """Build ``cls`` from the numeric keys of ``section``."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(extra or {})
    for key, val in section.items():
        if key in skip:
            continue
        if key not in fields:
            raise ConfigError(f"{_where(section.key_marks[key])}: unknown key {key!r} in {what} "
                              f"(expected one of: {', '.join(sorted(set(fields) - set(kwargs)))})")
        integer = fields[key].type in ("int", int)
        kwargs[key] = _number(val, f"{what}.{key}", integer=integer)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(section.mark)}: {what}: {exc}") from None


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationSpec:
    scenarios: tuple
    lo: float = 0.5
    hi: float = 2.0
    rel_tol: float = 0.01


@dataclass(frozen=True)
class SweepSpec:
    scenario: str
    temps: tuple
    repeats: int = 3
    mode: str = "heating"


@dataclass(frozen=True)
class Config:
    path: str
    setup: Setup
    scenarios: dict
    calibration: CalibrationSpec
    sweep: SweepSpec
    output_dir: str
    seed: int
    alpha_samples: Optional[str]

    def scenario(self, name: str) -> Scenario:
        if name not in self.scenarios:
            raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(self.scenarios)}")
        return self.scenarios[name]

    def with_seed(self, seed: int) -> "Config":
        sc = {k: dataclasses.replace(s, seed=seed) for k, s in self.scenarios.items()}
        return dataclasses.replace(self, scenarios=sc, seed=seed)


def _corridor(obj, base_dir) -> traffic.Corridor:
    if isinstance(obj, _Scalar):
        rel = _string(obj, "corridor")
        path = os.path.join(base_dir, rel)
        if not os.path.isfile(path):
            raise ConfigError(f"{_where(obj.mark)}: corridor file {rel!r} not found")
        with open(path) as fh:
            obj = _parse(fh.read(), path)
    sec = _need_map(obj, "corridor")
    inters = sec.get("intersections")
    if not isinstance(inters, _Seq) or not inters:
        raise ConfigError(f"{_where(sec.key_marks.get('intersections', sec.mark))}: "
                          "corridor.intersections must be a non-empty list")
    items = []
    for k, item in enumerate(inters):
        m = _need_map(item, f"corridor.intersections[{k}]")
        g = m.get("green_duration")
        if isinstance(g, _Scalar) and g.value == 0:
            # a signal that never turns green is a valid description of an impassable corridor
            raise traffic.InfeasibleCorridor(f"{_where(g.mark)}: corridor.intersections[{k}] never turns green")
        items.append(_dataclass_from(traffic.Intersection, m, f"corridor.intersections[{k}]"))
    name = _string(sec["name"], "corridor.name") if "name" in sec else "corridor"
    return _dataclass_from(traffic.Corridor, sec, "corridor", {"intersections": tuple(items), "name": name},
                           skip=("intersections", "name"))


def _controller(sec: _Map) -> hc.HvacParams:
    known = {"c_p", "alpha", "beta", "blower_map", "mpc"}
    for key in sec:
        if key not in known:
            raise ConfigError(f"{_where(sec.key_marks[key])}: unknown key {key!r} in controller "
                              f"(expected one of: {', '.join(sorted(known))})")
    kw = {}
    if "c_p" in sec:
        kw["c_p"] = _number(sec["c_p"], "controller.c_p")
        if not kw["c_p"] > 0:
            raise ConfigError(f"{_where(sec['c_p'].mark)}: controller.c_p must be positive")
    if "alpha" in sec:
        a = _need_map(sec["alpha"], "controller.alpha")
        kw["alpha"] = _dataclass_from(hc.AlphaCoeffs, a, "controller.alpha")
        if not kw["alpha"].monotone_on_box():
            raise ConfigError(f"{_where(a.mark)}: controller.alpha: vent temperature must not decrease "
                              "with setpoint or coolant temperature on the operating box")
    if "beta" in sec:
        b = _need_map(sec["beta"], "controller.beta")
        for key in b:
            if key not in ("breakpoints_mph", "breakpoints_mps", "scale"):
                raise ConfigError(f"{_where(b.key_marks[key])}: unknown key {key!r} in controller.beta")
        if ("breakpoints_mph" in b) == ("breakpoints_mps" in b):
            raise ConfigError(f"{_where(b.mark)}: controller.beta needs exactly one of "
                              "breakpoints_mph or breakpoints_mps")
        if "breakpoints_mph" in b:
            bp = tuple((v * MPH, x) for v, x in _pairs(b["breakpoints_mph"], "controller.beta.breakpoints_mph"))
        else:
            bp = _pairs(b["breakpoints_mps"], "controller.beta.breakpoints_mps")
        scale = _number(b["scale"], "controller.beta.scale") if "scale" in b else 1.0
        try:
            kw["beta"] = hc.BetaSchedule(bp, scale)
        except ValueError as exc:
            raise ConfigError(f"{_where(b.mark)}: controller.beta: {exc}") from None
    if "blower_map" in sec:
        try:
            kw["blower"] = hc.BlowerMap(_pairs(sec["blower_map"], "controller.blower_map"))
        except ValueError as exc:
            raise ConfigError(f"{_where(sec['blower_map'].mark)}: controller.blower_map: {exc}") from None
    if "mpc" in sec:
        kw["mpc"] = _dataclass_from(hc.MpcConfig, _need_map(sec["mpc"], "controller.mpc"), "controller.mpc")
    return hc.HvacParams(**kw)


_SCENARIO_NUM = ("T_amb", "T_cab0", "T_cl0", "soc0")


def _scenario(name, m: _Map, default_seed) -> Scenario:
    kw = {"name": name, "seed": default_seed}
    for key, val in m.items():
        where = _where(m.key_marks[key])
        if key in ("driving", "heating", "variant"):
            kw[key] = _string(val, f"scenarios.{name}.{key}")
        elif key in _SCENARIO_NUM:
            kw[key] = _number(val, f"scenarios.{name}.{key}")
        elif key == "seed":
            kw[key] = _number(val, f"scenarios.{name}.seed", integer=True)
        else:
            raise ConfigError(f"{where}: unknown key {key!r} in scenario {name!r}")
    try:
        return Scenario(**kw)
    except ValueError as exc:
        raise ConfigError(f"{_where(m.mark)}: scenario {name!r}: {exc}") from None


_TOP = ("corridor", "planner", "vehicle", "thermal", "powertrain", "controller", "driver", "long_stop",
        "scenarios", "calibration", "sweep", "output_dir", "seed", "alpha_samples")


def loads(text: str, name: str = "<config>", base_dir: str = ".") -> Config:
    root = _need_map(_parse(text, name), "config")
    for key in root:
        if key not in _TOP:
            raise ConfigError(f"{_where(root.key_marks[key])}: unknown section {key!r} "
                              f"(expected one of: {', '.join(_TOP)})")
    if "corridor" not in root:
        raise ConfigError(f"{_where(root.mark)}: missing required section 'corridor'")
    corridor = _corridor(root["corridor"], base_dir)

    def section(key, cls):
        if key not in root:
            return cls()
        return _dataclass_from(cls, _need_map(root[key], key), key)

    limits = section("planner", traffic.PlannerLimits)
    vehicle = section("vehicle", plant.VehicleParams)
    thermal = section("thermal", plant.ThermalParams)
    powertrain = section("powertrain", plant.PowertrainParams)
    if not powertrain.T_cl_idle_off < thermal.thermostat_open:
        raise ConfigError(f"{_where(_mark(root.get('powertrain', root)))}: powertrain.T_cl_idle_off must be "
                          f"below thermal.thermostat_open ({thermal.thermostat_open:g})")
    hvac = _controller(_need_map(root["controller"], "controller")) if "controller" in root else hc.HvacParams()
    driver = section("driver", DriverParams)
    ls = _need_map(root["long_stop"], "long_stop") if "long_stop" in root else _Map()
    ls_kw = {}
    for key, val in ls.items():
        if key == "stop_index":
            ls_kw["long_stop_index"] = _number(val, "long_stop.stop_index", integer=True)
        elif key == "extra_s":
            ls_kw["long_stop_extra_s"] = _number(val, "long_stop.extra_s")
        else:
            raise ConfigError(f"{_where(ls.key_marks[key])}: unknown key {key!r} in long_stop")
    setup = Setup(corridor, limits, vehicle, thermal, powertrain, hvac, driver, **ls_kw)

    seed = _number(root["seed"], "seed", integer=True) if "seed" in root else 0
    scenarios = {}
    if "scenarios" in root:
        sm = _need_map(root["scenarios"], "scenarios")
        for name, body in sm.items():
            scenarios[str(name)] = _scenario(str(name), _need_map(body, f"scenarios.{name}"), seed)
    if not scenarios:
        raise ConfigError(f"{_where(root.mark)}: at least one scenario must be defined")

    def scenario_ref(obj, what):
        n = _string(obj, what)
        if n not in scenarios:
            raise ConfigError(f"{_where(obj.mark)}: {what} refers to unknown scenario {n!r} "
                              f"(available: {', '.join(scenarios)})")
        return n

    cal = CalibrationSpec(scenarios=(next(iter(scenarios)),))
    if "calibration" in root:
        cm = _need_map(root["calibration"], "calibration")
        kw = {}
        for key, val in cm.items():
            if key == "scenarios":
                if not isinstance(val, _Seq) or not val:
                    raise ConfigError(f"{_where(_mark(val))}: calibration.scenarios must be a non-empty list")
                kw["scenarios"] = tuple(scenario_ref(v, "calibration.scenarios") for v in val)
            elif key == "scale_bounds":
                lo_hi = _pairs(_Seq([val]), "calibration.scale_bounds")[0] if isinstance(val, _Seq) else None
                if lo_hi is None or not 0 < lo_hi[0] < lo_hi[1]:
                    raise ConfigError(f"{_where(_mark(val))}: calibration.scale_bounds must be [lo, hi] with 0 < lo < hi")
                kw["lo"], kw["hi"] = lo_hi
            elif key == "rel_tol":
                kw["rel_tol"] = _number(val, "calibration.rel_tol")
            else:
                raise ConfigError(f"{_where(cm.key_marks[key])}: unknown key {key!r} in calibration")
        cal = dataclasses.replace(cal, **kw)

    sweep = SweepSpec(scenario=next(iter(scenarios)), temps=(-11.0, -8.0, -3.0, -1.0, 3.0, 6.0))
    if "sweep" in root:
        sw = _need_map(root["sweep"], "sweep")
        kw = {}
        for key, val in sw.items():
            if key == "scenario":
                kw["scenario"] = scenario_ref(val, "sweep.scenario")
            elif key == "temps":
                if not isinstance(val, _Seq) or not val:
                    raise ConfigError(f"{_where(_mark(val))}: sweep.temps must be a non-empty list")
                kw["temps"] = tuple(_number(v, "sweep.temps") for v in val)
            elif key == "repeats":
                kw["repeats"] = _number(val, "sweep.repeats", integer=True)
                if kw["repeats"] < 1:
                    raise ConfigError(f"{_where(val.mark)}: sweep.repeats must be >= 1")
            elif key == "mode":
                kw["mode"] = _string(val, "sweep.mode")
                if kw["mode"] not in ("heating", "combined", "driving"):
                    raise ConfigError(f"{_where(val.mark)}: sweep.mode must be heating, combined or driving")
            else:
                raise ConfigError(f"{_where(sw.key_marks[key])}: unknown key {key!r} in sweep")
        sweep = dataclasses.replace(sweep, **kw)

    output_dir = _string(root["output_dir"], "output_dir") if "output_dir" in root else "out"
    samples = None
    if "alpha_samples" in root:
        rel = _string(root["alpha_samples"], "alpha_samples")
        samples = os.path.join(base_dir, rel)
        if not os.path.isfile(samples):
            raise ConfigError(f"{_where(root['alpha_samples'].mark)}: alpha_samples file {rel!r} not found")
    return Config(name, setup, scenarios, cal, sweep, output_dir, seed, samples)


def load(path) -> Config:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return loads(text, path, os.path.dirname(os.path.abspath(path)))


def default_config_path() -> str:
    return str(resources.files("ecoheat") / "data" / "default.yaml")


@functools.lru_cache(maxsize=1)
def load_default() -> Config:
    return load(default_config_path())
