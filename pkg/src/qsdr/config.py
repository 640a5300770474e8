"""Flat dotted-key configuration shared by the command line tools.

A config file is a YAML mapping.  Keys may be written flat
(``estimator.qopg.tau_grid: [0.25, 0.5, 0.75]``) or nested; both forms are
flattened to dotted keys before use.  Plain ``key = value`` lines are accepted
as well.  Namespaces:

``run.*``
    command-level settings (``q``, ``estimator``, ``seed``, ``threads`` ...).
``estimator.qopg.*``, ``estimator.qmave.*``, ``estimator.sir.*``
    fields of :class:`QopgConfig`, :class:`QmaveConfig` and :class:`SirConfig`;
    nested ``kernel.*`` and ``solver.*`` keys reach the kernel and solver.
``dimension.*``
    fields of :class:`DimensionConfig` other than the qOPG settings, which
    come from ``estimator.qopg.*``.
``simulate.*``
    fields of :class:`SimSpec`.

:func:`default_config` lists every key with its default value.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Dict, Mapping, Optional

import yaml

from .bandwidth import parse_bandwidth_rule
from .dimension import DimensionConfig
from .errors import ConfigError
from .opg import QopgConfig
from .qmave import QmaveConfig
from .simulation import SimSpec
from .sir import SirConfig

RUN_DEFAULTS: Dict[str, Any] = {
    "run.input": None,
    "run.response": None,
    "run.features": None,
    "run.q": 2,
    "run.estimator": "qopg",
    "run.seed": 20240101,
    "run.threads": 1,
    "run.output": None,
    "run.csv": None,
    "run.basis": None,
    "run.q_candidates": [1, 2, 3],
}

_SECTIONS = {
    "estimator.qopg": QopgConfig,
    "estimator.qmave": QmaveConfig,
    "estimator.sir": SirConfig,
}
_SIM_SKIP = {"estimators", "link", "B0"}
_DIM_SKIP = {"opg", "estimator"}


def flatten(tree: Mapping, prefix: str = "") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, val in tree.items():
        name = f"{prefix}{key}"
        if isinstance(val, Mapping):
            out.update(flatten(val, name + "."))
        else:
            out[name] = val
    return out


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse a YAML mapping or ``key = value`` lines into a flat dict."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if lines and all("=" in ln and ":" not in ln.split("=", 1)[0] for ln in lines):
        flat = {}
        for ln in lines:
            key, val = ln.split("=", 1)
            flat[key.strip()] = yaml.safe_load(val.strip()) if val.strip() else None
        return flat
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if tree is None:
        return {}
    if not isinstance(tree, Mapping):
        raise ConfigError("config must be a mapping of keys to values")
    return flatten(tree)


def load_config(path) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    flat = parse_config_text(text)
    check_keys(flat)
    return flat


def _dataclass_defaults(cls, prefix: str, skip=()) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    inst = cls() if cls is not SimSpec else SimSpec()
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        val = getattr(inst, f.name)
        if dataclasses.is_dataclass(val):
            out.update(_dataclass_defaults(type(val), f"{prefix}.{f.name}"))
        else:
            out[f"{prefix}.{f.name}"] = list(val) if isinstance(val, tuple) else val
    return out


def default_config() -> Dict[str, Any]:
    """Every recognised key mapped to its default value."""
    out = dict(RUN_DEFAULTS)
    for prefix, cls in _SECTIONS.items():
        out.update(_dataclass_defaults(cls, prefix))
    out.update(_dataclass_defaults(DimensionConfig, "dimension", _DIM_SKIP))
    out.update(_dataclass_defaults(SimSpec, "simulate", _SIM_SKIP))
    out["simulate.estimators"] = ["qopg"]
    return out


def check_keys(flat: Mapping[str, Any]) -> None:
    known = default_config()
    unknown = sorted(k for k in flat if k not in known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def _coerce(value, default, name: str):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return bool(value)
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, (list, tuple)):
            if isinstance(value, str):
                value = [v for v in value.replace(";", ",").split(",") if v.strip()]
            return [type(default[0])(v) if default else v for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot use {value!r}") from None
    return value


def build(cls, flat: Mapping[str, Any], prefix: str, skip=(), **overrides):
    """Instantiate dataclass ``cls`` from the ``prefix.*`` keys of ``flat``."""
    defaults = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        key = f"{prefix}.{f.name}"
        default = getattr(defaults, f.name)
        if dataclasses.is_dataclass(default):
            if any(k.startswith(key + ".") for k in flat):
                kwargs[f.name] = build(type(default), flat, key)
            continue
        if key in flat:
            kwargs[f.name] = _coerce(flat[key], default, key)
    kwargs.update(overrides)
    if cls in (QopgConfig, QmaveConfig) and kwargs.get("bandwidth") is not None:
        rule, h = parse_bandwidth_rule(kwargs["bandwidth"])
        kwargs["bandwidth"] = rule
        if h is not None:
            kwargs["h"] = h
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def sim_spec(flat: Mapping[str, Any], **overrides) -> SimSpec:
    """A :class:`SimSpec` whose estimators carry their ``estimator.*`` options."""
    names = flat.get("simulate.estimators", ["qopg"])
    if isinstance(names, str):
        names = [s.strip() for s in names.split(",") if s.strip()]
    base = SimSpec()
    kwargs = {}
    for f in dataclasses.fields(SimSpec):
        key = f"simulate.{f.name}"
        if f.name in _SIM_SKIP or key not in flat:
            continue
        kwargs[f.name] = _coerce(flat[key], getattr(base, f.name), key)
    kwargs.update(overrides)
    estimators = {}
    for name in names:
        prefix = f"estimator.{name}."
        opts = {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)}
        estimators[name] = estimator_options(name, opts)
    return SimSpec(estimators=estimators, **kwargs)


def estimator_options(name: str, opts: Mapping[str, Any]) -> dict:
    """Typed keyword arguments for one estimator from its dotted sub-keys."""
    cls = _SECTIONS.get(f"estimator.{name}")
    if cls is None:
        raise ConfigError(f"unknown estimator {name!r}")
    flat = {f"x.{k}": v for k, v in opts.items()}
    cfg = build(cls, flat, "x", skip=("q",) if cls is SirConfig else ())
    out = {}
    for key in opts:
        top = key.split(".")[0]
        out[top] = getattr(cfg, top)
    if "bandwidth" in out and getattr(cfg, "h", None) is not None:
        out["h"] = cfg.h
    return out


def merge(*layers: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for layer in layers:
        if layer:
            out.update({k: v for k, v in layer.items() if v is not None})
    return out
