"""Experiment configuration: one JSON document, one section per concern.

Sections (all optional except where a command needs them)::

    id           experiment label used in reports
    seed         integer for anything randomized
    group        {"builtin": "H1"} or an explicit structure-constant table
    kernel       {"shape", "R", "nodes"}
    coefficients {"preset": ...} or literal expressions
    domain       {"box": [[lo...], [hi...]], "h": spacing}
    time         {"T", "dt", "outputs"}
    operator     {"kind": "E"|"K"|"L", "epsilon"}
    data         {"u0": expr, "g": expr} or {"preset": name}
    sweep        {"epsilons", "h_rule", "subdominance_check", "workers"}
    reference    {"h_ref", "dt_ref"}
    thresholds   {"min_rate", "max_residual", "strictly_decreasing"}
    consistency  {"kind", "fields", "epsilons", "samples"}
    output       {"dir", "formats"}
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .coefficients import CoefficientSet, coefficients_from_config
from .fields import ScalarField, parse_expression
from .group import StratifiedGroup, builtin, group_from_config
from .kernel import KernelJ, kernel_from_config

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "DATA_PRESETS",
    "load_config",
    "merge_defaults",
    "build_group",
    "build_kernel",
    "build_coefficients",
    "build_data",
    "box",
    "output_times",
]

DEFAULTS = {
    "id": "experiment",
    "seed": 0,
    "group": {"builtin": "R1"},
    "kernel": {"shape": "quartic-bump", "R": 1.0},
    "coefficients": {"preset": "constant"},
    "domain": {},
    "time": {"T": 0.1, "outputs": 10},
    "operator": {"kind": "K", "epsilon": 0.1},
    "data": {"preset": "smooth-compatible"},
    "sweep": {"epsilons": [0.2, 0.1, 0.05, 0.025], "h_rule": "eps2/4",
              "subdominance_check": "none", "workers": 1},
    "reference": {"h_ref": 1 / 1024},
    "thresholds": {"min_rate": 0.8, "max_residual": 0.15, "strictly_decreasing": True},
    "output": {"dir": "out", "formats": ["csv", "json", "gnuplot"]},
}

# u0 / g pairs; g is smooth on a neighbourhood of the closed box
DATA_PRESETS = {
    "smooth-compatible": {
        1: ("sin(pi*x1) + 0.5 + 0.25*x1", "0.5 + 0.25*x1"),
        2: ("sin(pi*x1)*sin(pi*x2) + 0.5 + 0.25*x1", "0.5 + 0.25*x1"),
        3: ("sin(pi*x1)*sin(pi*x2)*sin(pi*x3) + 0.5 + 0.25*x1", "0.5 + 0.25*x1"),
    },
    "heat-mode": {
        1: ("sin(pi*x1)", "0"),
        2: ("sin(pi*x1)*sin(pi*x2)", "0"),
        3: ("sin(pi*x1)*sin(pi*x2)*sin(pi*x3)", "0"),
    },
    "constant": {d: ("1", "1") for d in (1, 2, 3)},
}


class ConfigError(ValueError):
    pass


def merge_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for key, val in cfg.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "group":
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    # data presets and literal expressions are mutually exclusive
    if "u0" in cfg.get("data", {}) and "preset" not in cfg["data"]:
        out["data"].pop("preset", None)
    coef = cfg.get("coefficients", {})
    if ("a" in coef or "mode" in coef) and "preset" not in coef:
        out["coefficients"].pop("preset", None)
    return out


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return merge_defaults(raw)


def build_group(cfg: dict) -> StratifiedGroup:
    sec = cfg["group"]
    if "builtin" in sec:
        return builtin(sec["builtin"])
    return group_from_config(sec)


def build_kernel(cfg: dict, G: StratifiedGroup) -> KernelJ:
    return kernel_from_config(cfg["kernel"], G.n)


def build_coefficients(cfg: dict, G: StratifiedGroup) -> CoefficientSet:
    sec = cfg["coefficients"]
    if cfg["operator"]["kind"].upper() == "E":
        # the local limit of E is (C/2) times the subLaplacian
        return CoefficientSet(G, label="identity")
    return coefficients_from_config(sec, G)


def build_data(cfg: dict, G: StratifiedGroup) -> tuple[ScalarField, ScalarField]:
    sec = cfg["data"]
    if "preset" in sec:
        try:
            u0, g = DATA_PRESETS[sec["preset"]][G.n]
        except KeyError:
            raise ConfigError(f"no data preset {sec['preset']!r} in dimension {G.n}") from None
    else:
        try:
            u0, g = sec["u0"], sec["g"]
        except KeyError as exc:
            raise ConfigError(f"data section lacks {exc}") from None
    scale = float(sec.get("scale", 1.0))
    u0f, gf = parse_expression(str(u0), G.n), parse_expression(str(g), G.n)
    if scale != 1.0:
        u0f = _scaled(u0f, scale)
        gf = _scaled(gf, scale)
    return u0f, gf


def _scaled(f: ScalarField, s: float) -> ScalarField:
    if f.time_dependent:
        return ScalarField(lambda x, t: s * f(x, t), f.smoothness, True, f"{s}*({f.label})")
    return ScalarField(lambda x: s * f(x), f.smoothness, False, f"{s}*({f.label})")


def box(cfg: dict, G: StratifiedGroup):
    sec = cfg["domain"]
    lo, hi = sec.get("box", [[0.0] * G.n, [1.0] * G.n])
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if lo.shape != (G.n,) or hi.shape != (G.n,):
        raise ConfigError(f"domain box must have {G.n} coordinates per corner")
    return lo, hi


def output_times(cfg: dict) -> np.ndarray:
    sec = cfg["time"]
    T = float(sec["T"])
    outs = sec.get("outputs", 10)
    if isinstance(outs, int):
        return np.linspace(0.0, T, outs + 1)[1:]
    ts = np.asarray(outs, float)
    if np.any(np.diff(ts) <= 0) or ts[-1] != T:
        raise ConfigError("output times must increase and end at T")
    return ts
