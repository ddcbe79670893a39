"""Run configuration: TOML files, built-in presets and scenario assembly.

A configuration is a nested table.  An optional top-level ``preset`` key
names a built-in scenario whose tables are used as defaults; everything in
the file is merged over it key by key.

Scalar random variables (``K``, ``a``, ``Lip`` scales, ...) are given as a
number or as a table ``{kind = ..., ...}``; see :func:`make_function`.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import cocycle as cc
from .corollaries import CorollaryData
from .driving import CircleRotation, DrivingSystem, IntegerShiftIndexed, PlanarShiftFlow, TimeDomain, as_point
from .perturbation import Perturbation, linear_perturbation, sine_perturbation, zero_perturbation


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


LN2 = math.log(2.0)

PRESETS: dict[str, dict] = {
    "toy-pseudo-hyperbolic": {
        "driving": {"kind": "integer-shift", "anchor": [0.0]},
        "cocycle": {"kind": "diagonal", "rates": [-0.5, 0.4], "norm": "max"},
        "bounds": {"kind": "diagonal", "K": 1.0, "scale": 1.0},
        "perturbation": {"kind": "sine", "scale": {"kind": "exp", "scale": 0.05, "rate": -LN2}},
        "grids": {"xi_extent": 1.0, "xi_points": 41, "k_max": 40, "horizon": 40,
                  "sample_times": [0, 1, 2, 5, 10, 20], "sample_points": [[0.0], [3.0], [10.0]],
                  "decay_horizon": 60},
        "tolerances": {"solver": 1e-8, "max_iters": 200, "splitting": 1e-12, "dichotomy": 1e-12,
                       "decay": 1e-6, "growth": 1e-9},
        "output": {"seed": 0, "growth_pairs": 10000, "invariance_stride": 1},
    },
    "tempered-exp": {
        "driving": {"kind": "integer-shift", "anchor": [0.0]},
        "cocycle": {"kind": "example2", "norm": "max",
                    "K": {"kind": "sin2", "base": 1.0, "amp": 0.5},
                    "phi": {"kind": "exp", "rate": -0.6},
                    "psi": {"kind": "exp", "rate": -0.3}},
        "bounds": {"kind": "example2", "scale": 1.0},
        "perturbation": {"kind": "sine",
                         "scale": {"kind": "exp-abs", "scale": 0.2 / 1.5 * math.exp(-0.6) / 3.0, "rate": -LN2}},
        "grids": {"xi_extent": 1.0, "xi_points": 41, "k_max": 20, "horizon": 40,
                  "sample_times": [0, 1, 2, 5, 10], "sample_points": [[0.0], [3.0], [-5.0]],
                  "decay_horizon": 60},
        "tolerances": {"solver": 1e-8, "max_iters": 200, "splitting": 1e-12, "dichotomy": 1e-12,
                       "decay": 1e-6, "growth": 1e-9},
        "output": {"seed": 0, "growth_pairs": 2000, "invariance_stride": 1},
        "corollary": {"kind": "c42"},
    },
    "example2-poly": {
        "driving": {"kind": "planar-shift", "anchor": [0.0, 0.0]},
        "cocycle": {"kind": "example2", "norm": "max",
                    "K": {"kind": "poly", "scale": 1.0, "power": 0.25},
                    "phi": {"kind": "ratio", "a": {"kind": "poly", "power": 1.0}},
                    "psi": {"kind": "ratio", "a": {"kind": "poly", "power": 0.5}}},
        "bounds": {"kind": "example2", "scale": 1.0},
        "perturbation": {"kind": "sine", "scale": {"kind": "exp-abs", "scale": 0.05, "rate": -1.0}},
        "grids": {"xi_extent": 1.0, "xi_points": 21, "k_max": 10, "horizon": 100, "time_step": 0.1,
                  "sample_times": [0.0, 0.5, 1.25, 2.0, 5.0],
                  "sample_points": [[0.0, 0.0], [1.0, 0.5], [-2.0, 0.3]],
                  "decay_horizon": 1000.0},
        "tolerances": {"solver": 1e-8, "max_iters": 200, "splitting": 1e-12, "dichotomy": 1e-12,
                       "decay": 1e-6, "growth": 1e-9, "psi_step": 0.0125},
        "output": {"seed": 0, "growth_pairs": 300, "invariance_stride": 2},
    },
}

# passing hypothesis datasets, one per corollary
COROLLARY_DATASETS: dict[str, dict] = {
    "c32": {"driving": "planar-shift", "delta": 0.2, "K": {"kind": "sin2", "base": 1.0, "amp": 0.5},
            "a": -0.6, "b": -0.3, "gamma": 0.1, "G": {"kind": "exp-abs", "scale": 0.25, "rate": -1.0},
            "lip": {"kind": "exp-abs", "scale": 0.25 * 0.2 / 1.5, "rate": -1.0},
            "samples": [[0.0, 0.0], [1.0, 0.5]], "horizon": 30.0, "step": 0.01},
    "c33": {"driving": "planar-shift", "delta": 0.2, "K": {"kind": "sin2", "base": 1.0, "amp": 0.5},
            "a": -0.6, "b": -0.3, "G": {"kind": "exp-abs", "scale": 0.25, "rate": -1.0},
            "lip": {"kind": "exp-abs", "scale": 0.25 * 0.2 / 1.5, "rate": -1.0},
            "samples": [[0.0, 0.0], [1.0, 0.5]], "horizon": 30.0, "step": 0.01},
    "c34": {"driving": "planar-shift", "delta": 0.2, "K": {"kind": "sin2", "base": 1.0, "amp": 0.2},
            "a": {"kind": "exp-wobble", "rate": 0.5, "wobble": 0.1}, "b": {"kind": "exp", "rate": 0.4},
            "G": {"kind": "exp-abs", "scale": 0.25, "rate": -1.0},
            "lip": {"kind": "exp-abs", "scale": 0.25 * 0.2 / 1.2, "rate": -1.0},
            "samples": [[0.0, 0.0], [1.0, 0.5]], "horizon": 30.0, "step": 0.01},
    "c42": {"driving": "integer-shift", "delta": 0.2, "K": {"kind": "sin2", "base": 1.0, "amp": 0.5},
            "a": -0.6, "b": -0.3, "gamma": 0.1, "G": {"kind": "exp-abs", "scale": 1.0 / 3.0, "rate": -LN2},
            "lip": {"kind": "exp-abs", "scale": 0.2 / 1.5 * math.exp(-0.6) / 3.0, "rate": -LN2},
            "samples": [[0.0], [3.0], [-5.0]], "horizon": 40},
    "c43": {"driving": "integer-shift", "delta": 0.2, "K": 1.0,
            "a": {"kind": "sin2", "base": -0.6, "amp": 0.1}, "b": -0.3,
            "G": {"kind": "exp-abs", "scale": 1.0 / 3.0, "rate": -LN2},
            "lip": {"kind": "exp-abs", "scale": 0.2 * math.exp(-0.6) / 3.0, "rate": -LN2},
            "samples": [[0.0], [3.0], [-5.0]], "horizon": 40},
    "c44": {"driving": "integer-shift", "delta": 0.2, "K": 1.0,
            "a": {"kind": "exp", "rate": 0.5}, "b": {"kind": "exp", "rate": 0.4},
            "G": {"kind": "exp-abs", "scale": 1.0 / 3.0, "rate": -LN2},
            "lip": {"kind": "exp-abs", "scale": 0.2 / 3.0, "rate": -LN2},
            "samples": [[0.0], [3.0], [-5.0]], "horizon": 40},
}

_TOP_KEYS = {"preset", "driving", "cocycle", "bounds", "perturbation", "grids", "tolerances", "corollary",
             "output", "threads"}


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and "kind" not in v:
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list, object]:
    """``a.b.c=value`` with a TOML value; bare words are taken as strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def apply_override(cfg: dict, path: list, value) -> dict:
    cfg = copy.deepcopy(cfg)
    node = cfg
    for p in path[:-1]:
        nxt = node.get(p)
        if not isinstance(nxt, dict):
            nxt = {}
            node[p] = nxt
        node = nxt
    node[path[-1]] = value
    return cfg


def resolve(raw: dict, preset: str | None = None) -> dict:
    """Merge ``raw`` over its preset (or ``preset`` when given explicitly)."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    name = preset or raw.get("preset")
    if name is None:
        return copy.deepcopy(raw)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    out = merge(PRESETS[name], {k: v for k, v in raw.items() if k != "preset"})
    out["preset"] = name
    return out


def load_config(path: str | Path | None, overrides: list[str] = (), preset: str | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} not found")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {str(p)!r}: {exc}") from None
    for text in overrides:
        raw = apply_override(raw, *parse_override(text))
    return resolve(raw, preset)


# ---------------------------------------------------------------------------
# scalar functions of the base point


def _coord(w: np.ndarray, i: int) -> float:
    return float(w[i]) if i < len(w) else 0.0


def make_function(spec) -> Callable:
    """Build ``omega -> float`` from a number or a ``{kind = ...}`` table.

    Kinds (``x`` is coordinate ``coord`` of omega, default 0; ``y`` is
    coordinate 1 or 0 when absent):

    ``const`` ``value``; ``exp`` ``scale*exp(rate*x)``; ``exp-abs``
    ``scale*exp(rate*|x|)``; ``exp-wobble`` ``scale*exp(rate*x + wobble*sin x)``;
    ``poly`` ``scale*(1+x^2)^(power*(1+y^2))``; ``sin2`` ``base + amp*sin(x)^2``;
    ``min`` of ``args``; ``product`` of ``factors``.  Any spec may carry
    ``power``, applied last (except ``poly``, where it is the exponent).
    """
    if isinstance(spec, bool):
        raise ConfigError("a function spec cannot be a boolean")
    if isinstance(spec, (int, float)):
        v = float(spec)
        return lambda w: v
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"bad function spec {spec!r}")
    s = dict(spec)
    kind = s.pop("kind")
    i = int(s.pop("coord", 0))

    def num(key, default=None):
        if key not in s and default is None:
            raise ConfigError(f"function kind {kind!r} needs {key!r}")
        v = s.get(key, default)
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{kind}.{key} must be a number, got {v!r}")
        return float(v)

    if kind == "const":
        v = num("value")
        fn = lambda w: v
    elif kind == "exp":
        sc, r = num("scale", 1.0), num("rate")
        fn = lambda w: sc * math.exp(r * _coord(w, i))
    elif kind == "exp-abs":
        sc, r = num("scale", 1.0), num("rate")
        fn = lambda w: sc * math.exp(r * abs(_coord(w, i)))
    elif kind == "exp-wobble":
        sc, r, wb = num("scale", 1.0), num("rate"), num("wobble", 0.0)
        fn = lambda w: sc * math.exp(r * _coord(w, i) + wb * math.sin(_coord(w, i)))
    elif kind == "poly":
        sc, pw = num("scale", 1.0), num("power")
        return lambda w: sc * (1.0 + _coord(w, i) ** 2) ** (pw * (1.0 + _coord(w, 1) ** 2))
    elif kind == "sin2":
        base, amp = num("base", 1.0), num("amp")
        fn = lambda w: base + amp * math.sin(_coord(w, i)) ** 2
    elif kind in ("min", "product"):
        key = "args" if kind == "min" else "factors"
        parts = [make_function(p) for p in s.get(key, [])]
        if not parts:
            raise ConfigError(f"function kind {kind!r} needs a nonempty {key!r} list")
        if kind == "min":
            fn = lambda w: min(f(w) for f in parts)
        else:
            fn = lambda w: math.prod(f(w) for f in parts)
    else:
        raise ConfigError(f"unknown function kind {kind!r}")
    if "power" in s:
        pw = num("power")
        return lambda w: fn(w) ** pw
    return fn


# ---------------------------------------------------------------------------
# scenario


def make_driving(spec) -> DrivingSystem:
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "integer-shift":
        return IntegerShiftIndexed()
    if kind == "planar-shift":
        return PlanarShiftFlow()
    if kind == "circle-rotation":
        td = TimeDomain(spec.get("time_domain", "discrete"))
        if "angle" not in spec:
            raise ConfigError("circle-rotation needs an angle")
        return CircleRotation(angle=float(spec["angle"]), time_domain=td)
    raise ConfigError(f"unknown driving kind {kind!r}")


def _factor(spec, ds: DrivingSystem) -> Callable:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"bad cocycle factor {spec!r}")
    kind = spec["kind"]
    if kind == "exp":
        return cc.exp_factor(make_function(spec.get("rate")))
    if kind == "ratio":
        return cc.ratio_factor(make_function(spec.get("a")), ds)
    if kind == "birkhoff":
        if ds.time_domain is not TimeDomain.DISCRETE:
            raise ConfigError("Birkhoff-sum factors need discrete time")
        return cc.birkhoff_factor(make_function(spec.get("a")), ds)
    if kind == "integral":
        if ds.time_domain is not TimeDomain.CONTINUOUS:
            raise ConfigError("integral factors need continuous time")
        return cc.integral_exp_factor(make_function(spec.get("a")), ds)
    raise ConfigError(f"unknown cocycle factor kind {kind!r}")


@dataclass
class Scenario:
    config: dict
    driving: DrivingSystem
    cocycle: cc.SplitCocycle
    bounds: cc.DichotomyBounds
    perturbation: Perturbation
    anchor: np.ndarray
    grids: dict
    tolerances: dict
    output: dict
    threads: int = 1
    notes: list = field(default_factory=list)

    @property
    def discrete(self) -> bool:
        return self.driving.time_domain is TimeDomain.DISCRETE

    @property
    def time_step(self) -> float:
        return 1.0 if self.discrete else float(self.grids["time_step"])


def _require(cfg: dict, key: str) -> dict:
    v = cfg.get(key)
    if not isinstance(v, dict):
        raise ConfigError(f"missing [{key}] section")
    return v


def build_scenario(cfg: dict) -> Scenario:
    try:
        return _build(cfg)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete configuration: {exc!r}") from None


def _build(cfg: dict) -> Scenario:
    dsec = _require(cfg, "driving")
    ds = make_driving(dsec)
    anchor = as_point(dsec.get("anchor", [0.0] * ds.dim), ds.dim)
    csec = _require(cfg, "cocycle")
    norm = cc.NormKind.parse(csec.get("norm", "max"))
    bsec = _require(cfg, "bounds")
    ckind = csec.get("kind")
    if ckind == "diagonal":
        rates = [float(r) for r in csec["rates"]]
        cocycle = cc.diagonal_cocycle(rates, ds, stable=csec.get("stable"), norm_kind=norm)
        stable = [r for r in rates if r < 0] if csec.get("stable") is None else \
            [r for r, s in zip(rates, csec["stable"]) if s]
        unstable = [r for r in rates if r not in stable]
        a = max(stable) if stable else 0.0
        b = min(unstable) if unstable else 0.0
        bkind = bsec.get("kind", "diagonal")
        if bkind != "diagonal":
            raise ConfigError("diagonal cocycles use bounds kind 'diagonal'")
        K = float(bsec.get("K", 1.0))
        bounds = cc.CustomBounds(ds, plus=lambda t, w: K * math.exp(a * t),
                                 minus=lambda t, w: K * math.exp(-b * t), K_fn=lambda w: K, label="diagonal")
    elif ckind == "example2":
        K = make_function(csec["K"])
        phi, psi = _factor(csec["phi"], ds), _factor(csec["psi"], ds)
        cocycle = cc.example2_cocycle(K, phi, psi, ds, norm_kind=norm)
        bkind = bsec.get("kind", "example2")
        if bkind == "example2":
            bounds = cc.example2_bounds(K, phi, psi, ds)
        elif bkind in ("tempered-exp", "integral-exp", "birkhoff-exp", "ratio"):
            cls = {"tempered-exp": cc.TemperedExp, "integral-exp": cc.IntegralExp,
                   "birkhoff-exp": cc.BirkhoffExp, "ratio": cc.RatioForm}[bkind]
            bounds = cls(ds, make_function(bsec.get("K", csec["K"])), make_function(bsec["a"]),
                         make_function(bsec["b"]))
        else:
            raise ConfigError(f"unknown bounds kind {bkind!r}")
    else:
        raise ConfigError(f"unknown cocycle kind {ckind!r}")
    scale = float(bsec.get("scale", 1.0))
    if scale != 1.0:
        bounds = bounds.scaled(scale)
    psec = _require(cfg, "perturbation")
    pkind = psec.get("kind")
    if pkind == "zero":
        pert = zero_perturbation()
    elif pkind == "sine":
        if cocycle.fiber_dim != 2:
            raise ConfigError("the sine perturbation acts on the plane")
        pert = sine_perturbation(make_function(psec["scale"]))
    elif pkind == "linear":
        pert = linear_perturbation(float(psec["c"]))
    else:
        raise ConfigError(f"unknown perturbation kind {pkind!r}")
    grids = dict(_require(cfg, "grids"))
    for key in ("xi_extent", "xi_points", "k_max", "horizon"):
        if key not in grids:
            raise ConfigError(f"[grids] needs {key!r}")
    if ds.time_domain is TimeDomain.CONTINUOUS and "time_step" not in grids:
        raise ConfigError("continuous scenarios need grids.time_step")
    tol = {"solver": 1e-8, "max_iters": 200, "splitting": 1e-12, "dichotomy": 1e-12, "decay": 1e-6,
           "growth": 1e-9, **cfg.get("tolerances", {})}
    output = {"seed": 0, "growth_pairs": 10000, "invariance_stride": 1, **cfg.get("output", {})}
    threads = int(cfg.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return Scenario(config=cfg, driving=ds, cocycle=cocycle, bounds=bounds, perturbation=pert, anchor=anchor,
                    grids=grids, tolerances=tol, output=output, threads=threads)


def corollary_data(kind: str, overrides: dict | None = None) -> tuple[CorollaryData, list, float]:
    """Corollary inputs from the built-in dataset for ``kind`` merged with ``overrides``."""
    kind = kind.lower()
    if kind not in COROLLARY_DATASETS:
        raise ConfigError(f"unknown corollary id {kind!r}; expected one of {', '.join(COROLLARY_DATASETS)}")
    spec = merge(COROLLARY_DATASETS[kind], {k: v for k, v in (overrides or {}).items() if k != "kind"})
    ds = make_driving(spec["driving"])
    try:
        data = CorollaryData(
            driving=ds, K=make_function(spec["K"]), a=make_function(spec["a"]), b=make_function(spec["b"]),
            G=make_function(spec["G"]), delta=float(spec["delta"]), lip=make_function(spec["lip"]),
            gamma=make_function(spec["gamma"]) if "gamma" in spec else None,
            step=float(spec.get("step", 0.01)), limit_tol=float(spec.get("limit_tol", 1e-6)),
        )
    except KeyError as exc:
        raise ConfigError(f"corollary dataset lacks {exc}") from None
    return data, [as_point(w, ds.dim) for w in spec["samples"]], float(spec["horizon"])
