"""Hypothesis checkers for the six corollary families.

Identifiers: ``c32`` tempered exponential (continuous), ``c33`` integral
exponential (continuous), ``c34`` ratio form (continuous), ``c42`` tempered
exponential (discrete), ``c43`` Birkhoff-sum exponential (discrete), ``c44``
ratio form (discrete).

Only the hypotheses are checked, on finite samples and windows.  Sums of
``G`` over the whole orbit are truncated to ``[-horizon, horizon]`` and the
limit conditions use the same decreasing-and-small heuristic as the decay
check.  Whether the conclusions actually hold is for the solver to show.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .driving import DrivingSystem, TimeDomain, as_point
from .perturbation import temperedness_lambda

COROLLARY_IDS = ("c32", "c33", "c34", "c42", "c43", "c44")
_CONTINUOUS = {"c32", "c33", "c34"}
_NEEDS_GAMMA = {"c32", "c42"}

EQ_TOL = 1e-12


@dataclass
class CorollaryData:
    """Random variables and constants entering a corollary.

    ``lip`` is the declared ``Lip(f_omega)`` as a function of the base
    point; ``gamma`` is only used by the tempered families.
    """

    driving: DrivingSystem
    K: Callable
    a: Callable
    b: Callable
    G: Callable
    delta: float
    lip: Callable
    gamma: Callable | None = None
    step: float = 0.01
    limit_tol: float = 1e-6
    orbit_points: int = 21


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    margin: float
    witness: dict | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class HypothesisReport:
    kind: str
    checks: list
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def check(self, name: str) -> HypothesisCheck:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks], "notes": self.notes}


def _f(fn, w) -> float:
    return float(fn(as_point(w)))


def _inequality(name: str, points, fn, strict: bool = False) -> HypothesisCheck:
    """``lhs <= rhs`` (or ``<``) at every point; ``fn(w) -> (lhs, rhs, where)``."""
    worst, witness = math.inf, None
    for w in points:
        lhs, rhs, where = fn(w)
        margin = rhs - lhs
        if margin < worst:
            worst, witness = margin, {**where, "lhs": lhs, "rhs": rhs}
    if strict:
        ok = worst > 0
    else:
        ok = witness is None or worst >= -EQ_TOL * max(1.0, abs(witness["rhs"]))
    return HypothesisCheck(name, bool(ok), worst, None if ok else witness)


def _window(ds: DrivingSystem, horizon: float, step: float) -> np.ndarray:
    if ds.time_domain is TimeDomain.DISCRETE:
        h = int(round(horizon))
        return np.arange(-h, h + 1, dtype=float)
    m = int(round(horizon / step))
    return np.arange(-m, m + 1) * step


def _orbit_points(data: CorollaryData, samples, horizon) -> list:
    ds = data.driving
    if ds.time_domain is TimeDomain.DISCRETE:
        m = int(horizon) // 2
        ts = range(-m, m + 1)
    else:
        ts = np.linspace(-horizon / 2, horizon / 2, data.orbit_points)
    return [ds.evolve(t, w) for w in samples for t in ts]


def _fd_step(t: float) -> float:
    return 1e-4 * max(1.0, abs(t))


def _derivative_along_flow(fn, ds: DrivingSystem, w, t: float) -> float:
    h = _fd_step(t)
    return (float(fn(ds.evolve(t + h, w))) - float(fn(ds.evolve(t - h, w)))) / (2 * h)


def _limit_check(name: str, data: CorollaryData, samples, horizon, seq) -> HypothesisCheck:
    """Heuristic for ``seq(w, t) -> 0``: small at the horizon and decreasing late."""
    ds = data.driving
    if ds.time_domain is TimeDomain.DISCRETE:
        ts = np.arange(0, int(horizon) + 1, dtype=float)
    else:
        ts = np.linspace(0.0, float(horizon), 201)
    worst, witness = math.inf, None
    for w in samples:
        vals = seq(w, ts)
        tail = vals[len(vals) // 2:]
        dec = bool(np.all(tail[1:] <= tail[:-1] * (1 + 1e-12)))
        margin = data.limit_tol - vals[-1] if dec else -math.inf
        if margin < worst:
            worst = margin
            witness = {"omega": as_point(w).tolist(), "final": float(vals[-1]), "decreasing": dec,
                       "horizon": float(horizon)}
    ok = worst >= 0
    return HypothesisCheck(name, ok, worst, None if ok else witness)


def _cumulative_integral(fn, ds: DrivingSystem, w, ts: np.ndarray) -> np.ndarray:
    # trapezoid on a refinement of ts (ts uniform, starting at 0)
    vals = np.array([float(fn(ds.evolve(t, w))) for t in ts])
    dt = np.diff(ts)
    return np.concatenate([[0.0], np.cumsum(0.5 * dt * (vals[1:] + vals[:-1]))])


def _common(data: CorollaryData, points, samples, horizon) -> list:
    ds = data.driving
    checks = [HypothesisCheck("delta_range", 0 < data.delta < 0.25, min(data.delta, 0.25 - data.delta),
                              None if 0 < data.delta < 0.25 else {"delta": data.delta})]
    checks.append(_inequality("K_at_least_one", points, lambda w: (1.0, _f(data.K, w), {"omega": w.tolist()})))
    checks.append(_inequality("G_positive", points, lambda w: (0.0, _f(data.G, w), {"omega": w.tolist()}),
                              strict=True))
    win = _window(ds, horizon, data.step)

    def g_total(w):
        vals = np.array([_f(data.G, ds.evolve(t, w)) for t in win])
        total = float(vals.sum()) if ds.time_domain is TimeDomain.DISCRETE else float(np.trapezoid(vals, win))
        return total, 1.0, {"omega": as_point(w).tolist(), "window": [float(win[0]), float(win[-1])]}

    checks.append(_inequality("G_total_at_most_one", samples, g_total))
    return checks


def _invariance(name: str, fn, data: CorollaryData, samples, points) -> HypothesisCheck:
    worst, witness = 0.0, None
    for w0 in samples:
        ref = _f(fn, w0)
        for w in points:
            d = abs(_f(fn, w) - ref)
            if d > worst:
                worst, witness = d, {"omega": as_point(w0).tolist(), "at": as_point(w).tolist(),
                                     "values": [ref, _f(fn, w)]}
    ok = worst <= EQ_TOL * max(1.0, max(abs(_f(fn, w)) for w in samples))
    return HypothesisCheck(name, ok, -worst, None if ok else witness)


def _tempered(data: CorollaryData, samples, horizon) -> tuple[HypothesisCheck, dict]:
    lambdas, bad = {}, None
    for w in samples:
        if not _f(data.gamma, w) > 0:
            lambdas[tuple(as_point(w).tolist())] = math.inf
            if bad is None:
                bad = {"omega": as_point(w).tolist(), "gamma": _f(data.gamma, w), "reason": "gamma not positive"}
            continue
        rep = temperedness_lambda(data.K, _f(data.gamma, w), w, horizon, data.driving,
                                  step=None if data.driving.time_domain is TimeDomain.DISCRETE else data.step)
        lambdas[tuple(as_point(w).tolist())] = rep.lambda_
        if not rep.stabilized and bad is None:
            bad = {"omega": as_point(w).tolist(), **rep.to_dict()}
    return HypothesisCheck("K_tempered", bad is None, 0.0 if bad is None else -1.0, bad), lambdas


def _lambda_at(data: CorollaryData, w, horizon) -> float:
    # no tempering rate exists without gamma > 0; inf collapses the ceiling to 0
    if not _f(data.gamma, w) > 0:
        return math.inf
    step = None if data.driving.time_domain is TimeDomain.DISCRETE else data.step
    return temperedness_lambda(data.K, _f(data.gamma, w), w, horizon, data.driving, step=step).lambda_


def check_corollary(kind: str, params: CorollaryData, samples: Sequence, horizon: float) -> HypothesisReport:
    """Evaluate every hypothesis of corollary ``kind`` on the samples.

    ``samples`` are base points; the pointwise hypotheses are evaluated on
    the orbit segment of each sample over ``[-horizon/2, horizon/2]``.
    Raises ``ValueError`` on malformed input (unknown id, wrong time
    domain, missing ``gamma``); a ``delta`` outside ``]0, 1/4[`` is a
    failed hypothesis, not an error.
    """
    kind = str(kind).lower()
    if kind not in COROLLARY_IDS:
        raise ValueError(f"unknown corollary id {kind!r}; expected one of {', '.join(COROLLARY_IDS)}")
    ds = params.driving
    cont = ds.time_domain is TimeDomain.CONTINUOUS
    if cont != (kind in _CONTINUOUS):
        raise ValueError(f"{kind} needs a {'continuous' if kind in _CONTINUOUS else 'discrete'} driving system")
    if kind in _NEEDS_GAMMA and params.gamma is None:
        raise ValueError(f"{kind} needs gamma")
    if not samples:
        raise ValueError("no base-point samples")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    samples = [as_point(w, ds.dim) for w in samples]
    points = _orbit_points(params, samples, horizon)
    d = params
    checks = _common(d, points, samples, horizon)
    notes = [f"sums of G truncated to [-{horizon:g}, {horizon:g}]",
             "limit conditions checked heuristically over the horizon"]

    def ab(w):
        return _f(d.a, w), _f(d.b, w)

    if kind in ("c32", "c42"):
        checks.append(_invariance("a_invariant", d.a, d, samples, points))
        checks.append(_invariance("b_invariant", d.b, d, samples, points))
        checks.append(_invariance("gamma_invariant", d.gamma, d, samples, points))
        checks.append(_inequality("a_plus_b_negative", points,
                                  lambda w: (sum(ab(w)), 0.0, {"omega": w.tolist()}), strict=True))
        checks.append(_inequality("gamma_positive", points,
                                  lambda w: (0.0, _f(d.gamma, w), {"omega": w.tolist()}), strict=True))
        checks.append(_inequality("a_plus_b_plus_gamma_negative", points,
                                  lambda w: (sum(ab(w)) + _f(d.gamma, w), 0.0, {"omega": w.tolist()}), strict=True))
        tempered, _ = _tempered(d, samples, horizon)
        checks.append(tempered)

        if kind == "c32":
            def ceiling(w):
                lam = _lambda_at(d, w, horizon)
                s = sum(ab(w)) + _f(d.gamma, w)
                rhs = d.delta / _f(d.K, w) * min(_f(d.G, w), abs(s) / lam)
                return _f(d.lip, w), rhs, {"omega": w.tolist(), "lambda": lam}
        else:
            def ceiling(w):
                lam = _lambda_at(d, w, horizon)
                a, b = ab(w)
                g = _f(d.gamma, w)
                k1 = _f(d.K, ds.evolve(1, w))
                rhs = d.delta / k1 * min(math.exp(a) * _f(d.G, w), math.exp(b) * (1 - math.exp(a + b + g)) / lam)
                return _f(d.lip, w), rhs, {"omega": w.tolist(), "lambda": lam}
        checks.append(_inequality("lip_ceiling", points, ceiling))

    elif kind == "c33":
        def dcond(w):
            dw = _derivative_along_flow(d.K, ds, w, 0.0)
            return _f(d.K, w) * sum(ab(w)), dw, {"omega": w.tolist(), "d": dw, "fd_step": _fd_step(0.0)}

        checks.append(_inequality("derivative_condition", points, dcond, strict=True))

        def ceiling(w):
            k = _f(d.K, w)
            dw = _derivative_along_flow(d.K, ds, w, 0.0)
            rhs = d.delta / k * min(_f(d.G, w), (dw / k - sum(ab(w))) / k)
            return _f(d.lip, w), rhs, {"omega": w.tolist()}

        checks.append(_inequality("lip_ceiling", points, ceiling))

        def seq(w, ts):
            fine = np.linspace(0.0, ts[-1], 20 * (len(ts) - 1) + 1)
            ia = _cumulative_integral(lambda p: _f(d.a, p) + _f(d.b, p), ds, w, fine)[::20]
            return np.array([_f(d.K, ds.evolve(t, w)) for t in ts]) * np.exp(ia)

        checks.append(_limit_check("limit_condition", d, samples, horizon, seq))
        notes.append(f"d_omega(t) by central differences with step 1e-4*max(1,|t|)")

    elif kind in ("c34", "c44"):
        checks.append(_inequality("a_positive", points, lambda w: (0.0, _f(d.a, w), {"omega": w.tolist()}), strict=True))
        checks.append(_inequality("b_positive", points, lambda w: (0.0, _f(d.b, w), {"omega": w.tolist()}), strict=True))

        def H(w):
            return -1.0 / (_f(d.a, w) * _f(d.b, w) * _f(d.K, w))

        win = _window(ds, horizon, max(d.step, horizon / 400) if cont else 1.0)
        if kind == "c34":
            def hprime(w):
                worst = (math.inf, None)
                for s in win:
                    v = _derivative_along_flow(H, ds, w, float(s))
                    if v < worst[0]:
                        worst = (v, float(s))
                return 0.0, worst[0], {"omega": w.tolist(), "s": worst[1], "H_prime": worst[0],
                                       "fd_step": _fd_step(worst[1])}

            checks.append(_inequality("H_increasing", samples, hprime, strict=True))

            def ceiling(w):
                hp = _derivative_along_flow(H, ds, w, 0.0)
                rhs = d.delta / _f(d.K, w) * min(_f(d.G, w), _f(d.a, w) * _f(d.b, w) * hp)
                return _f(d.lip, w), rhs, {"omega": w.tolist()}
        else:
            def hmono(w):
                hv = np.array([H(ds.evolve(n, w)) for n in win])
                inc = np.diff(hv)
                i = int(np.argmin(inc))
                return 0.0, float(inc[i]), {"omega": w.tolist(), "n": float(win[i]),
                                            "H": [float(hv[i]), float(hv[i + 1])]}

            checks.append(_inequality("H_nondecreasing", samples, hmono))

            def ceiling(w):
                w1 = ds.evolve(1, w)
                gap = H(w1) - H(w)
                rhs = d.delta * min(_f(d.a, w) * _f(d.b, w1) / _f(d.K, w1) * gap, _f(d.G, w))
                return _f(d.lip, w), rhs, {"omega": w.tolist()}
        checks.append(_inequality("lip_ceiling", points, ceiling))

        def seq(w, ts):
            return np.array([_f(d.K, p) / (_f(d.a, p) * _f(d.b, p)) for p in (ds.evolve(t, w) for t in ts)])

        checks.append(_limit_check("limit_condition", d, samples, horizon, seq))
        if kind == "c34":
            notes.append("H' by central differences with step 1e-4*max(1,|s|)")

    elif kind == "c43":
        def compat(w):
            a, b = ab(w)
            return _f(d.K, w) * math.exp(a + b), _f(d.K, ds.evolve(1, w)), {"omega": w.tolist()}

        checks.append(_inequality("K_growth_compatibility", points, compat))

        def ceiling(w):
            a, b = ab(w)
            k, k1 = _f(d.K, w), _f(d.K, ds.evolve(1, w))
            rhs = d.delta * min(math.exp(a) / k1 * _f(d.G, w), (1 / k - math.exp(a + b) / k1) / k1 * math.exp(-b))
            return _f(d.lip, w), rhs, {"omega": w.tolist()}

        checks.append(_inequality("lip_ceiling", points, ceiling))

        def seq(w, ts):
            out, s = [], 0.0
            for n in range(int(ts[-1]) + 1):
                p = ds.evolve(n, w)
                out.append(_f(d.K, p) * math.exp(s))
                s += _f(d.a, p) + _f(d.b, p)
            return np.array(out)

        checks.append(_limit_check("limit_condition", d, samples, horizon, seq))

    return HypothesisReport(kind=kind, checks=checks, notes=notes)
