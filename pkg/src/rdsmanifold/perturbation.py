"""Nonlinear perturbations, their Lipschitz data, and the constants sigma, tau.

The sums/integrals defining sigma and tau are evaluated on a single forward
orbit.  Everything is built from an :class:`OrbitTables` snapshot of the
bound functions and Lipschitz constants along that orbit, so the same
numbers feed both the stand-alone constants and the fixed-point solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cocycle import DichotomyBounds, NormKind, vector_norm
from .driving import DrivingSystem, TimeDomain, as_point


class LipschitzViolation(ValueError):
    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True, eq=False)
class Perturbation:
    """``f_omega(x)`` with a declared per-fiber Lipschitz constant.

    ``f_fn(omega, x)`` must broadcast over leading axes of ``x`` (shape
    ``(..., d)``).  ``lip_fn(omega)`` is the declared ``Lip(f_omega)``.
    """

    f_fn: Callable = field(repr=False)
    lip_fn: Callable = field(repr=False)
    tag: str = "custom"

    def f(self, omega, x) -> np.ndarray:
        return np.asarray(self.f_fn(as_point(omega), np.asarray(x, dtype=float)), dtype=float)

    def lip(self, omega) -> float:
        return float(self.lip_fn(as_point(omega)))

    def scaled(self, c: float) -> "Perturbation":
        return Perturbation(
            f_fn=lambda w, x: c * self.f_fn(w, x),
            lip_fn=lambda w: abs(c) * self.lip_fn(w),
            tag=f"{self.tag}*{c:g}",
        )


def zero_perturbation() -> Perturbation:
    return Perturbation(f_fn=lambda w, x: np.zeros_like(x), lip_fn=lambda w: 0.0, tag="zero")


def sine_perturbation(scale: Callable) -> Perturbation:
    """``scale(omega) * (sin(x1 + x2) / 2, sin(x1) / 2)`` on the plane.

    In the max norm each component is ``scale``-Lipschitz, so ``scale`` is
    the declared constant; it is attained in the limit of small arguments.
    """

    def f(w, x):
        c = float(scale(w))
        out = np.empty_like(x)
        out[..., 0] = 0.5 * np.sin(x[..., 0] + x[..., 1])
        out[..., 1] = 0.5 * np.sin(x[..., 0])
        return c * out

    return Perturbation(f_fn=f, lip_fn=lambda w: float(scale(w)), tag="sine")


def linear_perturbation(c: float) -> Perturbation:
    """``f(x) = c x``; used for the scalar linear test equation."""
    return Perturbation(f_fn=lambda w, x: c * x, lip_fn=lambda w: abs(c), tag="linear")


def random_pairs(dim: int, n: int, radius: float, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Point pairs at mixed scales, from ``radius`` down to ``1e-6 * radius``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        x = rng.uniform(-radius, radius, dim)
        scale = radius * 10.0 ** (-6.0 * i / max(n - 1, 1))
        y = x + rng.uniform(-scale, scale, dim)
        if np.array_equal(x, y):
            y = x + scale
        pairs.append((x, y))
    return pairs


def lip_scan(p: Perturbation, omega, pairs: Sequence, norm_kind: NormKind = NormKind.MAX,
             tol: float = 1e-9) -> float:
    """Largest sampled difference quotient of ``f_omega``.

    Raises :class:`LipschitzViolation` (carrying the witness pair) when it
    exceeds the declared constant by more than the relative ``tol``.
    """
    declared = p.lip(omega)
    best, witness = 0.0, None
    for x, y in pairs:
        x, y = np.asarray(x, float), np.asarray(y, float)
        dx = vector_norm(x - y, norm_kind)
        if dx == 0:
            raise ValueError("lip_scan needs distinct point pairs")
        qt = vector_norm(p.f(omega, x) - p.f(omega, y), norm_kind) / dx
        if qt > best:
            best, witness = qt, (x.tolist(), y.tolist())
    if best > declared * (1 + tol):
        raise LipschitzViolation(
            f"sampled quotient {best:.6g} exceeds declared Lip {declared:.6g}",
            {"omega": as_point(omega).tolist(), "pair": witness, "quotient": best, "declared": declared})
    return best


def zero_residual(p: Perturbation, omegas: Sequence, dim: int) -> float:
    return max((vector_norm(p.f(w, np.zeros(dim))) for w in omegas), default=0.0)


# ---------------------------------------------------------------------------
# orbit tables


@dataclass
class OrbitTables:
    """Bounds and Lipschitz constants sampled along one forward orbit.

    Fiber ``j`` is ``theta^{j*step} omega_0``.  ``alpha_plus[j, n]`` is
    ``alpha^+_{n step, fiber_j}`` and ``alpha_minus[j, n]`` is
    ``alpha^-_{n step, theta^{n step} fiber_j}``; entries with
    ``j + n > n_fibers`` are NaN.
    """

    step: float
    discrete: bool
    fibers: list
    alpha_plus: np.ndarray
    alpha_minus: np.ndarray
    lip: np.ndarray

    @property
    def n_fibers(self) -> int:
        return self.alpha_plus.shape[0]


def orbit_tables(bounds: DichotomyBounds, p: Perturbation, omega, n_fibers: int,
                 step: float = 1.0) -> OrbitTables:
    ds = bounds.driving
    discrete = ds.time_domain is TimeDomain.DISCRETE
    if discrete and step != 1:
        raise ValueError("discrete systems use unit steps")
    fibers = [ds.evolve(j * step, omega) for j in range(n_fibers + 1)]
    ap = np.full((n_fibers, n_fibers + 1), np.nan)
    am = np.full((n_fibers, n_fibers + 1), np.nan)
    for j in range(n_fibers):
        for n in range(n_fibers + 1 - j):
            ap[j, n] = bounds.alpha_plus(n * step, fibers[j])
            am[j, n] = bounds.alpha_minus(n * step, fibers[j])
    lip = np.array([p.lip(w) for w in fibers])
    return OrbitTables(step=float(step), discrete=discrete, fibers=fibers,
                       alpha_plus=ap, alpha_minus=am, lip=lip)


def _trap_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    if n == 0:
        w[0] = 0.0
    return w


def sigma_values(tab: OrbitTables, j: int, horizon: int) -> np.ndarray:
    """Normalized sigma sums at fiber ``j`` for ``n = 1..horizon`` steps."""
    ap, lip = tab.alpha_plus, tab.lip
    out = np.zeros(horizon)
    for n in range(1, horizon + 1):
        if tab.discrete:
            k = np.arange(n)
            terms = ap[j + k + 1, n - k - 1] * lip[j + k] * ap[j, k]
            total = terms.sum()
        else:
            k = np.arange(n + 1)
            terms = ap[j + k, n - k] * lip[j + k] * ap[j, k]
            total = tab.step * np.dot(_trap_weights(n), terms)
        out[n - 1] = total / ap[j, n]
    return out


def tau_terms(tab: OrbitTables, j: int, count: int) -> np.ndarray:
    """Integrand/summand samples of tau at fiber ``j``.

    Discrete: ``count`` summands ``k = 0..count-1``.  Continuous: integrand
    at ``s = k step`` for ``k = 0..count`` (``count`` intervals).
    """
    ap, am, lip = tab.alpha_plus, tab.alpha_minus, tab.lip
    if tab.discrete:
        k = np.arange(count)
        return am[j, k + 1] * lip[j + k] * ap[j, k]
    k = np.arange(count + 1)
    return am[j, k] * lip[j + k] * ap[j, k]


def geometric_tail(terms: np.ndarray, hint: float | None = None) -> tuple[float | None, float | None]:
    """Tail bound ``last * r / (1 - r)`` from the final quarter of ``terms``.

    Returns ``(tail, ratio)``; ``(None, None)`` when no decay is detected.
    All-zero final quarters give a zero tail.
    """
    if len(terms) < 4:
        return None, None
    quarter = terms[-max(len(terms) // 4, 2):]
    if np.all(quarter == 0):
        return 0.0, 0.0
    if np.any(quarter <= 0):
        return None, None
    r = float(np.max(quarter[1:] / quarter[:-1]))
    if hint is not None:
        r = max(r, float(hint))
    if not r < 1:
        return None, None
    return float(quarter[-1] * r / (1 - r)), r


@dataclass
class SigmaTau:
    sigma: float | None = None
    tau: float | None = None
    sigma_horizon: float | None = None
    tau_truncation: float | None = None
    tau_tail_bound: float | None = None
    tail_ratio: float | None = None
    notes: list = field(default_factory=list)

    @property
    def tau_total(self) -> float | None:
        if self.tau is None or self.tau_tail_bound is None:
            return None
        return self.tau + self.tau_tail_bound

    @property
    def admissible(self) -> bool:
        if self.sigma is None or self.tau_total is None:
            return False
        return self.sigma + self.tau_total < 0.5

    def merged(self, other: "SigmaTau") -> "SigmaTau":
        out = SigmaTau(**self.__dict__)
        for k, v in other.__dict__.items():
            if k == "notes":
                out.notes = list(self.notes) + list(v)
            elif v is not None:
                setattr(out, k, v)
        return out

    def to_dict(self) -> dict:
        return {**self.__dict__, "tau_total": self.tau_total, "admissible": self.admissible}


def _steps(ds: DrivingSystem, horizon, step) -> tuple[int, float]:
    if ds.time_domain is TimeDomain.DISCRETE:
        return int(round(float(horizon))), 1.0
    if step is None or not step > 0:
        raise ValueError("continuous time needs a positive quadrature step")
    return int(round(float(horizon) / step)), float(step)


def compute_sigma(bounds: DichotomyBounds, p: Perturbation, omega, horizon, quadrature: float | None = None) -> SigmaTau:
    """sup over ``t <= horizon`` of the normalized sigma sum/integral at ``omega``.

    Continuous integrals use the composite trapezoid rule with step
    ``quadrature``; the sup is taken over the same grid.
    """
    n, step = _steps(bounds.driving, horizon, quadrature)
    if n < 1:
        raise ValueError("horizon must cover at least one step")
    tab = orbit_tables(bounds, p, omega, n + 1, step)
    vals = sigma_values(tab, 0, n)
    return SigmaTau(sigma=float(vals.max()), sigma_horizon=n * step,
                    notes=[f"sigma: sup restricted to t <= {n * step:g}"])


def compute_tau(bounds: DichotomyBounds, p: Perturbation, omega, truncation,
                tail_rate_hint: float | None = None, quadrature: float | None = None) -> SigmaTau:
    """Truncated tau sum/integral at ``omega`` plus a geometric tail bound.

    The tail is reported as unavailable (``None``) when the final quarter of
    the terms shows no geometric decay; the result is then inadmissible.
    """
    n, step = _steps(bounds.driving, truncation, quadrature)
    if n < 1:
        raise ValueError("truncation must be positive")
    tab = orbit_tables(bounds, p, omega, n + 1, step)
    terms = tau_terms(tab, 0, n)
    if tab.discrete:
        tau = float(terms.sum())
        tail, r = geometric_tail(terms, tail_rate_hint)
    else:
        tau = float(step * np.dot(_trap_weights(n), terms))
        tail, r = geometric_tail(terms, tail_rate_hint)
        if tail is not None:
            # integral of a geometric profile past the last node: last * step / (1 - r)
            tail = float(terms[-1] * step / (1 - r)) if r > 0 else 0.0
    notes = [] if tail is not None else ["tau: no geometric decay detected, tail bound unavailable"]
    return SigmaTau(tau=tau, tau_truncation=n * step, tau_tail_bound=tail, tail_ratio=r, notes=notes)


def sigma_tau(bounds: DichotomyBounds, p: Perturbation, omega, horizon, quadrature: float | None = None,
              tail_rate_hint: float | None = None) -> SigmaTau:
    return compute_sigma(bounds, p, omega, horizon, quadrature).merged(
        compute_tau(bounds, p, omega, horizon, tail_rate_hint, quadrature))


# ---------------------------------------------------------------------------
# temperedness


@dataclass
class TemperednessReport:
    lambda_: float
    gamma: float
    horizon: float
    argmax_t: float
    stabilized: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def temperedness_lambda(K: Callable, gamma: float, omega, horizon, driving: DrivingSystem,
                        step: float | None = None) -> TemperednessReport:
    """Sampled ``max_{|t| <= horizon} exp(-gamma |t|) K(theta^t omega)``.

    ``stabilized`` is False when the maximum over the full window exceeds
    the maximum over the half window, i.e. the sup is still growing.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if driving.time_domain is TimeDomain.DISCRETE:
        h = int(round(float(horizon)))
        ts = np.arange(-h, h + 1, dtype=float)
    else:
        step = step or float(horizon) / 1000.0
        m = int(round(float(horizon) / step))
        ts = np.arange(-m, m + 1) * step
    vals = np.array([math.exp(-gamma * abs(t)) * float(K(driving.evolve(t, omega))) for t in ts])
    i = int(np.argmax(vals))
    half = np.abs(ts) <= float(horizon) / 2
    full_max = float(vals[i])
    stabilized = bool(vals[half].max() >= full_max * (1 - 1e-12))
    return TemperednessReport(lambda_=full_max, gamma=float(gamma), horizon=float(horizon),
                              argmax_t=float(ts[i]), stabilized=stabilized)
