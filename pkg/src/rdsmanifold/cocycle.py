"""Linear cocycles with an invariant splitting and generalized dichotomy bounds.

A :class:`SplitCocycle` carries the matrix cocycle ``Phi^t_omega`` over a
driving system together with the projections ``P_omega``.  The verification
routines here are sampled: every report records the grid it was run on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy import integrate

from .driving import DrivingSystem, TimeDomain, as_point


class CocycleError(ValueError):
    pass


class NormKind(enum.Enum):
    MAX = "max"
    EUCLIDEAN = "euclidean"

    @classmethod
    def parse(cls, value) -> "NormKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


def vector_norm(x, kind: NormKind = NormKind.MAX) -> float:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return 0.0
    if kind is NormKind.MAX:
        return float(np.max(np.abs(x)))
    return float(np.linalg.norm(x))


def operator_norm(m, kind: NormKind = NormKind.MAX) -> float:
    """Norm of ``m`` induced by the chosen vector norm.

    The max norm induces the maximum absolute row sum, which is exact.  The
    Euclidean norm induces the largest singular value (LAPACK SVD).
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0.0
    if kind is NormKind.MAX:
        return float(np.max(np.sum(np.abs(m), axis=1)))
    return float(np.linalg.norm(m, 2))


def _normalize_signs(basis: np.ndarray) -> np.ndarray:
    # deterministic orientation: largest-magnitude entry of each column positive
    for j in range(basis.shape[1]):
        i = int(np.argmax(np.abs(basis[:, j])))
        if basis[i, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis


def range_basis(m: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the column space of ``m`` by pivoted QR."""
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    if not np.any(m):
        return np.zeros((d, 0))
    q, r, _ = scipy.linalg.qr(m, pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rtol * max(diag[0], 1e-300)))
    return _normalize_signs(q[:, :rank].copy())


@dataclass(frozen=True, eq=False)
class SplitCocycle:
    """Matrix cocycle ``Phi^t_omega`` with projections ``P_omega``.

    ``phi_fn(t, omega)`` and ``proj_fn(omega)`` return ``d x d`` arrays.
    ``Phi^0`` is the identity by construction, whatever ``phi_fn`` says.
    """

    fiber_dim: int
    driving: DrivingSystem
    phi_fn: Callable = field(repr=False)
    proj_fn: Callable = field(repr=False)
    norm_kind: NormKind = NormKind.MAX
    name: str = "custom"

    def phi(self, t, omega) -> np.ndarray:
        t = self.driving.check_time(t)
        if t < 0:
            raise CocycleError("the linear cocycle only moves forward in time; use fiber_inverse")
        if t == 0:
            return np.eye(self.fiber_dim)
        m = np.asarray(self.phi_fn(t, as_point(omega, self.driving.dim)), dtype=float)
        if m.shape != (self.fiber_dim, self.fiber_dim):
            raise CocycleError(f"phi returned shape {m.shape}")
        return m

    def P(self, omega) -> np.ndarray:
        m = np.asarray(self.proj_fn(as_point(omega, self.driving.dim)), dtype=float)
        if m.shape != (self.fiber_dim, self.fiber_dim):
            raise CocycleError(f"projection returned shape {m.shape}")
        return m

    def Q(self, omega) -> np.ndarray:
        return np.eye(self.fiber_dim) - self.P(omega)

    def E_basis(self, omega) -> np.ndarray:
        return range_basis(self.P(omega))

    def F_basis(self, omega) -> np.ndarray:
        return range_basis(self.Q(omega))

    def norm(self, x) -> float:
        return vector_norm(x, self.norm_kind)

    def opnorm(self, m) -> float:
        return operator_norm(m, self.norm_kind)

    def restricted_kernel_map(self, t, omega) -> tuple[np.ndarray, np.ndarray]:
        """``(B_F, Phi^t B_F)``: kernel basis at omega and its image."""
        bf = self.F_basis(omega)
        return bf, self.phi(t, omega) @ bf

    def fiber_inverse_matrix(self, t, omega) -> np.ndarray:
        """Matrix of ``(Phi^t|ker P_omega)^{-1} Q_{theta^t omega}``."""
        bf, a = self.restricted_kernel_map(t, omega)
        if bf.shape[1] == 0:
            return np.zeros((self.fiber_dim, self.fiber_dim))
        target = self.Q(self.driving.evolve(t, omega))
        return bf @ np.linalg.pinv(a) @ target


@dataclass
class SplitVector:
    """Decomposition of an ambient vector along ``E_omega + F_omega``.

    ``xi`` and ``eta`` are the ambient components; ``xi_coords`` and
    ``eta_coords`` are coordinates in the orthonormal bases of E and F.
    """

    xi: np.ndarray
    eta: np.ndarray
    xi_coords: np.ndarray
    eta_coords: np.ndarray
    omega: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.xi + self.eta


def split(c: SplitCocycle, omega, x) -> SplitVector:
    x = np.asarray(x, dtype=float)
    if x.shape != (c.fiber_dim,):
        raise CocycleError(f"vector has shape {x.shape}, fiber dimension is {c.fiber_dim}")
    p = c.P(omega)
    xi = p @ x
    eta = x - xi
    return SplitVector(
        xi=xi,
        eta=eta,
        xi_coords=c.E_basis(omega).T @ xi,
        eta_coords=c.F_basis(omega).T @ eta,
        omega=as_point(omega, c.driving.dim),
    )


def evolve_linear(c: SplitCocycle, t, omega, x) -> np.ndarray:
    return c.phi(t, omega) @ np.asarray(x, dtype=float)


def fiber_inverse(c: SplitCocycle, t, omega, eta, tol: float = 1e-9, return_residual: bool = False):
    """Unique ``v`` in ``ker P_omega`` with ``Phi^t_omega v = eta``.

    Solved by least squares on the kernel basis.  Raises when ``eta`` is not
    in ``ker P_{theta^t omega}`` or when the restricted map is singular.
    """
    eta = np.asarray(eta, dtype=float)
    target = c.driving.evolve(t, omega)
    off = c.norm(c.P(target) @ eta)
    if off > tol * max(1.0, c.norm(eta)):
        raise CocycleError(f"vector is not in the kernel fiber (|P eta| = {off:.3e})")
    bf, a = c.restricted_kernel_map(t, omega)
    if bf.shape[1] == 0:
        v, res = np.zeros(c.fiber_dim), c.norm(eta)
    else:
        smin = np.linalg.svd(a, compute_uv=False).min()
        if smin <= 1e-14 * max(1.0, np.abs(a).max()):
            raise CocycleError(f"restricted map is numerically singular (smallest singular value {smin:.3e})")
        coords, *_ = np.linalg.lstsq(a, eta, rcond=None)
        v = bf @ coords
        res = c.norm(a @ coords - eta)
    return (v, res) if return_residual else v


# ---------------------------------------------------------------------------
# dichotomy bounds


class DichotomyBounds:
    """Bound functions of a generalized dichotomy.

    ``alpha_plus(t, omega)`` bounds the forward norm on E from ``omega``;
    ``alpha_minus(t, omega)`` is the backward bound on F indexed by the end
    point, i.e. the value written ``alpha^-_{t, theta^t omega}``.
    """

    family = "abstract"
    driving: DrivingSystem

    def alpha_plus(self, t, omega) -> float:
        raise NotImplementedError

    def alpha_minus(self, t, omega) -> float:
        raise NotImplementedError

    def K(self, omega) -> float:
        return 1.0

    def scaled(self, factor: float) -> "CustomBounds":
        return CustomBounds(
            driving=self.driving,
            plus=lambda t, w: factor * self.alpha_plus(t, w),
            minus=lambda t, w: factor * self.alpha_minus(t, w),
            K_fn=self.K,
            label=f"{self.family}*{factor:g}",
        )


@dataclass(frozen=True, eq=False)
class TemperedExp(DichotomyBounds):
    driving: DrivingSystem
    K_fn: Callable
    a: Callable
    b: Callable
    family = "tempered-exp"

    def K(self, omega):
        return float(self.K_fn(as_point(omega)))

    def alpha_plus(self, t, omega):
        return self.K(omega) * math.exp(float(self.a(as_point(omega))) * float(t))

    def alpha_minus(self, t, omega):
        end = self.driving.evolve(t, omega)
        return self.K(end) * math.exp(float(self.b(as_point(omega))) * float(t))


def _flow_integral(driving: DrivingSystem, z: Callable, t: float, omega) -> float:
    t = float(t)
    if t == 0:
        return 0.0
    val, _ = integrate.quad(lambda r: float(z(driving.evolve(r, omega))), 0.0, t,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


@dataclass(frozen=True, eq=False)
class IntegralExp(DichotomyBounds):
    """Exponentials of time integrals of ``a`` and ``b`` along the flow.

    ``a_integral(t, omega)`` / ``b_integral`` may supply closed forms;
    otherwise adaptive quadrature is used.
    """

    driving: DrivingSystem
    K_fn: Callable
    a: Callable
    b: Callable
    a_integral: Callable | None = None
    b_integral: Callable | None = None
    family = "integral-exp"

    def K(self, omega):
        return float(self.K_fn(as_point(omega)))

    def int_a(self, t, omega):
        if self.a_integral is not None:
            return float(self.a_integral(float(t), as_point(omega)))
        return _flow_integral(self.driving, self.a, t, omega)

    def int_b(self, t, omega):
        if self.b_integral is not None:
            return float(self.b_integral(float(t), as_point(omega)))
        return _flow_integral(self.driving, self.b, t, omega)

    def alpha_plus(self, t, omega):
        return self.K(omega) * math.exp(self.int_a(t, omega))

    def alpha_minus(self, t, omega):
        return self.K(self.driving.evolve(t, omega)) * math.exp(self.int_b(t, omega))


@dataclass(frozen=True, eq=False)
class BirkhoffExp(DichotomyBounds):
    driving: DrivingSystem
    K_fn: Callable
    a: Callable
    b: Callable
    family = "birkhoff-exp"

    def K(self, omega):
        return float(self.K_fn(as_point(omega)))

    def alpha_plus(self, t, omega):
        return self.K(omega) * math.exp(birkhoff_sum(self.a, t, omega, self.driving))

    def alpha_minus(self, t, omega):
        return self.K(self.driving.evolve(t, omega)) * math.exp(birkhoff_sum(self.b, t, omega, self.driving))


@dataclass(frozen=True, eq=False)
class RatioForm(DichotomyBounds):
    driving: DrivingSystem
    K_fn: Callable
    a: Callable
    b: Callable
    family = "ratio"

    def K(self, omega):
        return float(self.K_fn(as_point(omega)))

    def alpha_plus(self, t, omega):
        end = self.driving.evolve(t, omega)
        return self.K(omega) * float(self.a(as_point(omega))) / float(self.a(end))

    def alpha_minus(self, t, omega):
        end = self.driving.evolve(t, omega)
        return self.K(end) * float(self.b(as_point(omega))) / float(self.b(end))


@dataclass(frozen=True, eq=False)
class CustomBounds(DichotomyBounds):
    driving: DrivingSystem
    plus: Callable
    minus: Callable
    K_fn: Callable | None = None
    label: str = "custom"
    family = "custom"

    def K(self, omega):
        return 1.0 if self.K_fn is None else float(self.K_fn(as_point(omega)))

    def alpha_plus(self, t, omega):
        return float(self.plus(t, as_point(omega)))

    def alpha_minus(self, t, omega):
        return float(self.minus(t, as_point(omega)))


def birkhoff_sum(Z: Callable, n, omega, driving: DrivingSystem) -> float:
    n = float(n)
    if n < 0 or n != round(n):
        raise ValueError(f"Birkhoff sums need a nonnegative integer length, got {n}")
    return float(sum(float(Z(driving.evolve(r, omega))) for r in range(int(n))))


# ---------------------------------------------------------------------------
# constructions


def diagonal_cocycle(rates: Sequence[float], driving: DrivingSystem, stable: Sequence[bool] | None = None,
                     norm_kind: NormKind = NormKind.MAX) -> SplitCocycle:
    """Autonomous cocycle ``diag(exp(rate_i t))``; P keeps the stable axes."""
    rates = np.asarray(rates, dtype=float)
    mask = rates < 0 if stable is None else np.asarray(stable, dtype=bool)
    proj = np.diag(mask.astype(float))
    return SplitCocycle(
        fiber_dim=len(rates),
        driving=driving,
        phi_fn=lambda t, w: np.diag(np.exp(rates * t)),
        proj_fn=lambda w: proj,
        norm_kind=norm_kind,
        name="diagonal",
    )


def example2_projection(k: float) -> np.ndarray:
    return np.array([[1.0, k - 1.0], [0.0, 0.0]])


def example2_cocycle(K: Callable, phi: Callable, psi: Callable, driving: DrivingSystem,
                     check_times: Sequence | None = None, check_points: Sequence | None = None,
                     rtol: float = 1e-9, norm_kind: NormKind = NormKind.MAX) -> SplitCocycle:
    """Planar cocycle ``phi P_omega + K(omega)/K(theta^t omega) / psi Q_{theta^t omega}``.

    ``phi(t, omega)`` and ``psi(t, omega)`` must be multiplicative cocycle
    factors; the law ``f(t+s, w) = f(t, theta^s w) f(s, w)`` is spot-checked
    on ``check_times x check_points`` and a :class:`CocycleError` is raised
    on failure.
    """
    if check_times is None:
        check_times = [0, 1, 2, 3] if driving.time_domain is TimeDomain.DISCRETE else [0.0, 0.5, 1.25, 2.0]
    if check_points is None:
        check_points = [np.zeros(driving.dim)]
    for name, fac in (("phi", phi), ("psi", psi)):
        for w in check_points:
            for s in check_times:
                for t in check_times:
                    lhs = float(fac(t + s, as_point(w)))
                    rhs = float(fac(t, driving.evolve(s, w))) * float(fac(s, as_point(w)))
                    if not abs(lhs - rhs) <= rtol * max(abs(lhs), abs(rhs), 1e-300):
                        raise CocycleError(
                            f"{name} violates the cocycle factor law at t={t}, s={s}, omega={list(w)}: "
                            f"{lhs!r} != {rhs!r}")

    def phi_fn(t, w):
        end = driving.evolve(t, w)
        kw, kend = float(K(w)), float(K(end))
        q_end = np.eye(2) - example2_projection(kend)
        return float(phi(t, w)) * example2_projection(kw) + (kw / kend) / float(psi(t, w)) * q_end

    return SplitCocycle(
        fiber_dim=2,
        driving=driving,
        phi_fn=phi_fn,
        proj_fn=lambda w: example2_projection(float(K(w))),
        norm_kind=norm_kind,
        name="example2",
    )


def example2_bounds(K: Callable, phi: Callable, psi: Callable, driving: DrivingSystem) -> CustomBounds:
    """The bounds ``K(omega) phi(t, omega)`` and ``K(theta^t omega) psi(t, omega)``."""
    return CustomBounds(
        driving=driving,
        plus=lambda t, w: float(K(w)) * float(phi(t, w)),
        minus=lambda t, w: float(K(driving.evolve(t, w))) * float(psi(t, w)),
        K_fn=K,
        label="example2",
    )


def exp_factor(rate: Callable) -> Callable:
    """``exp(rate(omega) t)``; a cocycle factor when ``rate`` is invariant."""
    return lambda t, w: math.exp(float(rate(w)) * float(t))


def integral_exp_factor(a: Callable, driving: DrivingSystem, integral: Callable | None = None) -> Callable:
    if integral is not None:
        return lambda t, w: math.exp(float(integral(float(t), w)))
    return lambda t, w: math.exp(_flow_integral(driving, a, t, w))


def birkhoff_factor(a: Callable, driving: DrivingSystem) -> Callable:
    return lambda n, w: math.exp(birkhoff_sum(a, n, w, driving))


def ratio_factor(a: Callable, driving: DrivingSystem) -> Callable:
    return lambda t, w: float(a(w)) / float(a(driving.evolve(t, w)))


# ---------------------------------------------------------------------------
# verification


def _rel(x: np.ndarray, y: np.ndarray, c: SplitCocycle) -> float:
    return c.opnorm(x - y) / max(1.0, c.opnorm(x), c.opnorm(y))


@dataclass
class SplittingReport:
    passed: bool
    tol: float
    residuals: dict
    invertibility_margin: float
    worst: dict
    failed: list
    sample_times: list
    sample_points: list
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_splitting(c: SplitCocycle, sample_times: Sequence, sample_points: Sequence, tol: float) -> SplittingReport:
    """Sampled check of the invariant-splitting axioms.

    Residuals are relative, ``|X - Y| / max(1, |X|, |Y|)`` in the induced
    norm.  Conditions: idempotence of P, identity at t = 0, cocycle law,
    equivariance ``P Phi = Phi P``, the kernel being carried into the
    kernel, and the smallest singular value of the restricted kernel map.
    """
    if not sample_times or not sample_points:
        raise ValueError("empty sample grid")
    times = [c.driving.check_time(t) for t in sample_times]
    res = {k: 0.0 for k in ("idempotence", "identity", "cocycle_law", "equivariance", "kernel_mapping")}
    worst: dict = {}
    margin = math.inf

    def bump(name, value, where):
        if name not in worst or value > res[name]:
            res[name] = max(res[name], value)
            worst[name] = {**where, "residual": value}

    for w in sample_points:
        w = as_point(w, c.driving.dim)
        p = c.P(w)
        bump("idempotence", _rel(p @ p, p, c), {"omega": w.tolist()})
        bump("identity", c.opnorm(c.phi(0, w) - np.eye(c.fiber_dim)), {"omega": w.tolist()})
        bf = c.F_basis(w)
        for t in times:
            if t < 0:
                continue
            end = c.driving.evolve(t, w)
            m = c.phi(t, w)
            p_end = c.P(end)
            bump("equivariance", _rel(p_end @ m, m @ p, c), {"t": t, "omega": w.tolist()})
            if bf.shape[1]:
                img = m @ bf
                bump("kernel_mapping", c.opnorm(p_end @ img) / max(1.0, c.opnorm(img)),
                     {"t": t, "omega": w.tolist()})
                rank_end = c.F_basis(end).shape[1]
                sv = np.linalg.svd(img, compute_uv=False).min() if rank_end == bf.shape[1] else 0.0
                if sv < margin:
                    margin = float(sv)
                    worst["invertibility"] = {"t": t, "omega": w.tolist(), "margin": margin}
            for s in times:
                if s < 0:
                    continue
                lhs = c.phi(t + s, w)
                rhs = c.phi(t, c.driving.evolve(s, w)) @ c.phi(s, w)
                bump("cocycle_law", _rel(lhs, rhs, c), {"t": t, "s": s, "omega": w.tolist()})

    failed = [k for k, v in res.items() if not v <= tol]
    if not margin > tol:
        failed.append("invertibility")
    return SplittingReport(
        passed=not failed,
        tol=tol,
        residuals=res,
        invertibility_margin=margin,
        worst={k: v for k, v in worst.items() if k in failed},
        failed=failed,
        sample_times=times,
        sample_points=[as_point(w).tolist() for w in sample_points],
        notes=["joint measurability of the inverse kernel map is not testable on samples; "
               "only pointwise evaluability was exercised"],
    )


@dataclass
class DichotomyReport:
    passed: bool
    tol: float
    worst_ratio_plus: float
    worst_ratio_minus: float
    min_slack_plus: float
    min_slack_minus: float
    worst: dict
    bound_validity: dict
    sample_times: list
    sample_points: list
    rows: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("rows")
        return d


def verify_dichotomy(c: SplitCocycle, bounds: DichotomyBounds, sample_times: Sequence,
                     sample_points: Sequence, tol: float) -> DichotomyReport:
    """Compare measured induced norms against the bound functions.

    Slack is ``(bound - measured) / bound``; the check passes when every
    measured norm is at most ``bound * (1 + tol)``.
    """
    times = [c.driving.check_time(t) for t in sample_times if t >= 0]
    ratio_p = ratio_m = 0.0
    slack_p = slack_m = math.inf
    worst: dict = {}
    validity = {"min_alpha": math.inf, "min_K": math.inf}
    rows = []
    for w in sample_points:
        w = as_point(w, c.driving.dim)
        validity["min_K"] = min(validity["min_K"], bounds.K(w))
        p = c.P(w)
        for t in times:
            mp = c.opnorm(c.phi(t, w) @ p)
            mm = c.opnorm(c.fiber_inverse_matrix(t, w))
            bp, bm = bounds.alpha_plus(t, w), bounds.alpha_minus(t, w)
            validity["min_alpha"] = min(validity["min_alpha"], bp, bm)
            rows.append((t, w.tolist(), mp, bp, mm, bm))
            rp, rm = mp / bp, mm / bm
            if rp >= ratio_p:
                ratio_p = rp
                worst["plus"] = {"t": t, "omega": w.tolist(), "measured": mp, "bound": bp}
            if rm >= ratio_m:
                ratio_m = rm
                worst["minus"] = {"t": t, "omega": w.tolist(), "measured": mm, "bound": bm}
            slack_p = min(slack_p, (bp - mp) / bp)
            slack_m = min(slack_m, (bm - mm) / bm)
    valid = validity["min_alpha"] > 0 and validity["min_K"] >= 1.0
    passed = valid and ratio_p <= 1.0 + tol and ratio_m <= 1.0 + tol
    return DichotomyReport(
        passed=passed,
        tol=tol,
        worst_ratio_plus=ratio_p,
        worst_ratio_minus=ratio_m,
        min_slack_plus=slack_p,
        min_slack_minus=slack_m,
        worst=worst,
        bound_validity={**validity, "valid": valid},
        sample_times=times,
        sample_points=[as_point(w).tolist() for w in sample_points],
        rows=rows,
    )


@dataclass
class DecayReport:
    passed: bool
    tol: float
    final_value: float
    eventually_decreasing: bool
    times: list
    products: list
    note: str = ("finite-horizon heuristic: small and decreasing over the last half of the horizon; "
                 "this is evidence for the limit, not a proof")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_decay_condition(c: SplitCocycle, bounds: DichotomyBounds, omega, horizon, tol: float,
                          n_samples: int = 41) -> DecayReport:
    """Tabulate ``alpha^+_{t,omega} alpha^-_{t,theta^t omega}`` up to ``horizon``."""
    if c.driving.time_domain is TimeDomain.DISCRETE:
        times = [float(n) for n in range(int(horizon) + 1)]
    else:
        times = list(np.linspace(0.0, float(horizon), n_samples))
    if len(times) < 20:
        raise ValueError(f"decay check needs at least 20 samples, horizon gives {len(times)}")
    prods = [bounds.alpha_plus(t, omega) * bounds.alpha_minus(t, omega) for t in times]
    tail = prods[len(prods) // 2:]
    decreasing = all(b <= a * (1 + 1e-12) for a, b in zip(tail, tail[1:])) and tail[-1] < tail[0]
    return DecayReport(
        passed=bool(prods[-1] <= tol and decreasing),
        tol=tol,
        final_value=prods[-1],
        eventually_decreasing=decreasing,
        times=times,
        products=prods,
    )
