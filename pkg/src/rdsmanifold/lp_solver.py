"""Lyapunov-Perron fixed point on a sampled forward orbit.

The unknowns are tabulated on fibers ``j = 0..last`` of the orbit of an
anchor ``omega_0`` (``last = k_max + horizon``) and on a symmetric tensor
grid of E-coordinates.  Fibers ``j <= k_max`` are the certified ones; the
others are a buffer that lets sums started at fiber ``k_max`` run for
``horizon`` steps.

The series defining ``L`` at fiber ``j`` stops at ``k = last - j``, which
is the exact operator of the system whose perturbation vanishes past the
last fiber.  The discretized ``(J, L)`` is therefore a contraction for the
sigma and tau of the same truncated sums, and the discarded tail of the
true tau series is reported separately.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cocycle import CocycleError, DichotomyBounds, NormKind, SplitCocycle
from .driving import TimeDomain, as_point
from .perturbation import (OrbitTables, Perturbation, _trap_weights, geometric_tail, orbit_tables,
                           sigma_values, tau_terms)

IDENTITY_TOL = 1e-12


class InadmissibleError(ValueError):
    """``sigma + tau`` (plus tail) is not below one half."""


class ContractionViolation(RuntimeError):
    """A measured step ratio exceeded the certified contraction factor."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


# ---------------------------------------------------------------------------
# M and N


@dataclass(frozen=True)
class MNConstants:
    sigma: float
    tau: float
    M: float
    N: float
    residual_sigma: float
    residual_tau: float

    @property
    def C(self) -> float:
        return self.M * (1.0 + self.N)

    @property
    def q(self) -> float:
        return (self.sigma + self.tau) * max(1.0 + self.N, self.M)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "tau": self.tau, "M": self.M, "N": self.N, "C": self.C, "q": self.q,
                "residual_sigma": self.residual_sigma, "residual_tau": self.residual_tau}


def solve_MN(sigma: float, tau: float) -> MNConstants:
    """``M``, ``N`` with ``sigma = (M-1)/(M(1+N))`` and ``tau = N/(M(1+N))``.

    Eliminating ``N`` gives ``tau M^2 - (1 + tau - sigma) M + 1 = 0``.  With
    ``M = 1 + d`` this is ``tau d^2 - c d + sigma = 0``, ``c = 1 - sigma - tau``,
    whose smaller root is taken in the cancellation-free form, so ``M >= 1``
    holds in floating point too.  ``tau == 0`` is the linear case
    ``M = 1/(1 - sigma)``, ``N = 0``.
    """
    sigma, tau = float(sigma), float(tau)
    if not (math.isfinite(sigma) and math.isfinite(tau)) or sigma < 0 or tau < 0:
        raise InadmissibleError(f"sigma and tau must be finite and nonnegative, got {sigma}, {tau}")
    if not sigma + tau < 0.5:
        raise InadmissibleError(f"sigma + tau = {sigma + tau!r} is not below 1/2 (sigma={sigma!r}, tau={tau!r})")
    if tau == 0.0:
        M, N = 1.0 / (1.0 - sigma), 0.0
    else:
        c = 1.0 - sigma - tau
        # c^2 > 1/4 >= 4 sigma tau, so the root never cancels
        M = 1.0 + 2.0 * sigma / (c + math.sqrt(c * c - 4.0 * sigma * tau))
        N = tau * M / (1.0 - tau * M)
    rs = abs(sigma - (M - 1.0) / (M * (1.0 + N)))
    rt = abs(tau - N / (M * (1.0 + N)))
    if rs > IDENTITY_TOL or rt > IDENTITY_TOL:
        raise ArithmeticError(f"M, N identities fail: residuals {rs:.3e}, {rt:.3e}")
    return MNConstants(sigma=sigma, tau=tau, M=M, N=N, residual_sigma=rs, residual_tau=rt)


# ---------------------------------------------------------------------------
# grids and tables


def vnorms(x: np.ndarray, kind: NormKind) -> np.ndarray:
    """Norms along the last axis."""
    if kind is NormKind.MAX:
        return np.abs(x).max(axis=-1) if x.shape[-1] else np.zeros(x.shape[:-1])
    return np.linalg.norm(x, axis=-1)


@dataclass(frozen=True)
class XiGrid:
    """Tensor grid ``[-extent, extent]^dim`` with an odd number of points per axis."""

    extent: float
    points: int
    dim: int

    def __post_init__(self):
        if not self.extent > 0:
            raise ValueError("xi extent must be positive")
        if self.points < 3 or self.points % 2 == 0:
            raise ValueError("xi grids need an odd number (>= 3) of points so that 0 is a node")
        if self.dim < 1:
            raise ValueError("the E fibers are trivial; nothing to tabulate")

    @property
    def axis(self) -> np.ndarray:
        a = np.linspace(-self.extent, self.extent, self.points)
        a[self.points // 2] = 0.0
        return a

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.points - 1)

    @property
    def size(self) -> int:
        return self.points ** self.dim

    @property
    def center(self) -> int:
        return (self.size - 1) // 2

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interpolate(self, values: np.ndarray, coords: np.ndarray) -> tuple[np.ndarray, int]:
        """Multilinear interpolation of node ``values`` (G, d) at ``coords`` (Q, m).

        Queries outside the box are clamped to it; the number of clamped
        queries is returned alongside.
        """
        axis, n, m = self.axis, self.points, self.dim
        coords = np.asarray(coords, dtype=float).reshape(-1, m)
        outside = np.any(np.abs(coords) > self.extent * (1 + 1e-12), axis=1)
        c = np.clip(coords, -self.extent, self.extent)
        idx = np.clip(np.searchsorted(axis, c, side="right") - 1, 0, n - 2)
        t = np.clip((c - axis[idx]) / (axis[idx + 1] - axis[idx]), 0.0, 1.0)
        out = np.zeros((coords.shape[0], values.shape[-1]))
        strides = n ** np.arange(m - 1, -1, -1)
        for corner in range(2 ** m):
            bits = (corner >> np.arange(m - 1, -1, -1)) & 1
            w = np.prod(np.where(bits, t, 1.0 - t), axis=1)
            flat = ((idx + bits) * strides).sum(axis=1)
            out += w[:, None] * values[flat]
        return out, int(outside.sum())


@dataclass
class GraphFunction:
    """Tabulated ``phi_omega(xi)`` on each fiber, stored as ambient vectors."""

    fibers: list
    grid: XiGrid
    E_bases: np.ndarray
    F_bases: np.ndarray
    values: np.ndarray
    N: float
    norm_kind: NormKind = NormKind.MAX

    @property
    def n_fibers(self) -> int:
        return self.values.shape[0]

    def xi_ambient(self, j: int) -> np.ndarray:
        return self.grid.nodes() @ self.E_bases[j].T

    def at_coords(self, j: int, coords) -> tuple[np.ndarray, int]:
        return self.grid.interpolate(self.values[j], coords)

    def __call__(self, j: int, x) -> np.ndarray:
        """``phi`` at fiber ``j`` for ambient points ``x`` (projected to E coordinates)."""
        x = np.asarray(x, dtype=float)
        vals, _ = self.at_coords(j, x.reshape(-1, x.shape[-1]) @ self.E_bases[j])
        return vals.reshape(x.shape[:-1] + (vals.shape[-1],))

    def with_values(self, values: np.ndarray) -> "GraphFunction":
        return GraphFunction(self.fibers, self.grid, self.E_bases, self.F_bases, values, self.N, self.norm_kind)

    def rows(self, fibers: Sequence[int] | None = None):
        nodes = self.grid.nodes()
        for j in range(self.n_fibers) if fibers is None else fibers:
            eta = self.values[j] @ self.F_bases[j] + 0.0
            for xi, ph in zip(nodes, eta):
                yield [j, *xi.tolist(), *ph.tolist()]

    def to_csv(self, fibers: Sequence[int] | None = None) -> str:
        """CSV with ``fiber_index``, E-coordinates of xi, F-coordinates of phi."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m, r = self.grid.dim, self.F_bases.shape[-1]
        w.writerow(["fiber_index"] + [f"xi_{i + 1}" for i in range(m)] + [f"phi_{i + 1}" for i in range(r)])
        for row in self.rows(fibers):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


@dataclass
class TrajectoryFamily:
    """Tabulated ``h_{n, fiber_j}(xi)``; ``values[j, n]`` is valid for ``n <= last - j``."""

    fibers: list
    grid: XiGrid
    values: np.ndarray
    alpha_plus: np.ndarray
    M: float
    norm_kind: NormKind = NormKind.MAX

    @property
    def last(self) -> int:
        return self.values.shape[0] - 1

    def valid(self) -> np.ndarray:
        f = self.values.shape[0]
        j, n = np.indices((f, f))
        return j + n <= self.last


def _xi_norms(grid_xi: np.ndarray, kind: NormKind) -> np.ndarray:
    nx = vnorms(grid_xi, kind)
    return np.where(nx > 0, nx, np.inf)


def metric_d1(h: TrajectoryFamily, g: TrajectoryFamily, xi: np.ndarray | None = None,
              alpha_plus: np.ndarray | None = None) -> float:
    """sup of ``|h - g| / (alpha^+ |xi|)`` over valid (fiber, time, xi != 0).

    ``xi`` is the ambient grid per fiber, shape (F, G, d); it defaults to
    ``h.values[:, 0]`` since ``h_0 = xi``.
    """
    if h.values.shape != g.values.shape or not np.array_equal(h.grid.axis, g.grid.axis):
        raise ValueError("trajectory tables are on different grids")
    ap = h.alpha_plus if alpha_plus is None else alpha_plus
    xi = h.values[:, 0] if xi is None else xi
    nx = _xi_norms(xi, h.norm_kind)
    diff = vnorms(np.nan_to_num(h.values - g.values), h.norm_kind)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = diff / (ap[:, :, None] * nx[:, None, :])
    q = np.where(h.valid()[:, :, None] & (diff > 0), q, 0.0)
    return float(q.max(initial=0.0))


def metric_d2(phi: GraphFunction, psi: GraphFunction) -> float:
    """sup of ``|phi - psi| / |xi|`` over fibers and xi != 0."""
    if phi.values.shape != psi.values.shape or not np.array_equal(phi.grid.axis, psi.grid.axis):
        raise ValueError("graph tables are on different grids")
    xi = np.stack([phi.xi_ambient(j) for j in range(phi.n_fibers)])
    nx = _xi_norms(xi, phi.norm_kind)
    return float((vnorms(phi.values - psi.values, phi.norm_kind) / nx).max(initial=0.0))


# ---------------------------------------------------------------------------
# the discretized problem


@dataclass
class LPProblem:
    """Everything ``J`` and ``L`` need, precomputed along the orbit."""

    cocycle: SplitCocycle
    bounds: DichotomyBounds
    perturbation: Perturbation
    anchor: np.ndarray
    grid: XiGrid
    k_max: int
    horizon: int
    step: float
    discrete: bool
    fibers: list
    A: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    E_bases: np.ndarray
    F_bases: np.ndarray
    xi: np.ndarray
    G: list
    L_weights: list
    tables: OrbitTables
    threads: int = 1

    @property
    def last(self) -> int:
        return self.k_max + self.horizon

    @property
    def n_fibers(self) -> int:
        return self.last + 1

    @property
    def alpha_plus(self) -> np.ndarray:
        f = self.n_fibers
        return self.tables.alpha_plus[:f, :f]

    @property
    def norm_kind(self) -> NormKind:
        return self.cocycle.norm_kind

    def empty_graph(self, N: float = 0.0) -> GraphFunction:
        d = self.cocycle.fiber_dim
        return GraphFunction(self.fibers[:self.n_fibers], self.grid, self.E_bases, self.F_bases,
                             np.zeros((self.n_fibers, self.grid.size, d)), N, self.norm_kind)

    def trajectory(self, values: np.ndarray, M: float = 1.0) -> TrajectoryFamily:
        return TrajectoryFamily(self.fibers[:self.n_fibers], self.grid, values, self.alpha_plus, M, self.norm_kind)


def build_problem(cocycle: SplitCocycle, bounds: DichotomyBounds, perturbation: Perturbation, anchor,
                  xi_extent: float, xi_points: int, k_max: int, horizon: int, time_step: float | None = None,
                  threads: int = 1) -> LPProblem:
    """Tabulate the cocycle, projections, bases and inverse maps on the orbit."""
    ds = cocycle.driving
    if bounds.driving is not ds:
        raise ValueError("bounds and cocycle must share the driving system")
    discrete = ds.time_domain is TimeDomain.DISCRETE
    if discrete:
        step = 1.0
    else:
        if time_step is None or not time_step > 0:
            raise ValueError("continuous time needs a positive time_step")
        step = float(time_step)
    k_max, horizon = int(k_max), int(horizon)
    if k_max < 0 or horizon < 1:
        raise ValueError("need k_max >= 0 and horizon >= 1")
    last = k_max + horizon
    anchor = as_point(anchor, ds.dim)
    fibers = [ds.evolve(j * step, anchor) for j in range(last + 2)]
    d = cocycle.fiber_dim
    E = [cocycle.E_basis(w) for w in fibers[:last + 1]]
    Fb = [cocycle.F_basis(w) for w in fibers[:last + 1]]
    dims = {e.shape[1] for e in E}
    if len(dims) != 1:
        raise CocycleError(f"dimension of E varies along the orbit: {sorted(dims)}")
    m = dims.pop()
    grid = XiGrid(float(xi_extent), int(xi_points), m)
    E_bases, F_bases = np.stack(E), np.stack(Fb)
    xi = np.einsum("jdm,gm->jgd", E_bases, grid.nodes())
    A = np.stack([cocycle.phi(step, w) for w in fibers[:last + 1]])
    P = np.stack([cocycle.P(w) for w in fibers])
    Q = np.eye(d)[None] - P
    G, W = [], []
    for j in range(last + 1):
        count = last - j + 1
        if discrete:
            G.append(np.stack([cocycle.fiber_inverse_matrix(k + 1, fibers[j]) for k in range(count)]))
            W.append(np.ones(count))
        else:
            G.append(np.stack([cocycle.fiber_inverse_matrix(k * step, fibers[j]) for k in range(count)]))
            W.append(step * _trap_weights(count - 1))
    tables = orbit_tables(bounds, perturbation, anchor, last + 1, step)
    return LPProblem(cocycle=cocycle, bounds=bounds, perturbation=perturbation, anchor=anchor, grid=grid,
                     k_max=k_max, horizon=horizon, step=step, discrete=discrete, fibers=fibers, A=A, P=P, Q=Q,
                     E_bases=E_bases, F_bases=F_bases, xi=xi, G=G, L_weights=W, tables=tables,
                     threads=int(threads))


def _forcing(pb: LPProblem, H: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, int]:
    """``F[j, k] = f_{fiber j+k}(h_{k,j} + phi_{j+k}(h_{k,j}))``, one call per fiber."""
    out = np.zeros_like(H)
    clamps = 0
    d = H.shape[-1]
    for m in range(pb.n_fibers):
        js = np.arange(m + 1)
        pts = H[js, m - js]
        coords = pts.reshape(-1, d) @ pb.E_bases[m]
        vals, c = pb.grid.interpolate(phi[m], coords)
        clamps += c
        out[js, m - js] = pb.perturbation.f(pb.fibers[m], pts + vals.reshape(pts.shape))
    return out, clamps


def _apply(mats: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("jab,jgb->jga", mats, x)


def _propagate(pb: LPProblem, x0: np.ndarray, Fk: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """Variation-of-constants along every fiber's orbit, projected by ``proj``.

    Discrete: ``y_{n+1} = Phi^1 y_n + proj_{n+1} F_n``.  Continuous: the
    trapezoid rule on the time grid, carried as running sums.
    """
    f = pb.n_fibers
    Y = np.full((f, f) + x0.shape[1:], np.nan)
    Y[:, 0] = x0
    if pb.discrete:
        for n in range(pb.last):
            js = np.arange(pb.last - n)
            Y[js, n + 1] = _apply(pb.A[js + n], Y[js, n]) + _apply(proj[js + n + 1], Fk[js, n])
        return Y
    V = x0.copy()
    S = _apply(proj[:f], Fk[:, 0])
    U = S.copy()
    for n in range(pb.last):
        cnt = pb.last - n
        js = np.arange(cnt)
        a = pb.A[js + n]
        pf = _apply(proj[js + n + 1], Fk[js, n + 1])
        V = _apply(a, V[:cnt])
        S = _apply(a, S[:cnt]) + pf
        U = _apply(a, U[:cnt])
        Y[js, n + 1] = V + pb.step * (S - 0.5 * U - 0.5 * pf)
    return Y


def _graph_from_forcing(pb: LPProblem, Fk: np.ndarray) -> np.ndarray:
    out = np.zeros((pb.n_fibers,) + Fk.shape[2:])
    for j in range(pb.n_fibers):
        k = np.arange(pb.last - j + 1)
        out[j] = 0.0 - np.einsum("k,kab,kgb->ga", pb.L_weights[j], pb.G[j], Fk[j, k])
    out[:, pb.grid.center] = 0.0
    return out


def initial_state(pb: LPProblem) -> tuple[np.ndarray, np.ndarray]:
    """``h^0_n = Phi^n xi`` and ``phi^0 = 0``."""
    zero = np.zeros((pb.n_fibers, pb.n_fibers) + pb.xi.shape[1:])
    return _propagate(pb, pb.xi, zero, pb.P), np.zeros_like(pb.xi)


def apply_J(pb: LPProblem, h: TrajectoryFamily, phi: GraphFunction) -> TrajectoryFamily:
    Fk, _ = _forcing(pb, h.values, phi.values)
    return pb.trajectory(_propagate(pb, pb.xi, Fk, pb.P), h.M)


def apply_L(pb: LPProblem, h: TrajectoryFamily, phi: GraphFunction) -> GraphFunction:
    Fk, _ = _forcing(pb, h.values, phi.values)
    return phi.with_values(_graph_from_forcing(pb, Fk))


# ---------------------------------------------------------------------------
# sigma, tau of the discretized operator


@dataclass
class OperatorConstants:
    sigma: float
    tau: float
    tail: float | None
    tail_ratio: float | None
    notes: list

    @property
    def admissible(self) -> bool:
        return self.tail is not None and self.sigma + self.tau + self.tail < 0.5


def operator_constants(pb: LPProblem, tail_rate_hint: float | None = None) -> OperatorConstants:
    """sigma and tau of the truncated operator, plus the discarded tau tail.

    sigma and tau are maxima over all fibers; the tail is the largest
    geometric tail estimate among the certified fibers ``j <= k_max``.
    """
    tab, last = pb.tables, pb.last
    sig = max(float(sigma_values(tab, j, last - j).max()) for j in range(last))
    taus, tail, ratio = [], 0.0, 0.0
    for j in range(last + 1):
        if pb.discrete:
            terms = tau_terms(tab, j, last - j + 1)
            taus.append(float(terms.sum()))
        else:
            terms = tau_terms(tab, j, last - j)
            taus.append(float(pb.step * np.dot(_trap_weights(last - j), terms)))
        if j <= pb.k_max:
            t, r = geometric_tail(terms, tail_rate_hint)
            if t is None:
                return OperatorConstants(sig, max(taus), None, None,
                                         [f"no geometric decay of the tau terms at fiber {j}"])
            if not pb.discrete:
                t = float(terms[-1] * pb.step / (1 - r)) if r > 0 else 0.0
            tail, ratio = max(tail, t), max(ratio, r)
    notes = ["sigma, tau and metrics are restricted to the sampled orbit",
             f"tau truncated at the last fiber; tail bound from a geometric fit over the final quarter"]
    return OperatorConstants(sig, max(taus), tail, ratio, notes)


# ---------------------------------------------------------------------------
# iteration


@dataclass
class SolveResult:
    constants: MNConstants
    sigma: float
    tau: float
    tail: float
    iterations: int
    converged: bool
    tol: float
    max_iters: int
    d_steps: list
    ratios: list
    max_ratio: float
    contraction_ok: bool
    iterate_bound: int | None
    clamp_count: int
    membership: dict
    equivalence_residual: float
    l_tail_bound: float
    grid: dict
    notes: list
    graph: GraphFunction = field(repr=False)
    trajectory: TrajectoryFamily = field(repr=False)

    @property
    def status(self) -> str:
        if not self.converged:
            return "not-converged"
        return "converged-degraded" if self.clamp_count else "converged"

    def to_dict(self) -> dict:
        c = self.constants
        return {
            "status": self.status,
            "sigma": self.sigma, "tau": self.tau, "tail": self.tail,
            "M": c.M, "N": c.N, "C": c.C, "q": c.q,
            "mn_residuals": [c.residual_sigma, c.residual_tau],
            "iterations": self.iterations, "converged": self.converged, "tol": self.tol,
            "max_iters": self.max_iters, "iterate_bound": self.iterate_bound,
            "d_steps": self.d_steps, "ratios": self.ratios, "max_ratio": self.max_ratio,
            "contraction_ok": self.contraction_ok, "clamp_count": self.clamp_count,
            "membership": self.membership, "equivalence_residual": self.equivalence_residual,
            "l_tail_bound": self.l_tail_bound, "grid": self.grid, "notes": self.notes,
        }

    def ratio_trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "d_step", "ratio", "q"])
        for i, dstep in enumerate(self.d_steps, start=1):
            r = self.ratios[i - 2] if i >= 2 else ""
            w.writerow([i, repr(float(dstep)), repr(float(r)) if r != "" else "", repr(self.constants.q)])
        return buf.getvalue()


def banach_bound(q: float, d_first: float, tol: float) -> int | None:
    """A-priori iterate count ``ceil(log(tol (1-q) / d_first) / log q)``."""
    if d_first <= tol:
        return 1
    if not 0 < q < 1:
        return None
    return max(1, math.ceil(math.log(tol * (1 - q) / d_first) / math.log(q)))


def _membership(pb: LPProblem, H: np.ndarray, phi: np.ndarray, mn: MNConstants) -> dict:
    kind, f = pb.norm_kind, pb.n_fibers
    n, m = pb.grid.points, pb.grid.dim
    shape_g = (n,) * m
    valid = pb.trajectory(H).valid()
    h0_exact = bool(np.array_equal(H[:, 0], pb.xi))
    h_zero = bool(np.all(np.where(valid[:, :, None], H[:, :, pb.grid.center], 0.0) == 0.0))
    phi_zero = bool(np.all(phi[:, pb.grid.center] == 0.0))
    p_phi = float(vnorms(np.einsum("jab,jgb->jga", pb.P[:f], phi), kind).max(initial=0.0))
    xi_g = pb.xi.reshape((f,) + shape_g + (-1,))
    ph_g = phi.reshape((f,) + shape_g + (-1,))
    h_g = H.reshape((f, f) + shape_g + (-1,))
    lip_phi, lip_h = 0.0, 0.0
    ap = pb.alpha_plus
    for ax in range(m):
        dxi = vnorms(np.diff(xi_g, axis=1 + ax), kind)
        lip_phi = max(lip_phi, float((vnorms(np.diff(ph_g, axis=1 + ax), kind) / dxi).max()))
        dh = vnorms(np.nan_to_num(np.diff(h_g, axis=2 + ax)), kind)
        with np.errstate(divide="ignore", invalid="ignore"):
            qh = dh / (dxi[:, None] * ap.reshape((f, f) + (1,) * m))
        mask = valid.reshape((f, f) + (1,) * m) & np.ones_like(qh, dtype=bool)
        lip_h = max(lip_h, float(np.where(mask & np.isfinite(qh), qh, 0.0).max()))
    return {"h0_is_xi": h0_exact, "h_at_zero_is_zero": h_zero, "phi_at_zero_is_zero": phi_zero,
            "max_P_phi": p_phi, "phi_lip": lip_phi, "phi_lip_bound": mn.N,
            "h_lip_over_alpha": lip_h, "h_lip_bound": mn.M}


def _equivalence_residual(pb: LPProblem, H: np.ndarray, phi: np.ndarray, Fk: np.ndarray) -> float:
    """F-part identity ``phi_{j+n}(h_n) = Phi^n phi_j + sum Phi Q F`` on certified fibers."""
    Y = _propagate(pb, phi, Fk, pb.Q)
    worst = 0.0
    d = H.shape[-1]
    nx = _xi_norms(pb.xi, pb.norm_kind)
    for j in range(pb.k_max + 1):
        for n in range(pb.horizon + 1):
            vals, _ = pb.grid.interpolate(phi[j + n], H[j, n] @ pb.E_bases[j + n])
            r = vnorms(vals.reshape(-1, d) - Y[j, n], pb.norm_kind) / nx[j]
            worst = max(worst, float(r.max()))
    return worst


def iterate_T(pb: LPProblem, tol: float = 1e-8, max_iters: int = 200, tail_rate_hint: float | None = None,
              initial: tuple[np.ndarray, np.ndarray] | None = None, strict: bool = True) -> SolveResult:
    """Iterate ``(h, phi) -> (J(h, phi), L(h, phi))`` until the step is below ``tol``.

    Raises :class:`InadmissibleError` when ``sigma + tau + tail >= 1/2`` or
    no tail bound is available, and :class:`ContractionViolation` (with the
    partial result attached) when a measured ratio exceeds ``q (1 + tol)``
    and ``strict`` is set.
    """
    if not tol > 0 or max_iters < 1:
        raise ValueError("need tol > 0 and max_iters >= 1")
    oc = operator_constants(pb, tail_rate_hint)
    if oc.tail is None:
        raise InadmissibleError("tau tail bound unavailable: " + "; ".join(oc.notes))
    if not oc.admissible:
        raise InadmissibleError(
            f"sigma + tau + tail = {oc.sigma + oc.tau + oc.tail!r} is not below 1/2 "
            f"(sigma={oc.sigma!r}, tau={oc.tau!r}, tail={oc.tail!r})")
    mn = solve_MN(oc.sigma, oc.tau + oc.tail)
    q = mn.q
    H, phi = initial_state(pb) if initial is None else initial
    traj = pb.trajectory(H, mn.M)
    d_steps, ratios = [], []
    converged, clamps, worst_excess = False, 0, 0.0
    Fk = None
    xi_all = pb.xi
    for _ in range(max_iters):
        Fk, clamps = _forcing(pb, H, phi)
        H2 = _propagate(pb, pb.xi, Fk, pb.P)
        phi2 = _graph_from_forcing(pb, Fk)
        t_new = pb.trajectory(H2, mn.M)
        g_old = pb.empty_graph(mn.N).with_values(phi)
        g_new = g_old.with_values(phi2)
        d = metric_d1(t_new, traj, xi_all) + metric_d2(g_new, g_old)
        if d_steps:
            prev = d_steps[-1]
            ratios.append(d / prev if prev > 0 else 0.0)
            worst_excess = max(worst_excess, d - q * (1 + tol) * prev - 1e-13)
        d_steps.append(d)
        H, phi, traj = H2, phi2, t_new
        if d <= tol:
            converged = True
            break
    Fk, clamps = _forcing(pb, H, phi)
    graph = pb.empty_graph(mn.N).with_values(phi)
    result = SolveResult(
        constants=mn, sigma=oc.sigma, tau=oc.tau, tail=oc.tail, iterations=len(d_steps), converged=converged,
        tol=tol, max_iters=max_iters, d_steps=d_steps, ratios=ratios, max_ratio=max(ratios, default=0.0),
        contraction_ok=worst_excess <= 0, iterate_bound=banach_bound(q, d_steps[0], tol), clamp_count=clamps,
        membership=_membership(pb, H, phi, mn), equivalence_residual=_equivalence_residual(pb, H, phi, Fk),
        l_tail_bound=mn.C * oc.tail,
        grid={"xi_extent": pb.grid.extent, "xi_points": pb.grid.points, "xi_spacing": pb.grid.spacing,
              "e_dim": pb.grid.dim, "k_max": pb.k_max, "horizon": pb.horizon, "time_step": pb.step,
              "fibers": pb.n_fibers},
        notes=list(oc.notes) + ([] if clamps == 0 else [f"{clamps} interpolation queries clamped to the grid"]),
        graph=graph, trajectory=traj,
    )
    if strict and not result.contraction_ok:
        raise ContractionViolation(f"measured step ratio exceeded q = {q!r} (max ratio {result.max_ratio!r})", result)
    return result


def solve(cocycle: SplitCocycle, bounds: DichotomyBounds, perturbation: Perturbation, anchor, *,
          xi_extent: float = 1.0, xi_points: int = 41, k_max: int = 40, horizon: int = 40,
          time_step: float | None = None, tol: float = 1e-8, max_iters: int = 200,
          tail_rate_hint: float | None = None, strict: bool = True, threads: int = 1) -> tuple[LPProblem, SolveResult]:
    pb = build_problem(cocycle, bounds, perturbation, anchor, xi_extent, xi_points, k_max, horizon, time_step,
                       threads)
    return pb, iterate_T(pb, tol, max_iters, tail_rate_hint, strict=strict)
