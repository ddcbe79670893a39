"""The perturbed system Psi and checks of the manifold conclusions.

Vectors may carry leading batch axes: every evaluator accepts ``x`` of
shape ``(d,)`` or ``(B, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .cocycle import DichotomyBounds, SplitCocycle
from .driving import TimeDomain, as_point
from .lp_solver import GraphFunction, vnorms
from .perturbation import Perturbation

UNIQUENESS_NOTE = "continuous time: Psi is assumed to be the unique solution of its integral equation"


def _matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ m.T


def evaluate_psi_discrete(c: SplitCocycle, p: Perturbation, n: int, omega, x) -> np.ndarray:
    """``Psi^n_omega x`` by the recursion ``x_{k+1} = Phi^1 x_k + f(x_k)``."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    ds = c.driving
    x = np.array(x, dtype=float)
    w = as_point(omega, ds.dim)
    for _ in range(n):
        x = _matvec(c.phi(1, w), x) + p.f(w, x)
        w = ds.evolve(1, w)
    return x


def psi_sum_form(c: SplitCocycle, p: Perturbation, n: int, omega, x) -> np.ndarray:
    """``Psi^n_omega x`` from the variation-of-constants sum.

    ``Psi^k x = Phi^k x + sum_{i<k} Phi^{k-i-1}_{theta^{i+1} omega} f_{theta^i omega}(Psi^i x)``,
    with every ``Phi`` taken directly from the cocycle rather than as a
    product of one-step maps.
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    ds = c.driving
    x = np.asarray(x, dtype=float)
    pts = [ds.evolve(i, omega) for i in range(n + 1)]
    states, forcing = [x], []
    for k in range(1, n + 1):
        forcing.append(p.f(pts[k - 1], states[-1]))
        s = _matvec(c.phi(k, pts[0]), x)
        for i in range(k):
            s = s + _matvec(c.phi(k - i - 1, pts[i + 1]), forcing[i])
        states.append(s)
    return states[n]


def _grid(t: float, step: float) -> tuple[int, float]:
    if not step > 0:
        raise ValueError("step must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = max(int(math.ceil(t / step - 1e-9)), 0)
    return n, (t / n if n else 0.0)


def evaluate_psi_continuous(c: SplitCocycle, p: Perturbation, t: float, omega, x, step: float,
                            return_path: bool = False):
    """First-order stepper ``u_{j+1} = Phi^h(u_j + h f(u_j))`` on a uniform grid.

    ``h`` is ``step`` shrunk so that it divides ``t``.  Consistent with the
    integral equation to first order in ``h``.
    """
    t = float(t)
    n, h = _grid(t, step)
    ds = c.driving
    u = np.array(x, dtype=float)
    path = [u]
    for j in range(n):
        w = ds.evolve(j * h, omega)
        u = _matvec(c.phi(h, w), u + h * p.f(w, u))
        path.append(u)
    return (u, path) if return_path else u


def integral_defect(c: SplitCocycle, p: Perturbation, t: float, omega, x, step: float) -> float:
    """Norm of ``u(t) - Phi^t x - int_0^t Phi^{t-s} f(u(s)) ds`` for the stepper.

    The integral is the composite trapezoid rule on the stepper's own grid.
    """
    n, h = _grid(float(t), step)
    u, path = evaluate_psi_continuous(c, p, t, omega, x, step, return_path=True)
    if n == 0:
        return float(c.norm(u - np.asarray(x, float)))
    ds = c.driving
    w = np.full(n + 1, 1.0)
    w[0] = w[-1] = 0.5
    integral = np.zeros_like(u)
    for k in range(n + 1):
        wk = ds.evolve(k * h, omega)
        integral = integral + w[k] * _matvec(c.phi((n - k) * h, wk), p.f(wk, path[k]))
    defect = u - _matvec(c.phi(n * h, omega), np.asarray(x, float)) - h * integral
    return float(np.max(vnorms(np.atleast_2d(defect), c.norm_kind)))


def psi_evaluator(c: SplitCocycle, p: Perturbation, step: float | None = None) -> Callable:
    """``psi(t, omega, x)`` for either time domain."""
    if c.driving.time_domain is TimeDomain.DISCRETE:
        return lambda t, w, x: evaluate_psi_discrete(c, p, int(round(t)), w, x)
    if step is None:
        raise ValueError("continuous Psi needs a step")
    return lambda t, w, x: evaluate_psi_continuous(c, p, t, w, x, step)


# ---------------------------------------------------------------------------
# invariance


@dataclass
class InvarianceBudget:
    solver_tol: float
    l_tail: float
    grid_allowance: float
    stepper_allowance: float = 0.0

    @property
    def total(self) -> float:
        return self.solver_tol + self.l_tail + self.grid_allowance + self.stepper_allowance

    def to_dict(self) -> dict:
        return {**self.__dict__, "total": self.total}


@dataclass
class InvarianceReport:
    passed: bool
    max_residual: float
    budget: InvarianceBudget
    witness: dict | None
    n_samples: int
    clamp_count: int
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_residual": self.max_residual, "budget": self.budget.to_dict(),
                "witness": self.witness, "n_samples": self.n_samples, "clamp_count": self.clamp_count,
                "notes": self.notes}


def _lift(graph: GraphFunction, j: int, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi = coords @ graph.E_bases[j].T
    vals, _ = graph.at_coords(j, coords)
    return xi, xi + vals


def check_invariance(psi: Callable, graph: GraphFunction, c: SplitCocycle, samples: Iterable,
                     budget: InvarianceBudget, step: float = 1.0) -> InvarianceReport:
    """Evolve graph points by ``Psi`` and compare with the graph downstream.

    ``samples`` yields ``(j, n, coords)``: fiber index, number of solver
    time steps (time ``n * step``) and E-coordinates of shape ``(B, m)``.
    The residual is ``|Q Psi(x) - phi_{j+n}(P Psi(x))| / |xi|``.
    """
    worst, witness, count, clamps = 0.0, None, 0, 0
    last = graph.n_fibers - 1
    for j, n, coords in samples:
        j, n = int(j), int(n)
        if j < 0 or n < 0 or j + n > last:
            raise ValueError(f"sample (fiber {j}, {n} steps) is beyond the tabulated fibers 0..{last}")
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        xi, x0 = _lift(graph, j, coords)
        y = np.atleast_2d(psi(n * step, graph.fibers[j], x0))
        k = j + n
        e_part = _matvec(c.P(graph.fibers[k]), y)
        pred, cl = graph.at_coords(k, e_part @ graph.E_bases[k])
        clamps += cl
        nx = vnorms(xi, c.norm_kind)
        res = np.where(nx > 0, vnorms(y - e_part - pred, c.norm_kind) / np.where(nx > 0, nx, 1.0), 0.0)
        count += len(res)
        i = int(np.argmax(res))
        if res[i] > worst or witness is None:
            worst = max(worst, float(res[i]))
            witness = {"fiber": j, "steps": n, "xi": coords[i].tolist(), "residual": float(res[i])}
    passed = worst <= budget.total
    notes = [] if c.driving.time_domain is TimeDomain.DISCRETE else [UNIQUENESS_NOTE]
    return InvarianceReport(passed=passed, max_residual=worst, budget=budget, witness=witness,
                            n_samples=count, clamp_count=clamps, notes=notes)


# ---------------------------------------------------------------------------
# growth bound


@dataclass
class GrowthReport:
    passed: bool
    max_ratio: float
    C: float
    tol: float
    witness: dict | None
    n_pairs: int
    reprojection_defect: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _graph_orbit(psi: Callable, graph: GraphFunction, c: SplitCocycle, j: int, n: int, x: np.ndarray,
                 step: float) -> tuple[np.ndarray, float]:
    """``n`` steps of ``Psi`` from fiber ``j``, snapped back onto the graph after each.

    Returns the end point and the largest snap correction.  Without the
    snap, rounding and interpolation errors in the F direction grow like
    ``1/alpha^-`` and swamp the ``alpha^+`` scale being measured.
    """
    worst = 0.0
    for s in range(n):
        y = np.atleast_2d(psi(step, graph.fibers[j + s], x))
        k = j + s + 1
        e = _matvec(c.P(graph.fibers[k]), y)
        on, _ = graph.at_coords(k, e @ graph.E_bases[k])
        x = e + on
        worst = max(worst, float(vnorms(y - x, c.norm_kind).max(initial=0.0)))
    return x, worst


def check_growth_bound(psi: Callable, graph: GraphFunction, C: float, bounds: DichotomyBounds, pairs: Iterable,
                       c: SplitCocycle, tol: float = 1e-9, step: float = 1.0) -> GrowthReport:
    """max of ``|Psi(xi + phi(xi)) - Psi(xib + phi(xib))| / (alpha^+ |xi - xib|)``.

    ``pairs`` yields ``(j, n, coords, coords_bar)`` batches in E-coordinates;
    ``psi(dt, omega, x)`` is advanced one solver step at a time along the
    graph (see :func:`_graph_orbit`), and the largest snap correction is
    reported as ``reprojection_defect``.
    """
    kind = graph.norm_kind
    worst, witness, count, snap = 0.0, None, 0, 0.0
    last = graph.n_fibers - 1
    for j, n, a, b in pairs:
        j, n = int(j), int(n)
        if j < 0 or n < 0 or j + n > last:
            raise ValueError(f"pair (fiber {j}, {n} steps) is beyond the tabulated fibers 0..{last}")
        a, b = np.atleast_2d(a), np.atleast_2d(b)
        xa, la = _lift(graph, j, a)
        xb, lb = _lift(graph, j, b)
        ya, sa = _graph_orbit(psi, graph, c, j, n, la, step)
        yb, sb = _graph_orbit(psi, graph, c, j, n, lb, step)
        snap = max(snap, sa, sb)
        den = bounds.alpha_plus(n * step, graph.fibers[j]) * vnorms(xa - xb, kind)
        num = vnorms(ya - yb, kind)
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        count += len(r)
        i = int(np.argmax(r))
        if r[i] > worst or witness is None:
            worst = max(worst, float(r[i]))
            witness = {"fiber": j, "steps": n, "xi": a[i].tolist(), "xi_bar": b[i].tolist(), "ratio": float(r[i])}
    passed = worst <= C * (1 + tol)
    notes = ["orbits snapped back onto the computed graph after every solver step"]
    if bounds.driving.time_domain is TimeDomain.CONTINUOUS:
        notes.append(UNIQUENESS_NOTE)
    return GrowthReport(passed=passed, max_ratio=worst, C=float(C), tol=tol, witness=witness if not passed else None,
                        n_pairs=count, reprojection_defect=snap, notes=notes)


def sample_pairs(graph: GraphFunction, n_pairs: int, fibers: Sequence[int], steps: Sequence[int],
                 seed: int = 0, radius: float | None = None):
    """Deterministic batches of nearby and distant pairs inside the grid box.

    Pairs are spread evenly over ``fibers x steps``; separations are
    log-uniform between ``1e-6`` and ``1`` times the grid extent.
    """
    rng = np.random.default_rng(seed)
    R = graph.grid.extent if radius is None else radius
    m = graph.grid.dim
    combos = [(j, n) for j in fibers for n in steps]
    base, extra = divmod(int(n_pairs), len(combos))
    out = []
    for i, (j, n) in enumerate(combos):
        k = base + (1 if i < extra else 0)
        if k == 0:
            continue
        a = rng.uniform(-R, R, size=(k, m))
        sep = 10.0 ** rng.uniform(-6, 0, size=(k, 1)) * R
        u = rng.normal(size=(k, m))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        b = np.clip(a + sep * u, -R, R)
        out.append((j, n, a, b))
    return out


def sample_points(graph: GraphFunction, fibers: Sequence[int], steps: Sequence[int], stride: int = 1):
    """Invariance samples at grid nodes (every ``stride``-th node per axis)."""
    nodes = graph.grid.nodes()
    n = graph.grid.points
    idx = np.indices((n,) * graph.grid.dim).reshape(graph.grid.dim, -1).T
    keep = np.all(idx % stride == 0, axis=1)
    return [(j, s, nodes[keep]) for j in fibers for s in steps]
