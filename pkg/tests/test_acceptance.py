"""Acceptance run: one PASS/FAIL line per criterion.

Run directly with ``python tests/test_acceptance.py`` or through pytest
(``pytest tests/test_acceptance.py -s`` shows the lines inline).
"""

import math
import sys
import time

import numpy as np
import pytest

from rdsmanifold.cli import _implied_sigma_tau, main
from rdsmanifold.cocycle import diagonal_cocycle, verify_dichotomy, verify_splitting
from rdsmanifold.config import build_scenario, corollary_data, load_config
from rdsmanifold.corollaries import COROLLARY_IDS, check_corollary
from rdsmanifold.driving import PlanarShiftFlow
from rdsmanifold.lp_solver import solve, solve_MN
from rdsmanifold.perturbation import linear_perturbation
from rdsmanifold.rds import (InvarianceBudget, check_invariance, evaluate_psi_discrete, integral_defect,
                             psi_evaluator, psi_sum_form, sample_points)


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def scenario(name, *overrides):
    return build_scenario(load_config(None, list(overrides), preset=name))


@pytest.fixture(scope="module")
def toy():
    return scenario("toy-pseudo-hyperbolic")


def test_criterion_1_mn_identities(capsys):
    rng = np.random.default_rng(1)
    # sigma + tau uniform on (0, 1/2), split at a uniform fraction; both stay positive
    total = rng.uniform(0.0, 0.5, 1000)
    frac = rng.uniform(0.0, 1.0, 1000)
    pairs = [(t * f, t * (1 - f)) for t, f in zip(total, frac) if t * f > 0 and t * (1 - f) > 0]
    t0 = time.perf_counter()
    out = [solve_MN(s, t) for s, t in pairs]
    elapsed = time.perf_counter() - t0
    in_range = all(1 < m.M < 2 and 0 < m.N < 1 for m in out)
    res = max(max(m.residual_sigma, m.residual_tau) for m in out)
    degenerate = [solve_MN(s, 0.0) for s in (0.0, 0.1, 0.2499, 0.37, 0.4999)]
    exact = all(m.N == 0.0 and m.M == 1.0 / (1.0 - s) for m, s in zip(degenerate, (0.0, 0.1, 0.2499, 0.37, 0.4999)))
    ok = len(pairs) == 1000 and in_range and res <= 1e-12 and exact and elapsed < 1.0
    verdict(capsys, 1, ok, f"n={len(pairs)} max residual={res:.2e} tau=0 exact={exact} time={elapsed:.3f}s")


def brute_sigma_tau(eps, steps):
    sigma = 0.0
    for n in range(1, steps + 1):
        s = sum(math.exp(-0.5 * (n - k - 1)) * eps * 2.0 ** -k * math.exp(-0.5 * k) for k in range(n))
        sigma = max(sigma, s / math.exp(-0.5 * n))
    tau = sum(math.exp(-0.4 * (k + 1)) * eps * 2.0 ** -k * math.exp(-0.5 * k) for k in range(steps + 1))
    return sigma, tau


def test_criterion_2_contraction(capsys, toy):
    g = toy.grids
    t0 = time.perf_counter()
    pb, res = solve(toy.cocycle, toy.bounds, toy.perturbation, toy.anchor, xi_points=g["xi_points"],
                    k_max=g["k_max"], horizon=g["horizon"], tol=1e-8)
    elapsed = time.perf_counter() - t0
    q = res.constants.q
    sigma, tau = brute_sigma_tau(0.05, pb.last)
    ratios_ok = all(r <= q for r in res.ratios)
    match = abs(res.sigma - sigma) <= 1e-10 and abs(res.tau - tau) <= 1e-10
    within = res.converged and res.d_steps[-1] <= 1e-8 and res.iterations <= res.iterate_bound
    ok = ratios_ok and match and within and elapsed < 30.0 and g["xi_points"] == 41 and g["k_max"] == 40
    verdict(capsys, 2, ok, f"max ratio={res.max_ratio:.4f} q={q:.4f} |dsigma|={abs(res.sigma - sigma):.1e} "
                           f"|dtau|={abs(res.tau - tau):.1e} iters={res.iterations}/{res.iterate_bound} "
                           f"time={elapsed:.1f}s")


def test_criterion_3_zero_perturbation(capsys):
    sc = scenario("toy-pseudo-hyperbolic", "perturbation.kind=zero")
    g = sc.grids
    pb, res = solve(sc.cocycle, sc.bounds, sc.perturbation, sc.anchor, xi_points=g["xi_points"],
                    k_max=g["k_max"], horizon=g["horizon"])
    phi_zero = not res.graph.values.any()
    h = res.trajectory.values
    worst = 0.0
    for j in range(pb.n_fibers):
        w = sc.driving.evolve(j, sc.anchor)
        for n in range(pb.last - j + 1):
            expect = pb.xi[j] @ sc.cocycle.phi(n, w).T
            worst = max(worst, float(np.abs(h[j, n] - expect).max()))
    ok = phi_zero and worst <= 1e-12 and res.iterations == 1
    verdict(capsys, 3, ok, f"phi identically zero={phi_zero} max |h - Phi xi|={worst:.1e} iterations={res.iterations}")


def _residual(sc, tol, points):
    g = sc.grids
    pb, res = solve(sc.cocycle, sc.bounds, sc.perturbation, sc.anchor, xi_points=points,
                    k_max=g["k_max"], horizon=g["horizon"], tol=tol)
    budget = InvarianceBudget(solver_tol=res.tol, l_tail=res.l_tail_bound,
                              grid_allowance=res.constants.N * pb.grid.spacing)
    samples = sample_points(res.graph, [0, 10, 20, 40], [1, 2, 5, 10, 20, 40])
    return check_invariance(psi_evaluator(sc.cocycle, sc.perturbation), res.graph, sc.cocycle, samples, budget)


def test_criterion_4_theorem_conclusions(capsys, toy, toy_run):
    code, rep = toy_run
    inv, growth = rep["invariance"], rep["growth"]
    inv_ok = inv["max_residual"] <= inv["budget"]["total"]
    growth_ok = growth["n_pairs"] == 10000 and growth["max_ratio"] <= growth["C"]
    coarse = _residual(toy, 1e-8, 41).max_residual
    fine = _residual(toy, 5e-9, 81).max_residual
    ok = code == 0 and inv_ok and growth_ok and coarse / fine >= 2.0
    verdict(capsys, 4, ok, f"residual={inv['max_residual']:.2e} budget={inv['budget']['total']:.2e} "
                           f"growth={growth['max_ratio']:.4f} C={growth['C']:.4f} pairs={growth['n_pairs']} "
                           f"refinement gain={coarse / fine:.2f}x")


def test_criterion_5_example2(capsys):
    times, pts = [0.0, 0.5, 1.25, 2.0, 5.0], [(0.0, 0.0), (1.0, 0.5), (-2.0, 0.3)]
    split_ok, slack = True, 0.0
    for name in ("example2-poly", "tempered-exp"):
        sc = scenario(name)
        tt = times if not sc.discrete else [0, 1, 2, 5]
        pp = pts if not sc.discrete else [[0.0], [3.0], [-5.0]]
        split_ok &= verify_splitting(sc.cocycle, tt, pp, 1e-12).passed
        d = verify_dichotomy(sc.cocycle, sc.bounds, tt, pp, 1e-12)
        split_ok &= d.passed
        slack = max(slack, abs(d.min_slack_plus))
    sc = scenario("example2-poly")
    lam, gam, eps, C = -1.0, -0.5, 0.25, 1.0
    worst = 0.0
    for t in np.linspace(0.0, 10.0, 11):
        for x in np.linspace(-3.0, 3.0, 7):
            for y in np.linspace(-1.0, 1.0, 5):
                r = (1 + (x + t) ** 2) / (1 + x ** 2)
                plus = C * r ** (lam * (1 + y * y)) * (1 + x * x) ** (eps * (1 + y * y))
                worst = max(worst, abs(sc.bounds.alpha_plus(t, (x, y)) / plus - 1))
    ok = split_ok and slack <= 1e-15 and worst <= 1e-12
    verdict(capsys, 5, ok, f"splitting+dichotomy={split_ok} D1 slack={slack:.1e} alpha+ rel err={worst:.1e}")


def test_criterion_6_corollaries(capsys):
    passing = all(check_corollary(k, *corollary_data(k)).passed for k in COROLLARY_IDS)
    violations = []
    for kind, over, name in [
        ("c42", {"delta": 0.25}, "delta_range"),
        ("c32", {"delta": 0.3}, "delta_range"),
        ("c42", {"a": 0.6}, "a_plus_b_negative"),
        ("c32", {"a": 0.6}, "a_plus_b_negative"),
        ("c34", {"a": {"kind": "exp", "rate": -0.5}}, "H_increasing"),
        ("c44", {"a": {"kind": "exp", "rate": -0.5}}, "H_nondecreasing"),
    ]:
        chk = check_corollary(kind, *corollary_data(kind, over)).check(name)
        violations.append(not chk.passed and bool(chk.witness))
    data, samples, horizon = corollary_data("c42")
    implied = _implied_sigma_tau("c42", data, samples, horizon)
    small = all(r["sigma"] <= data.delta and r["tau"] + r["tau_tail_bound"] <= data.delta for r in implied)
    ok = passing and all(violations) and small
    worst = max(max(r["sigma"], r["tau"] + r["tau_tail_bound"]) for r in implied)
    verdict(capsys, 6, ok, f"datasets pass={passing} violations located={sum(violations)}/{len(violations)} "
                           f"c42 max(sigma, tau)={worst:.4f} <= delta={data.delta}")


def test_criterion_7_two_routes(capsys, toy):
    rng = np.random.default_rng(7)
    ns = rng.integers(0, 21, 1000)
    xs = rng.uniform(-1.0, 1.0, (1000, 2))
    worst = 0.0
    for n in np.unique(ns):
        batch = xs[ns == n]
        a = evaluate_psi_discrete(toy.cocycle, toy.perturbation, int(n), toy.anchor, batch)
        b = psi_sum_form(toy.cocycle, toy.perturbation, int(n), toy.anchor, batch)
        worst = max(worst, float(np.abs(a - b).max()))
    c = diagonal_cocycle([-0.5], PlanarShiftFlow())
    p = linear_perturbation(0.3)
    d = [integral_defect(c, p, 2.0, (0.0, 0.0), [1.0], h) for h in (0.1, 0.05, 0.025)]
    shrink = min(d[0] / d[1], d[1] / d[2])
    ok = worst <= 1e-10 and shrink >= 1.5
    verdict(capsys, 7, ok, f"max route gap={worst:.1e} over 1000 samples, defect shrink per halving={shrink:.2f}")


def test_criterion_8_determinism(capsys, tmp_path):
    runs = []
    for k in (1, 2):
        out = tmp_path / f"run{k}"
        code = main(["reproduce", "toy-pseudo-hyperbolic", "-q", "-o", str(out)])
        runs.append((code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}))
    (c1, f1), (c2, f2) = runs
    same = f1 == f2 and bool(f1)
    ok = same and c1 == c2 == 0
    verdict(capsys, 8, ok, f"files={sorted(f1)} identical={same} exit codes={c1},{c2}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
