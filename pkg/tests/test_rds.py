import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdsmanifold.cocycle import diagonal_cocycle, evolve_linear
from rdsmanifold.driving import PlanarShiftFlow
from rdsmanifold.lp_solver import solve
from rdsmanifold.perturbation import linear_perturbation, zero_perturbation
from rdsmanifold.rds import (InvarianceBudget, check_growth_bound, check_invariance, evaluate_psi_continuous,
                             evaluate_psi_discrete, integral_defect, psi_evaluator, psi_sum_form, sample_pairs,
                             sample_points)

from conftest import EPS, toy_parts


def hand_psi(n, x, eps=EPS):
    """Toy recursion written out with explicit scalars: diag(e^-1/2, e^0.4) plus the sine map."""
    x1, x2 = x
    for k in range(n):
        c = eps * 2.0 ** -k
        f1, f2 = 0.5 * c * math.sin(x1 + x2), 0.5 * c * math.sin(x1)
        x1, x2 = math.exp(-0.5) * x1 + f1, math.exp(0.4) * x2 + f2
    return np.array([x1, x2])


# --- Psi


def test_psi_time_zero():
    _, c, _, p = toy_parts()
    assert evaluate_psi_discrete(c, p, 0, [0.0], [0.3, 0.4]).tolist() == [0.3, 0.4]
    assert evaluate_psi_continuous(c, p, 0.0, [0.0], [0.3, 0.4], 0.1).tolist() == [0.3, 0.4]


def test_psi_linear_when_unperturbed():
    _, c, _, _ = toy_parts()
    x = np.array([0.7, -0.2])
    out = evaluate_psi_discrete(c, zero_perturbation(), 6, [0.0], x)
    assert out == pytest.approx(evolve_linear(c, 6, [0.0], x), rel=1e-14)


def test_psi_toy_three_steps():
    _, c, _, p = toy_parts()
    x = [1.0, 1.0]
    expect = hand_psi(3, x)
    assert np.abs(evaluate_psi_discrete(c, p, 3, [0.0], x) - expect).max() <= 1e-14
    assert np.abs(psi_sum_form(c, p, 3, [0.0], x) - expect).max() <= 1e-13


def test_psi_rejects_negative_time():
    _, c, _, p = toy_parts()
    with pytest.raises(ValueError):
        evaluate_psi_discrete(c, p, -1, [0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        psi_sum_form(c, p, -1, [0.0], [0.0, 0.0])


@given(n=st.integers(0, 10), m=st.integers(0, 10), j=st.integers(0, 5),
       x1=st.floats(-1, 1), x2=st.floats(-1, 1))
def test_psi_cocycle_property(n, m, j, x1, x2):
    _, c, _, p = toy_parts()
    w = [float(j)]
    whole = evaluate_psi_discrete(c, p, n + m, w, [x1, x2])
    parts = evaluate_psi_discrete(c, p, n, [float(j + m)], evaluate_psi_discrete(c, p, m, w, [x1, x2]))
    assert np.abs(whole - parts).max() <= 1e-10


def test_psi_batched_matches_single():
    _, c, _, p = toy_parts()
    xs = np.array([[0.1, 0.2], [-0.5, 0.9], [0.0, 0.0]])
    batch = evaluate_psi_discrete(c, p, 5, [0.0], xs)
    for x, b in zip(xs, batch):
        assert np.array_equal(evaluate_psi_discrete(c, p, 5, [0.0], x), b)


def test_continuous_unperturbed_follows_cocycle():
    ds = PlanarShiftFlow()
    c = diagonal_cocycle([-0.5, 0.4], ds)
    out = evaluate_psi_continuous(c, zero_perturbation(), 2.0, (0.0, 0.0), [1.0, 1.0], 0.1)
    assert out == pytest.approx([math.exp(-1.0), math.exp(0.8)], rel=1e-13)


def test_continuous_defect_shrinks_with_step():
    c = diagonal_cocycle([-0.5], PlanarShiftFlow())
    p = linear_perturbation(0.3)
    defects = [integral_defect(c, p, 2.0, (0.0, 0.0), [1.0], h) for h in (0.1, 0.05, 0.025)]
    assert defects[0] / defects[1] >= 1.5
    assert defects[1] / defects[2] >= 1.5


def test_continuous_stepper_converges_to_exact_solution():
    # u' = (-0.5 + 0.3) u
    c = diagonal_cocycle([-0.5], PlanarShiftFlow())
    p = linear_perturbation(0.3)
    errs = [abs(evaluate_psi_continuous(c, p, 2.0, (0.0, 0.0), [1.0], h)[0] - math.exp(-0.4)) for h in (0.1, 0.05)]
    assert errs[1] < errs[0] < 0.01


def test_psi_evaluator_dispatch():
    _, c, _, p = toy_parts()
    f = psi_evaluator(c, p)
    assert np.array_equal(f(2, [0.0], [0.1, 0.1]), evaluate_psi_discrete(c, p, 2, [0.0], [0.1, 0.1]))
    cc = diagonal_cocycle([-0.5, 0.4], PlanarShiftFlow())
    with pytest.raises(ValueError):
        psi_evaluator(cc, p)


# --- invariance and growth on solved graphs


@pytest.fixture(scope="module")
def zero_solved():
    _, c, bounds, p = toy_parts(zero=True)
    return solve(c, bounds, p, [0.0], k_max=10, horizon=20, xi_points=11)


def _budget(pb, res):
    return InvarianceBudget(solver_tol=res.tol, l_tail=res.l_tail_bound,
                            grid_allowance=res.constants.N * pb.grid.spacing)


def test_invariance_zero_graph(zero_solved):
    pb, res = zero_solved
    _, c, _, p = toy_parts(zero=True)
    samples = sample_points(res.graph, [0, 5, 10], [1, 5, 10])
    rep = check_invariance(psi_evaluator(c, p), res.graph, c, samples, _budget(pb, res))
    assert rep.passed and rep.max_residual == 0.0


def test_invariance_toy_within_budget(toy_solved):
    pb, res = toy_solved
    _, c, _, p = toy_parts()
    samples = sample_points(res.graph, [0, 10, 20, 40], [1, 2, 5, 10, 20, 40])
    rep = check_invariance(psi_evaluator(c, p), res.graph, c, samples, _budget(pb, res))
    assert rep.passed
    assert rep.max_residual <= rep.budget.total
    assert rep.clamp_count == 0


def test_invariance_toy_absolute_level(toy_solved):
    pb, res = toy_solved
    _, c, _, p = toy_parts()
    samples = sample_points(res.graph, [0, 10, 20, 40], [1, 2, 5, 10, 20, 40])
    rep = check_invariance(psi_evaluator(c, p), res.graph, c, samples, _budget(pb, res))
    assert rep.max_residual <= 1e-6


def test_invariance_detects_corrupted_graph(toy_solved):
    pb, res = toy_solved
    _, c, _, p = toy_parts()
    vals = res.graph.values.copy()
    j, g = 5, pb.grid.center + 6
    vals[j, g, 1] += 0.1
    bad = res.graph.with_values(vals)
    samples = sample_points(bad, [0, 4, 5], [1, 2])
    rep = check_invariance(psi_evaluator(c, p), bad, c, samples, _budget(pb, res))
    assert not rep.passed
    w = rep.witness
    # either the sample starts on the bad entry or lands on its fiber
    assert j in (w["fiber"], w["fiber"] + w["steps"])
    if w["fiber"] == j:
        assert w["xi"] == pb.grid.nodes()[g].tolist()
    assert rep.max_residual > rep.budget.total


def test_invariance_rejects_samples_past_horizon(toy_solved):
    pb, res = toy_solved
    _, c, _, p = toy_parts()
    with pytest.raises(ValueError):
        check_invariance(psi_evaluator(c, p), res.graph, c, [(70, 20, np.zeros((1, 1)))], _budget(pb, res))


def test_growth_equal_points(toy_solved):
    pb, res = toy_solved
    _, c, bounds, p = toy_parts()
    a = np.array([[0.3], [-0.2]])
    rep = check_growth_bound(psi_evaluator(c, p), res.graph, res.constants.C, bounds, [(0, 5, a, a)], c)
    assert rep.passed and rep.max_ratio == 0.0


def test_growth_unperturbed_at_most_one(zero_solved):
    pb, res = zero_solved
    _, c, bounds, p = toy_parts(zero=True)
    pairs = sample_pairs(res.graph, 500, [0, 5, 10], [1, 5, 10], seed=2)
    rep = check_growth_bound(psi_evaluator(c, p), res.graph, res.constants.C, bounds, pairs, c)
    assert rep.passed
    assert rep.max_ratio <= 1.0 + 1e-9
    assert res.constants.C == 1.0


def test_growth_toy_below_C(toy_solved):
    pb, res = toy_solved
    _, c, bounds, p = toy_parts()
    pairs = sample_pairs(res.graph, 2000, [0, 10, 20, 40], [1, 5, 10, 20, 40], seed=0)
    rep = check_growth_bound(psi_evaluator(c, p), res.graph, res.constants.C, bounds, pairs, c)
    assert rep.passed
    assert rep.n_pairs == 2000
    assert rep.max_ratio <= res.constants.C


def test_sample_pairs_deterministic(toy_solved):
    _, res = toy_solved
    a = sample_pairs(res.graph, 50, [0, 1], [1, 2], seed=9)
    b = sample_pairs(res.graph, 50, [0, 1], [1, 2], seed=9)
    assert sum(len(x[2]) for x in a) == 50
    assert all(np.array_equal(x[2], y[2]) and np.array_equal(x[3], y[3]) for x, y in zip(a, b))
