import math

import numpy as np
import pytest
from hypothesis import settings

from rdsmanifold.cocycle import CustomBounds, diagonal_cocycle
from rdsmanifold.config import build_scenario, load_config
from rdsmanifold.driving import IntegerShiftIndexed
from rdsmanifold.perturbation import sine_perturbation, zero_perturbation

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

EPS = 0.05
LN2 = math.log(2.0)


def toy_parts(eps=EPS, zero=False):
    """Diagonal pseudo-hyperbolic cocycle over the integer shift, built by hand."""
    ds = IntegerShiftIndexed()
    c = diagonal_cocycle([-0.5, 0.4], ds)
    bounds = CustomBounds(ds, plus=lambda t, w: math.exp(-0.5 * t), minus=lambda t, w: math.exp(-0.4 * t))
    if zero:
        p = zero_perturbation()
    else:
        p = sine_perturbation(lambda w: eps * 2.0 ** (-float(w[0])))
    return ds, c, bounds, p


@pytest.fixture(scope="session")
def toy_scenario():
    return build_scenario(load_config(None, [], preset="toy-pseudo-hyperbolic"))


@pytest.fixture(scope="session")
def toy_run(toy_scenario):
    """Full solve pipeline on the toy preset: (exit code, report)."""
    from rdsmanifold.cli import run_solve

    return run_solve(toy_scenario, None)


@pytest.fixture(scope="session")
def toy_solved():
    from rdsmanifold.lp_solver import solve

    ds, c, bounds, p = toy_parts()
    return solve(c, bounds, p, [0.0], k_max=40, horizon=40, tol=1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
