import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbplab.bbm_strip import (GW3, GW3_PROBS, StripModel, down_mean_offspring, gw3_minimal_root, lambda_strip,
                              sample_strip_start, simulate_strip, simulate_strip_many, solve_w_strip)
from nbplab.stats import mean_se, stream


def test_gw3_constants_exact():
    assert gw3_minimal_root() == Fraction(1, 3)
    assert GW3["lam"] == (GW3["m"] - 1) * GW3["rate"]
    assert GW3["p"] == 1 - GW3["w"]


@settings(max_examples=15, deadline=None)
@given(st.floats(1.0, 20.0), st.floats(-1.0, 1.0))
def test_eigenvalue_closed_form_matches_fd(K, mu):
    out = lambda_strip(StripModel(K, mu, 1.0, GW3_PROBS))
    assert out["difference"] < 1e-6


def test_model_validation():
    with pytest.raises(ValueError):
        StripModel(0.0, 0.0, 1.0, GW3_PROBS)
    with pytest.raises(ValueError):
        StripModel(1.0, 0.0, 0.0, GW3_PROBS)
    with pytest.raises(ValueError):
        StripModel(1.0, 0.0, 1.0, (0.5, 0.4))


def test_wide_strip_plateau():
    sol = solve_w_strip(StripModel(40.0, 0.0, 1.0, GW3_PROBS))
    assert sol.residual < 1e-8
    assert sol.w[0] == sol.w[-1] == 1.0
    assert abs(sol.w[sol.w.size // 2] - 1 / 3) < 1e-4
    assert sol.w.min() >= 1 / 3 - 1e-9
    assert np.allclose(sol.w, sol.w[::-1], atol=1e-8)


def test_narrow_strip_dies_out():
    m = StripModel(2.0, 0.0, 1.0, GW3_PROBS)  # lam = 0.5 - pi^2/8 < 0
    assert lambda_strip(m)["lam"] < 0
    sol = solve_w_strip(m, n_cells=400)
    assert np.abs(sol.w - 1).max() < 1e-6


def test_down_mean_offspring():
    m = StripModel(1.0, 0.0, 1.0, GW3_PROBS)
    assert down_mean_offspring(m, np.array([1 / 3]))[0] == pytest.approx(0.5)
    assert down_mean_offspring(m, np.array([1.0]))[0] == pytest.approx(1.5)


def test_survival_without_branching_matches_series():
    # one child per event: pure Brownian motion killed at the walls
    K, x0, t = 2.0, 0.7, 0.5
    m = StripModel(K, 0.0, 1.0, (0.0, 1.0))
    exact = sum(4 / (n * math.pi) * math.sin(n * math.pi * x0 / K) * math.exp(-(n * math.pi / K) ** 2 * t / 2)
                for n in range(1, 200, 2))
    alive = [simulate_strip(m, [x0], t, stream(5, i, "bm")).counts()[-1] for i in range(8000)]
    p, se = mean_se(alive)
    assert abs(p - exact) < 3 * se


def test_mean_growth_from_principal_start():
    m = StripModel(math.pi, 0.0, 1.0, (0.0, 0.0, 1.0))
    counts = simulate_strip_many(m, 1.0, 3000, 11, checkpoints=[1.0], threads=4)
    mean, se = mean_se(counts[:, -1])
    assert abs(mean - math.exp(lambda_strip(m)["lam"])) < 3 * se


def test_start_sampler_symmetric():
    m = StripModel(math.pi, 0.0, 1.0, GW3_PROBS)
    x = sample_strip_start(m, stream(3), 20000)
    assert x.min() > 0 and x.max() < math.pi
    # sin density on [0, pi]: mean pi/2, variance pi^2/4 - 2
    assert abs(x.mean() - math.pi / 2) < 4 * math.sqrt(math.pi**2 / 4 - 2) / math.sqrt(x.size)


def test_start_outside_rejected():
    with pytest.raises(ValueError):
        simulate_strip(StripModel(1.0, 0.0, 1.0, GW3_PROBS), [1.0], 1.0, stream(1))
