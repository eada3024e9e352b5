import math

import numpy as np
import pytest

from nbplab.asymptotics import (EigenFields, MartingaleTrack, binpp_regression, check_directional_continuity,
                                check_g_dominated, estimate_lambda, martingale_regression, sample_from_density,
                                slln_ratio, sup_second_moment, track_W)
from nbplab.engine import ParticleSystem, simulate_many
from nbplab.rod import rod_field
from nbplab.stats import stream


@pytest.fixture(scope="module")
def gw3_runs(gw3):
    mu = ParticleSystem.single(gw3, [5e5], [1.0])
    return simulate_many(mu, gw3, 2.0, 3000, seed=77, checkpoints=[0.0, 1.0, 2.0], threads=4)


def test_W_has_unit_mean(gw3_runs):
    track = track_W(gw3_runs, EigenFields.constant(0.5))
    assert np.all(track.values[:, 0] == 1.0)
    assert all(r.passed for r in track.unit_mean_reports())


def test_W_martingale_regression(gw3_runs):
    track = track_W(gw3_runs, EigenFields.constant(0.5))
    assert martingale_regression(track, 1, 2).passed


def test_W_argument_checks(gw3_runs):
    with pytest.raises(ValueError):
        track_W(gw3_runs, EigenFields.constant(0.5), variant="skeleton")
    with pytest.raises(ValueError):
        track_W(gw3_runs, EigenFields.constant(0.5), variant="other")


def test_growth_rate_ci_covers_gw3(gw3_runs):
    est = estimate_lambda(gw3_runs)
    assert est.covers(0.5)
    assert est.report(0.5).passed
    assert est.level == pytest.approx(0.9973, abs=1e-4)


def test_growth_rate_on_exact_means():
    t = np.linspace(0, 3, 7)
    counts = np.tile(np.exp(0.3 * t), (50, 1))
    est = estimate_lambda(counts, t)
    assert est.lam == pytest.approx(0.3)
    assert est.hi - est.lo < 1e-12
    with pytest.raises(ValueError):
        estimate_lambda(np.zeros((5, 3)), np.arange(3.0))


def test_slln_ratio_of_phi_is_one(rod, rod_eig):
    ef = EigenFields.from_triple(rod_eig)
    mu = ParticleSystem.single(rod, [4.0], [1.0])
    runs = simulate_many(mu, rod, 2.0, 40, seed=3)
    rep = slln_ratio(runs, ef.phi, ef, 1.0)
    assert rep.status == "ok"
    assert np.abs(rep.ratios - 1).max() < 1e-12
    assert rep.to_report().passed


def test_slln_all_extinct(rod, rod_eig):
    ef = EigenFields.from_triple(rod_eig)
    mu = ParticleSystem.single(rod, [7.99], [1.0])
    runs = simulate_many(mu, rod, 0.5, 5, seed=3)
    rep = slln_ratio(runs, ef.phi, ef, 1.0)
    assert rep.status == "extinct" and not rep.passed
    assert not rep.to_report().passed


def test_domination_check():
    bound = np.array([1.0, 2.0, 0.5])
    assert check_g_dominated(np.array([0.5, 1.0, 0.5]), bound) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        check_g_dominated(np.array([-0.1, 0.0, 0.0]), bound)
    with pytest.raises(ValueError):
        check_g_dominated(np.array([0.0, 0.0, 1.0]), bound, c=1.5)


def test_directional_continuity(rod, rod_eig):
    ef = EigenFields.from_triple(rod_eig)
    assert check_directional_continuity(ef.phi, rod, stream(1)) == 0.0
    comb = lambda s: np.floor(s.r[:, 0] * 1e7) % 2  # noqa: E731
    with pytest.warns(UserWarning):
        assert check_directional_continuity(comb, rod, stream(1)) > 0.1


def test_density_sampler_matches_interpolant(rod_grid, rod_eig):
    pt = rod_field(rod_grid, rod_eig.phi_tilde, "phi_tilde")
    r, j = sample_from_density(pt, stream(4), 40000)
    # phi~ is mirror symmetric under (x, v) -> (8 - x, -v)
    assert abs(np.mean(j == 0) - 0.5) < 4 * 0.5 / math.sqrt(r.size)
    x = pt.nodes
    y = pt.node_values[0]
    seg = (y[:-1] + y[1:]) / 2 * np.diff(x)
    left = seg[x[1:] <= 2.0].sum() / seg.sum()
    got = np.mean(r[j == 0] <= 2.0)
    assert abs(got - left) < 4 * math.sqrt(left * (1 - left) / np.sum(j == 0))


def test_binpp_regression_on_binomial_thinning():
    rng = stream(9)
    mass = rng.uniform(5, 50, 4000)
    marked = rng.poisson(mass)
    assert binpp_regression(mass, marked, tol=0.05).passed
    assert not binpp_regression(mass, rng.poisson(0.8 * mass), tol=0.05).passed


def test_sup_second_moment_nondecreasing():
    vals = np.abs(stream(2).standard_normal((100, 5))) + 1
    vals[:, 0] = 1.0
    m = sup_second_moment(MartingaleTrack(np.arange(5.0), vals))
    assert np.all(np.diff(m) >= 0)
