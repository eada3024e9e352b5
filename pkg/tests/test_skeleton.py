import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbplab.engine import DOWN, UP, ParticleSystem
from nbplab.skeleton import (G, BranchingTable, DressedDynamics, G_down, G_up, G_updown, build_down, build_up,
                             constant_survival, down_table, dressed_many, gw3_table, mark_binpp, model_table,
                             reconstruct_mixture, sample_prolific_subset, subset_sum, up_table)
from nbplab.stats import mean_se, stream, two_sample_test

THIRD = Fraction(1, 3)
fractions_01 = st.fractions(min_value=0, max_value=1, max_denominator=50)


def _w(_):
    return THIRD


def test_gw3_down_table_exact():
    t = down_table(gw3_table(), _w, 0)
    assert t.rate == 1
    assert t.law() == {(): Fraction(3, 4), (0, 0): Fraction(1, 4)}


def test_gw3_up_table_exact():
    t = up_table(gw3_table(), _w, 0)
    assert t.rate == 1
    law = t.law()
    assert law[((0, UP), (0, UP))] == Fraction(1, 2)
    assert law[((0, UP), (0, DOWN))] == Fraction(1, 2)
    assert t.total_probability() == 1


def test_gw3_prolific_subset_given_two_children():
    t = up_table(gw3_table(), _w, 0)
    by_mask = {}
    for p, kids in t.outcomes:
        by_mask[tuple(m for _, m in kids)] = p
    assert by_mask == {(UP, UP): Fraction(1, 2), (UP, DOWN): Fraction(1, 4), (DOWN, UP): Fraction(1, 4)}


@settings(max_examples=100, deadline=None)
@given(st.lists(fractions_01, min_size=0, max_size=6))
def test_subset_identity(ps):
    assert subset_sum(ps) == 1


def _random_table(draw_probs, n_max):
    probs = [Fraction(x) for x in draw_probs]
    total = sum(probs)
    outs = tuple((p / total, tuple(range(k))) for k, p in enumerate(probs) if p > 0)
    return BranchingTable(Fraction(3, 2), outs), n_max


@settings(max_examples=60, deadline=None)
@given(st.lists(st.fractions(min_value=Fraction(1, 10), max_value=1, max_denominator=20), min_size=2, max_size=4),
       st.lists(st.fractions(min_value=Fraction(1, 10), max_value=Fraction(9, 10), max_denominator=20),
                min_size=4, max_size=4),
       st.lists(fractions_01, min_size=4, max_size=4))
def test_generator_identities(pn, wv, fv):
    table, _ = _random_table(pn, len(pn) - 1)
    w = lambda c: wv[c]  # noqa: E731
    f = lambda c: fv[c]  # noqa: E731
    one = lambda c: Fraction(1)  # noqa: E731
    x = 0
    # the doomed generator is the generator of the reweighted table
    assert G_down(table, w, f, x) == G(down_table(table, w, x), f, x)
    # the prolific generator counts prolific children only
    up = up_table(table, w, x)
    f_up = lambda lab: f(lab[0]) if lab[1] == UP else 1  # noqa: E731
    assert G_up(table, w, f, x) == up.rate * (up.expect_product(f_up) - f(x))
    # immigrants tested by 1 leave the prolific generator
    assert G_updown(table, w, f, one, x) == G_up(table, w, f, x)


def test_updown_float_agreement(rod, rod_sf, rng):
    w = rod_sf.w_field()
    r = 3.3
    W = [float(w.at([r], [c])[0]) for c in range(2)]
    table = model_table(rod, 0, 0)
    for _ in range(100):
        fv = rng.random(2)
        a = G_updown(table, lambda c: W[c], lambda c: fv[c], lambda c: 1.0, 0)
        b = G_up(table, lambda c: W[c], lambda c: fv[c], 0)
        assert abs(a - b) < 1e-12


def test_down_mean_offspring_characterization():
    # reweighted GW3 law: mean 1.5 w^2 / (1/4 + 3/4 w^2), at most 1 iff w <= 1/sqrt(3)
    for w in np.linspace(0.05, 0.95, 19):
        m = float(down_table(gw3_table(), lambda _: w, 0).mean_offspring())
        assert (m <= 1 + 1e-12) == (w <= 1 / math.sqrt(3) + 1e-12)


def test_down_process_on_rod(rod, rod_sf):
    down = build_down(rod, rod_sf)
    mo = down.mean_offspring_grid()
    # reflection symmetry survives the reweighting
    assert np.allclose(mo[::-1, ::-1], mo, atol=1e-8)
    assert np.all(mo > 0)
    s, b = down.rates(np.array([4.0]), np.array([0]))
    assert s[0] > 0 and b[0] > 0
    up = build_up(rod, rod_sf)
    tab = up.table(4.0, 0)
    assert tab.total_probability() == pytest.approx(1.0)


def test_degenerate_survival_rejected(gw3):
    with pytest.raises(ValueError, match="cell 0"):
        build_down(gw3, constant_survival(gw3, 1.0))
    build_down(gw3, constant_survival(gw3, 1.0), allow_degenerate=True)


def test_prolific_subset_sampler_law():
    rng = stream(5, 0, "subset")
    p = np.array([2 / 3, 2 / 3])
    counts = {}
    n = 20000
    for _ in range(n):
        key = tuple(sample_prolific_subset(p, rng).tolist())
        counts[key] = counts.get(key, 0) + 1
    assert abs(counts[(0, 1)] / n - 0.5) < 0.015
    assert abs(counts[(0,)] / n - 0.25) < 0.015
    with pytest.raises(ValueError):
        sample_prolific_subset(np.zeros(2), rng)


def test_binpp_marks_and_rate(rod, rod_sf):
    ps = ParticleSystem(np.full((20000, 1), 4.0), np.ones((20000, 1)), np.zeros(20000, np.int64),
                        np.zeros(20000, np.int8), np.arange(20000))
    pf = rod_sf.p_field()
    out = mark_binpp(ps, pf, stream(3))
    assert np.all(out.mark == UP)
    q = pf.at([4.0], [0])[0]
    assert abs(out.count / 20000 - q) < 4 * math.sqrt(q * (1 - q) / 20000)


def test_dressed_gw3_means(gw3, gw3_sf):
    dyn = DressedDynamics(gw3, gw3_sf)
    mu = ParticleSystem.single(gw3, [5e5], [1.0])
    ups = dressed_many(mu, dyn, 1.0, 3000, 17, reduce=lambda tr: int(np.sum(tr.snapshots[-1].mark == UP)))
    m, se = mean_se(ups)
    assert abs(m - math.exp(0.5)) < 3 * se
    assert min(ups) >= 1
    downs = dressed_many(mu, dyn, 2.0, 3000, 18, mode="down", reduce=lambda tr: tr.snapshots[-1].count)
    m, se = mean_se(downs)
    assert abs(m - math.exp(-1.0)) < 3 * se


def test_alternative_view_same_prolific_law(gw3, gw3_sf):
    mu = ParticleSystem.single(gw3, [5e5], [1.0])
    up = lambda tr: int(np.sum(tr.snapshots[-1].mark == UP))  # noqa: E731
    a = dressed_many(mu, DressedDynamics(gw3, gw3_sf), 1.5, 3000, 41, reduce=up)
    b = dressed_many(mu, DressedDynamics(gw3, gw3_sf, alt_view=True), 1.5, 3000, 42, reduce=up)
    assert two_sample_test(a, b).passed


def test_up_particle_at_exit_edge_terminates(rod, rod_sf):
    dyn = DressedDynamics(rod, rod_sf)
    mu = ParticleSystem.single(rod, [7.999999], [1.0], mark=UP)
    out = dressed_many(mu, dyn, 0.5, 20, 3, reduce=lambda tr: tr.snapshots[-1].count)
    assert len(out) == 20


def test_mixture_manifest(rod, rod_sf):
    dyn = DressedDynamics(rod, rod_sf)
    mu = ParticleSystem(np.array([[1.0], [4.0], [7.0]]), np.array([[1.0], [-1.0], [1.0]]),
                        np.array([0, 1, 0]), np.zeros(3, np.int8), np.arange(3))
    tr, man = reconstruct_mixture(mu, 0.5, dyn, stream(8), checkpoints=[0.0, 0.5])
    assert [root["lineage"] for root in man.roots] == [0, 1, 2]
    p = rod_sf.p_field()
    for root in man.roots:
        assert root["p"] == pytest.approx(p.at([root["r"]], [root["vidx"]])[0])
    start = tr.snapshots[0]
    assert start.count == 3
    assert [bool(m == UP) for m in start.mark] == [root["up"] for root in man.roots]
