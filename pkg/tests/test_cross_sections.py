import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbplab.cross_sections import (CrossSectionModel, DiscreteScatter, IIDFission, IsotropicScatter, SampledFission,
                                   ShellZones, SlabZones, TabulatedFission, ValidationError, fission_mean_check,
                                   rod_model, validate_hypotheses)
from nbplab.phase_space import Ball, DiscreteVelocities, Interval, VelocityAnnulus
from nbplab.stats import stream


def _two_zone_rod(sigma_f_right=1.0):
    vel = DiscreteVelocities.line([1.0, -1.0])
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    return CrossSectionModel(
        Interval(0.0, 4.0), vel, SlabZones((0.0, 2.0, 4.0)),
        np.array([[0.5, 0.5], [0.2, 0.2]]), np.array([[1.0, 1.0], [sigma_f_right, sigma_f_right]]),
        DiscreteScatter(np.stack([flip, flip])),
        IIDFission(np.broadcast_to([0.25, 0.0, 0.75], (2, 2, 3)).copy(), np.full((2, 2, 2), 0.5)),
    )


def test_scatter_rows_must_sum_to_one():
    with pytest.raises(ValidationError):
        DiscreteScatter(np.array([[[0.5, 0.4], [1.0, 0.0]]]))
    with pytest.raises(ValidationError):
        DiscreteScatter(np.array([[[1.5, -0.5], [1.0, 0.0]]]))


def test_count_law_must_be_normalized():
    with pytest.raises(ValidationError):
        IIDFission(np.array([[[0.3, 0.3]]]), np.array([[[1.0]]]))


def test_rate_shape_and_sign_checked():
    m = rod_model()
    with pytest.raises(ValidationError):
        m.with_rates(sigma_s=np.full((1, 3), 0.5))
    with pytest.raises(ValidationError):
        m.with_rates(sigma_f=np.full((1, 2), -1.0))


def test_zones_must_cover_domain():
    m = rod_model()
    with pytest.raises(ValidationError):
        CrossSectionModel(Interval(0.0, 8.0), m.velocities, SlabZones((0.0, 4.0)), m.sigma_s, m.sigma_f,
                          m.scatter, m.fission)


def test_zone_lookup():
    m = _two_zone_rod()
    z = m.zone_of(np.array([[0.5], [1.999], [2.0], [3.9]]))
    assert z.tolist() == [0, 0, 1, 1]
    s, f = m.rates(np.array([[3.0]]), np.array([[1.0]]), np.array([0]))
    assert s[0] == 0.2 and f[0] == 1.0
    shells = ShellZones((0.0, 0.0), (1.0, 2.0))
    assert shells.zone_of(np.array([[0.5, 0.0], [1.5, 0.0], [1.99, 0.0]])).tolist() == [0, 1, 1]


def test_rod_hypotheses_hold():
    rep = validate_hypotheses(rod_model())
    assert rep.structural_ok
    assert rep.checks["H3"] and rep.checks["H3*"]
    assert rep.checks["M1"] is None and "solver" in rep.witnesses["M1"]
    assert rep.witnesses["H4"] == "n_max = 2"


def test_h2_fails_without_coupling():
    # no scatter and fission children copy the parent direction: velocities never mix
    m = rod_model()
    bad = CrossSectionModel(m.domain, m.velocities, m.zones, np.zeros((1, 2)), m.sigma_f,
                            m.scatter, IIDFission(m.fission.count_probs, np.array([[[1.0, 0.0], [0.0, 1.0]]])))
    rep = validate_hypotheses(bad)
    assert rep.checks["H2"] is False
    assert not rep.structural_ok


def test_h3_witness_ball_in_fissile_zone():
    m = _two_zone_rod(sigma_f_right=0.0)
    rep = validate_hypotheses(m)
    assert rep.checks["H3"]
    assert not rep.checks["H3*"]
    assert "zone 0" in rep.witnesses["H3"]


def test_expected_product_matches_enumeration(rod):
    h = np.array([[0.3, 0.8]])
    for j in range(2):
        direct = sum(p * np.prod(h[0, list(c)]) for p, c in rod.fission.configurations(0, j))
        assert rod.fission.expected_product(0, j, h)[0] == pytest.approx(direct, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_tabulated_and_iid_agree(hv):
    rod = rod_model()
    table = tuple(tuple(tuple(rod.fission.configurations(0, j)) for j in range(2)) for _ in range(1))
    tab = TabulatedFission(table, 2)
    h = np.array([hv])
    for j in range(2):
        assert tab.expected_product(0, j, h)[0] == pytest.approx(rod.fission.expected_product(0, j, h)[0],
                                                                 abs=1e-12)
    assert np.allclose(tab.mean_matrix(), rod.fission.mean_matrix())


def test_tabulated_rejects_bad_children():
    with pytest.raises(ValidationError):
        TabulatedFission(((((1.0, (0, 5)),),),), 2)


def test_combined_matrix(rod):
    cm = rod.combined_matrix()[0]
    assert np.allclose(cm, [[0.75, 1.25], [1.25, 0.75]])
    assert rod.alpha()[0].tolist() == [2.0, 2.0]
    assert rod.sigma_bar == 1.5


def test_fission_mean_check_discrete(rod):
    rep = fission_mean_check(rod, [4.0], [1.0], lambda kids: (np.asarray(kids) == 0).astype(float), 40000,
                             stream(7, 0, "fission"))
    assert rep.target == pytest.approx(0.75)
    assert rep.passed


def test_fission_mean_check_catches_wrong_declared_mean(rod):
    def sampler(rng, z, j):
        n = 2 if rng.random() < 0.75 else 0
        return n, [int(rng.integers(0, 2)) for _ in range(n)]

    lying = SampledFission(sampler, np.full((1, 2, 2), 0.9))  # true mean is 0.75 per direction
    m = CrossSectionModel(rod.domain, rod.velocities, rod.zones, rod.sigma_s, rod.sigma_f, rod.scatter, lying)
    rep = fission_mean_check(m, [4.0], [1.0], lambda kids: np.ones(len(kids)), 20000, stream(7, 1, "fission"))
    assert not rep.passed
    assert not validate_hypotheses(m).checks["H4"]


def test_fission_mean_check_continuous():
    vel = VelocityAnnulus(1.0, 2.0, 3)
    m = CrossSectionModel(Ball((0.0, 0.0, 0.0), 1.0), vel, ShellZones((0.0, 0.0, 0.0), (1.0,)),
                          np.array([[0.5]]), np.array([[1.0]]), IsotropicScatter(),
                          IIDFission(np.array([[[0.25, 0.0, 0.75]]]), None, vel))
    rep = fission_mean_check(m, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], lambda kv: np.linalg.norm(kv, axis=1), 20000,
                             stream(7, 2, "fission"))
    assert rep.passed
    assert validate_hypotheses(m).structural_ok
