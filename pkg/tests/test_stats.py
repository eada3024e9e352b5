import json
import math

import numpy as np
import pytest

from nbplab.stats import (THREE_SIGMA_LEVEL, TestReport, _merge_bins, bootstrap_ci, mc_mean_ci, mean_se,
                          overlap_3se, stream, two_sample_test)


def test_streams_reproducible():
    assert np.array_equal(stream(1, 2, "a").random(10), stream(1, 2, "a").random(10))


def test_streams_independent():
    n = 1_000_000
    base = stream(7, 0, "main").standard_normal(n)
    for other in (stream(7, 1, "main"), stream(7, 0, "other"), stream(8, 0, "main")):
        x = other.standard_normal(n)
        assert abs(np.corrcoef(base, x)[0, 1]) < 5 / math.sqrt(n)


def test_stream_rejects_negative_keys():
    with pytest.raises(ValueError):
        stream(-1)
    with pytest.raises(ValueError):
        stream(1, -2)


def test_three_sigma_level():
    assert THREE_SIGMA_LEVEL == pytest.approx(0.99730020393674, abs=1e-12)


def test_chi2_null_and_alternative():
    rng = stream(3)
    assert two_sample_test(rng.poisson(3.0, 4000), rng.poisson(3.0, 4000)).passed
    assert not two_sample_test(rng.poisson(3.0, 4000), rng.poisson(3.5, 4000)).passed


def test_chi2_null_rejection_rate():
    rejections = 0
    for i in range(200):
        rng = stream(4, i, "chi2")
        rejections += not two_sample_test(rng.poisson(2.0, 300), rng.poisson(2.0, 300)).passed
    # nominal level 0.01: 200 trials rarely give more than 8
    assert rejections <= 8


def test_bins_merged_to_min_expected():
    ca = np.array([100, 50, 3, 1, 0, 1])
    cb = np.array([90, 60, 2, 2, 1, 0])
    ma, mb = _merge_bins(ca, cb, 5.0)
    frac = min(ca.sum(), cb.sum()) / (ca.sum() + cb.sum())
    assert ma.sum() == ca.sum() and mb.sum() == cb.sum()
    assert np.all((ma + mb) * frac >= 5.0)


def test_chi2_input_checks():
    with pytest.raises(ValueError):
        two_sample_test([0.5, 1.0], [1, 2])
    with pytest.raises(ValueError):
        two_sample_test([], [1])
    with pytest.raises(ValueError):
        two_sample_test([1, 1, 1], [1, 1])


def test_report_rules():
    assert TestReport("a", 1.0, 2.0).passed
    assert not TestReport("a", 3.0, 2.0).passed
    assert TestReport("a", 3.0, 2.0, rule="ge").passed
    assert TestReport("a", -1.0, 2.0, rule="abs_le").passed
    assert TestReport("a", 0.0, 0.01, rule="p_ge", p_value=0.5).passed
    assert not TestReport("a", 0.0, 0.01, rule="p_ge").passed
    assert TestReport("a", 1.05, 0.1, rule="within", target=1.0).passed
    with pytest.raises(ValueError):
        TestReport("a", 0.0, 0.0, rule="odd").passed


def test_report_serialization():
    r = TestReport("x", np.float64(0.5), 1.0, details={"arr": np.arange(3), "flag": np.bool_(True)})
    d = r.to_dict()
    json.dumps(d)
    assert d["passed"] is True and d["details"]["arr"] == [0, 1, 2]
    assert r.line().startswith("[PASS] x:")


def test_interval_helpers():
    x = stream(6).normal(2.0, 1.0, 10000)
    m, half = mc_mean_ci(x, 0.95)
    assert abs(m - 2.0) < half * 2
    assert mean_se(x)[1] == pytest.approx(half / 1.959964, rel=1e-5)
    lo, hi = bootstrap_ci(x, np.mean, n_boot=300, rng=stream(6, 1))
    assert lo < 2.0 < hi
    assert overlap_3se(0.0, 1.0, 5.0, 1.0) and not overlap_3se(0.0, 1.0, 7.0, 1.0)
    with pytest.raises(ValueError):
        mc_mean_ci([1.0])
    with pytest.raises(ValueError):
        mc_mean_ci([1.0, 2.0], level=1.5)
