import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrative_constraints.stats import UnsatisfiableDesign, bh_fdr, power_required_runs
from narrative_constraints.stats.power import runs_for_stratum

# Step-up q-values worked out by hand: sort, scale p_(i) by m/i, take the running
# minimum from the top, cap at 1, and restore input order.
FIXTURES = [
    ([0.01, 0.04, 0.03, 0.005], [0.02, 0.04, 0.04, 0.02]),
    ([0.5], [0.5]),
    ([1.0, 1.0, 1.0], [1.0, 1.0, 1.0]),
    ([0.01, 0.02, 0.03, 0.04, 0.05], [0.05, 0.05, 0.05, 0.05, 0.05]),
    ([0.001, 0.8, 0.02, 0.3], [0.004, 0.8, 0.04, 0.4]),
    ([0.02, 0.02, 0.5], [0.03, 0.03, 0.5]),
    ([0.04, 0.01], [0.04, 0.02]),
    ([0.9, 0.6, 0.3], [0.9, 0.9, 0.9]),
    ([0.0, 0.05], [0.0, 0.05]),
    ([0.012, 0.001, 0.049, 0.2, 0.03, 0.6], [0.036, 0.006, 0.0735, 0.24, 0.06, 0.6]),
]


@pytest.mark.parametrize("p,q", FIXTURES)
def test_bh_hand_fixtures(p, q):
    np.testing.assert_allclose(bh_fdr(p), q, rtol=0, atol=1e-15)


def naive_bh(p):
    p = np.asarray(p, dtype=float)
    m = p.size
    ranks = np.argsort(np.argsort(p, kind="stable"), kind="stable") + 1
    srt = np.sort(p)
    out = np.empty(m)
    for i in range(m):
        r = ranks[i]
        out[i] = min(1.0, min(srt[j - 1] * m / j for j in range(r, m + 1)))
    return out


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_bh_properties(p):
    q = bh_fdr(p)
    np.testing.assert_allclose(q, naive_bh(p), atol=1e-12)
    assert np.all(q >= np.asarray(p) - 1e-15)
    assert np.all(q <= 1)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(q[order]) >= -1e-15)


def test_bh_rejects_bad_input():
    assert bh_fdr([]).size == 0
    for bad in ([1.2], [-0.1], [np.nan]):
        with pytest.raises(ValueError):
            bh_fdr(bad)


def test_power_reference_point():
    n = power_required_runs(1.5, phi=1.0, baseline_mean=0.5)
    assert 150 <= n <= 165
    # direct evaluation of the closed form
    z = 1.959963984540054 + 0.8416212335729143
    assert abs(runs_for_stratum(1.5, 0.5) - z * z * (2 + 1 / 0.75) / math.log(1.5) ** 2) < 1e-9


def test_power_scales_with_phi_and_K():
    assert runs_for_stratum(1.5, 0.5, phi=2.0) == pytest.approx(2 * runs_for_stratum(1.5, 0.5))
    assert power_required_runs(1.5, K=20, baseline_mean=0.025) == power_required_runs(1.5, baseline_mean=0.5)


def test_power_percentile_over_strata():
    strata = [0.25, 0.5, 1.0, 2.0, 4.0]
    ns = [runs_for_stratum(1.5, m) for m in strata]
    assert power_required_runs(1.5, strata=strata, percentile=100) == math.ceil(max(ns))
    assert power_required_runs(1.5, strata=strata, percentile=0) == math.ceil(min(ns))


@settings(max_examples=50, deadline=None)
@given(st.floats(1.05, 4.0), st.floats(0.05, 10.0))
def test_power_monotone(rr, mu0):
    assert runs_for_stratum(rr, mu0 * 2) < runs_for_stratum(rr, mu0)
    assert runs_for_stratum(rr * 1.1, mu0) < runs_for_stratum(rr, mu0)


def test_power_errors():
    with pytest.raises(UnsatisfiableDesign):
        power_required_runs(1.0, baseline_mean=0.5)
    with pytest.raises(ValueError):
        power_required_runs(1.5)
    with pytest.raises(ValueError):
        runs_for_stratum(1.5, 0.0)
