from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from narrative_constraints.stats import (Contrast, ContrastSpanError, delta_pct, fit_poisson_gee,
                                         rr_contrasts)
from narrative_constraints.stats.contrasts import Z95, baseline_family, pairwise_family, results_to_tsv
from narrative_constraints.synthetic import profile_from_rates, simulate_counts_table

MODELS = ("a", "b")
PERSONAS = ("Basic", "Creativity", "Quality")


@pytest.fixture(scope="module")
def fit(pool):
    prof = profile_from_rates({"Style": 1.5, "Character": 1.1}, pool=pool)
    profiles = {(m, p): prof for m in MODELS for p in PERSONAS}
    return fit_poisson_gee(simulate_counts_table(profiles, pool, 40, seed=1))


def test_delta_pct():
    assert delta_pct(1.67) == pytest.approx(67.0, abs=1e-9)
    assert delta_pct(1.0) == 0.0
    np.testing.assert_allclose(delta_pct(np.array([0.5, 2.0])), [-50.0, 100.0])


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_delta_pct_monotone(a, b):
    if a < b:
        assert delta_pct(a) < delta_pct(b)
    assert delta_pct(a) > -100


def test_identity_contrast(fit):
    (r,) = rr_contrasts(fit, [Contrast("Style", "Style")])
    assert r.estimate == 1.0 and r.p == 1.0 and r.delta_pct == 0.0
    assert not r.reported


def test_span_errors(fit):
    with pytest.raises(ContrastSpanError):
        rr_contrasts(fit, [Contrast("Dialogue", "Event")])
    with pytest.raises(ContrastSpanError):
        rr_contrasts(fit, [np.ones(3)])
    with pytest.raises(ContrastSpanError):
        rr_contrasts(fit, [Contrast("Style", "Event", (("model", "zzz"),))])


def test_wald_interval_and_mask(fit):
    res = rr_contrasts(fit, baseline_family(fit.design.cells, "Event"), delta_floor=10)
    assert [r.label for r in res] == ["Style vs Event", "Character vs Event", "Setting vs Event"]
    for r in res:
        le = np.log(r.estimate)
        assert r.ci_low == pytest.approx(np.exp(le - Z95 * r.se))
        assert r.ci_high == pytest.approx(np.exp(le + Z95 * r.se))
        assert r.q >= r.p
        assert r.reported == (r.q < 0.05 and abs(r.delta_pct) >= 10)
    style = res[0]
    assert style.reported and abs(style.estimate - 1.5) < 0.15
    assert abs(fit.rr("Style", "Event") - style.estimate) < 1e-12


def test_pairwise_family_size():
    assert len(pairwise_family(["a", "b", "c", "d"])) == 6
    assert len(pairwise_family(list("abcdef"))) == 15


def test_tsv_has_params_header(fit):
    out = results_to_tsv(rr_contrasts(fit, baseline_family(fit.design.cells, "Event")), {"grain": "element"})
    lines = out.splitlines()
    assert lines[0] == "# grain=element"
    assert lines[1].split("\t")[:3] == ["label", "estimate", "ci_low"]


def test_bh_calibration_on_null_pairwise_family(pool):
    # 15 pairwise comparisons of the Style/Event log-RR across the 6 model x persona strata
    prof = profile_from_rates({}, pool=pool)
    strata = [(m, p) for m in MODELS for p in PERSONAS]
    false_reports = []
    for rep in range(100):
        f = fit_poisson_gee(simulate_counts_table({s: prof for s in strata}, pool, 30, seed=100 + rep))
        v = {s: f.design.log_rate_vector("Style", model=s[0], persona=s[1])
             - f.design.log_rate_vector("Event", model=s[0], persona=s[1]) for s in strata}
        fam = [v[a] - v[b] for a, b in combinations(strata, 2)]
        res = rr_contrasts(f, fam, q_threshold=0.05, delta_floor=0)
        false_reports.append(sum(r.q < 0.05 for r in res))
    assert len(fam) == 15
    assert np.mean(false_reports) <= 0.05 * 15
