from itertools import combinations, product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrative_constraints.permutation import (PermutationResult, axis_enrichment, enrichment_to_tsv,
                                               expected_counts, flag_significant, permutation_test,
                                               pool_axis_baseline, results_to_tsv)

from conftest import make_record, random_runs


def tiny_runs(pool):
    five = pool.ids[:5]
    sel = [[five[0], five[1]], [five[0], five[2]], [five[0], five[1]]]
    return five, [make_record(s, rep=i, permutation=five, pool=pool) for i, s in enumerate(sel)]


def exhaustive_p(five, runs):
    """Two-sided and one-sided p-values over all 10^3 equally likely assignments."""
    E = 3 * 2 / 5
    obs = {c: sum(c in r.selections for r in runs) for c in five}
    counts = {c: [] for c in five}
    pairs = list(combinations(five, 2))
    for assign in product(pairs, repeat=3):
        for c in five:
            counts[c].append(sum(c in a for a in assign))
    out = {}
    for c in five:
        y = np.array(counts[c])
        out[c] = (np.mean(np.abs(y - E) >= abs(obs[c] - E) - 1e-9), np.mean(y >= obs[c]), np.mean(y <= obs[c]))
    return out


def test_exhaustive_enumeration_oracle(pool):
    five, runs = tiny_runs(pool)
    B = 2000
    res = {r.constraint: r for r in permutation_test(runs, pool, B=B, seed=3) if r.constraint in five}
    exact = exhaustive_p(five, runs)
    for c in five:
        mc = res[c]
        for got, want in zip((mc.p_two, mc.p_over, mc.p_under), exact[c]):
            assert abs(got - want) <= 2 / np.sqrt(B), (c, got, want)
    assert res[five[0]].y_obs == 3 and res[five[0]].e_exp == pytest.approx(1.2)


def test_expected_counts(pool, record_factory):
    one = record_factory(pool.ids[:20])
    E = expected_counts([one], pool)
    assert set(np.round(list(E.values()), 12)) == {0.1}
    many = [record_factory(pool.ids[:20], rep=i) for i in range(160)]
    E = expected_counts(many, pool)
    assert set(np.round(list(E.values()), 9)) == {16.0}
    assert sum(E.values()) == pytest.approx(3200)
    shown = pool.ids[1:]
    E = expected_counts([record_factory(pool.ids[1:21], permutation=shown)], pool)
    assert E[pool.ids[0]] == 0 and E[pool.ids[1]] == pytest.approx(20 / 199)


def test_empty_pool_run(pool, record_factory):
    with pytest.raises(ValueError):
        permutation_test([], pool)
    with pytest.raises(ValueError):
        permutation_test([record_factory(pool.ids[:2])], pool, B=0)


def test_invariants(pool):
    runs = random_runs(pool, 12, seed=1) + random_runs(pool, 8, seed=2, persona="Quality")
    B = 300
    res = permutation_test(runs, pool, B=B, seed=0)
    assert len(res) == 400
    for r in res:
        assert 1 / (B + 1) <= min(r.p_two, r.p_over, r.p_under) and max(r.p_two, r.p_over, r.p_under) <= 1
        assert r.p_over + r.p_under >= 1
        assert r.rr_smoothed == pytest.approx((r.y_obs + 0.5) / (r.e_exp + 0.5))
        assert (r.direction == "over") == (r.share_obs > r.share_exp)
    for persona in ("Basic", "Quality"):
        assert abs(sum(r.rd_share for r in res if r.persona == persona)) < 1e-12


def test_seed_determinism_and_slice_independence(pool):
    a = random_runs(pool, 6, seed=1)
    b = random_runs(pool, 6, seed=2, persona="Quality")
    r1 = permutation_test(a + b, pool, B=100, seed=9)
    r2 = permutation_test(b + a, pool, B=100, seed=9)
    assert [x.p_two for x in r1] == [x.p_two for x in r2]
    r3 = permutation_test(a + b, pool, B=100, seed=10)
    assert [x.p_two for x in r1] != [x.p_two for x in r3]


def test_null_preserves_budgets(pool):
    from narrative_constraints.permutation import _Slice
    runs = [make_record(pool.ids[i:i + k], rep=i, pool=pool) for i, k in enumerate((3, 7, 20))]
    null = _Slice(runs, pool.ids).null_counts(50, np.random.default_rng(0))
    assert np.all(null.sum(axis=1) == 30)


def test_center_of_null_has_large_p(pool):
    # every constraint selected exactly E = 10 times across 100 runs of 20
    runs = [make_record(pool.ids[(20 * i) % 200:(20 * i) % 200 + 20], rep=i, pool=pool) for i in range(100)]
    res = permutation_test(runs, pool, B=500, seed=0)
    assert all(r.y_obs == 10 and r.e_exp == pytest.approx(10) for r in res)
    assert min(r.p_two for r in res) == 1.0


def test_uniform_null_flag_rate(pool):
    fractions = []
    for seed in range(20):
        runs = random_runs(pool, 30, seed=seed)
        res = permutation_test(runs, pool, B=2000, seed=seed)
        fractions.append(len(flag_significant(res)) / len(res))
    assert np.mean(fractions) <= 0.12


def _result(cid, pool, p=0.5, model="m", persona="Creativity", over=True, n_runs=30):
    c = pool[cid]
    so, se = (0.02, 0.01) if over else (0.01, 0.02)
    return PermutationResult(cid, model, persona, c.element, c.category, 1, 1.0, so, se, so - se, 1.0,
                             p, p, p, n_runs, 2000)


def test_flag_fallback_and_bh(pool):
    cat = [c.id for c in pool.by_category("Event", pool.by_element("Event")[0].category)]
    single = [_result(cat[0], pool, p=0.03)]
    assert flag_significant(single)[0].via == "fallback"
    assert flag_significant([_result(c, pool, p=1.0) for c in cat]) == []
    # minimum p repeated at the +1 floor: BH gives q = p * 10 / 3 for the three tied floors
    floor = 1 / 2001
    ps = [floor] * 3 + [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    res = [_result(c, pool, p=p) for c, p in zip(cat, ps)]
    flagged = flag_significant(res)
    assert [r.constraint for r in flagged] == cat[:3]
    assert all(r.via == "bh" for r in res)
    np.testing.assert_allclose([r.q for r in res[:3]], floor * 10 / 3)
    few = [_result(c, pool, p=p, n_runs=4) for c, p in zip(cat, ps)]
    assert len(flag_significant(few)) == 3 and all(r.via == "fallback" for r in few)


def test_enrichment_whole_pool_is_one(pool):
    flagged = [_result(c, pool) for c in pool.ids]
    rows = axis_enrichment(flagged, pool)
    assert rows and all(r.enrichment == pytest.approx(1.0) for r in rows)
    assert axis_enrichment([], pool) == []


def reference_row_set(pool):
    """Creativity over-selected set pooled over models: the terrain axis flagged in 4 models, 159 annotations."""
    target = next(c.id for c in pool if any(a.label == "Extraterrestrial Terrain" for a in c.axes))
    flagged = [_result(target, pool, model=f"m{i}") for i in range(4)]
    others = [c for c in pool if c.id != target and c.element != "Setting"]
    three = [c.id for c in others if len(c.axes) == 3][:49]
    two = [c.id for c in others if len(c.axes) == 2][:2]
    flagged += [_result(c, pool) for c in three + two]
    assert sum(len(pool[r.constraint].axes) for r in flagged) == 159
    return flagged, target


def test_enrichment_reference_arithmetic(pool):
    flagged, target = reference_row_set(pool)
    key = next(a.key for a in pool[target].axes if a.label == "Extraterrestrial Terrain")
    base = {a.key: s for a, s in pool_axis_baseline(pool).items()}
    base[("over", key)] = 1 / 128
    rows = axis_enrichment(flagged, pool, grouping=("persona",), baseline=base)
    row = next(r for r in rows if r.axis == key)
    assert row.support == 4
    assert round(100 * row.share, 2) == 2.52
    assert round(100 * row.baseline, 2) == 0.78
    assert round(row.enrichment, 2) == 3.22


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 199), min_size=1, max_size=30, unique=True), st.integers(2, 4))
def test_enrichment_scale_free(pool, idx, times):
    flagged = [_result(pool.ids[i], pool) for i in idx]
    once = axis_enrichment(flagged, pool, grouping=("persona",))
    many = axis_enrichment(flagged * times, pool, grouping=("persona",))
    assert [(r.axis, round(r.enrichment, 12), round(r.share, 12)) for r in once] == \
           [(r.axis, round(r.enrichment, 12), round(r.share, 12)) for r in many]


def test_enrichment_sorting_topk_and_support(pool):
    flagged = [_result(c, pool) for c in pool.ids[:30]]
    rows = axis_enrichment(flagged, pool, top_k=5, min_support=2)
    assert len(rows) <= 5 and all(r.support >= 2 for r in rows)
    keys = [(-r.enrichment, -r.support, r.axis) for r in rows]
    assert keys == sorted(keys)
    with pytest.raises(KeyError):
        axis_enrichment(flagged, pool, baseline={})


def test_tsv_layout(pool):
    flagged = [_result(c, pool) for c in pool.ids[:10]]
    out = enrichment_to_tsv(axis_enrichment(flagged, pool), params={"B": 2000})
    lines = out.splitlines()
    assert lines[0] == "# B=2000"
    assert lines[1].split("\t")[-4:] == ["support", "enrichment", "share_pct", "global_pct"]
    res = results_to_tsv(flagged)
    assert res.splitlines()[0].startswith("model\tpersona\telement\tcategory\tconstraint")
