import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrative_constraints.library import ELEMENTS
from narrative_constraints.stats import EmptyTableError, build_counts_table

from conftest import make_record


def test_element_table(pool, record_factory):
    sel = [c.id for c in pool.by_element("Style")[:8]] + [c.id for c in pool.by_element("Event")[:12]]
    t = build_counts_table([record_factory(sel)], pool)
    assert t.cells() == list(ELEMENTS)
    got = dict(zip(t.cell, t.y))
    assert got == {"Event": 12, "Style": 8, "Character": 0, "Setting": 0}
    assert set(t.K) == {20} and set(t.n) == {50} and set(t.N) == {200}


def test_category_table_exposure_is_element_total(pool, record_factory):
    sel = [c.id for c in pool.by_element("Style")[:8]]
    t = build_counts_table([record_factory(sel, condition="2-1")], pool, grain="category")
    assert set(t.element) == {"Style"}
    assert len(t) == 5 and set(t.K) == {8} and set(t.n) == {10} and set(t.N) == {50}
    assert t.y.sum() == 8


def test_reduced_presentation_changes_supply(pool, record_factory):
    shown = [c.id for c in pool if c.element != "Setting" or c.category != pool.by_element("Setting")[0].category]
    t = build_counts_table([record_factory(pool.ids[:20], permutation=shown)], pool)
    assert dict(zip(t.cell, t.n))["Setting"] == 40
    assert set(t.N) == {190}


def test_invalid_runs_excluded(pool, record_factory):
    recs = [record_factory(pool.ids[:20], rep=0), record_factory(pool.ids[:20], rep=1, status="invalid")]
    assert build_counts_table(recs, pool).n_clusters == 1
    assert build_counts_table(recs, pool, valid_only=False).n_clusters == 2


def test_empty_table(pool, record_factory):
    with pytest.raises(EmptyTableError):
        build_counts_table([record_factory(pool.ids[:20], status="invalid")], pool)
    with pytest.raises(ValueError):
        build_counts_table([], pool, grain="token")


def test_where_and_tsv(pool, record_factory):
    recs = [record_factory(pool.ids[:20], persona=p, rep=i) for i, p in enumerate(["Basic", "Quality"])]
    t = build_counts_table(recs, pool)
    assert t.where(persona="Quality").n_clusters == 1
    assert t.to_tsv().splitlines()[0].split("\t") == list(t.COLUMNS)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 199), min_size=1, max_size=40, unique=True))
def test_counts_invariants(pool, idx):
    rec = make_record([pool.ids[i] for i in idx], pool=pool, condition="2-1")
    el = build_counts_table([rec], pool)
    assert el.y.sum() == len(idx)
    assert np.all(el.K == len(idx)) and el.N[0] == el.n.sum()
    cat = build_counts_table([rec], pool, grain="category")
    for e in set(cat.element):
        m = cat.element == e
        assert cat.y[m].sum() == cat.K[m][0] == el.y[el.cell == e][0]
        assert cat.n[m].sum() == cat.N[m][0]
    assert np.all((cat.share >= 0) & (cat.share <= 1))
