import io
from collections import Counter

import pytest

from narrative_constraints.conditions import TaskCondition
from narrative_constraints.library import (ELEMENTS, LibraryFormatError, Taxonomy, dump_library, load_library,
                                           subset_for_condition, validate_pool)


def test_bundled_library_shape(pool):
    assert len(pool) == 200
    cats = Counter((c.element, c.category) for c in pool)
    assert len(cats) == 20
    assert set(cats.values()) == {10}
    assert pool.element_supply() == {e: 50 for e in ELEMENTS}


def test_every_constraint_has_resolved_axes(pool):
    for c in pool:
        assert c.axes, c.id
        assert len(c.axes) == len(pool.taxonomy.dimensions(c.element, c.category))


def test_known_annotations(pool):
    labels = {a.label for c in pool for a in c.axes}
    assert "Extraterrestrial Terrain" in labels
    assert "Authorial (James Baldwin)" in labels


def test_validate_reports_no_hard_violations(pool):
    rep = validate_pool(pool)
    assert rep.ok
    # a few author-free texts fall just outside the 15-20 word band; these are warnings only
    assert all("words" in w for w in rep.warnings)


def test_dump_round_trip(pool):
    buf = io.StringIO()
    dump_library(pool, buf)
    again = load_library(io.StringIO(buf.getvalue()))
    assert again.ids == pool.ids
    assert [c.text for c in again] == [c.text for c in pool]
    assert [c.axis_codes for c in again] == [c.axis_codes for c in pool]


def _lines(pool):
    buf = io.StringIO()
    dump_library(pool, buf)
    return buf.getvalue().splitlines(keepends=True)


def test_malformed_row_reports_line(pool):
    lines = _lines(pool)
    lines[5] = "bad\trow\n"
    with pytest.raises(LibraryFormatError) as ei:
        load_library("".join(lines).encode())
    assert ei.value.errors[0][0] == 6


def test_unknown_axis_code(pool):
    lines = _lines(pool)
    parts = lines[2].rstrip("\n").split("\t")
    parts[3] = "NOPE"
    lines[2] = "\t".join(parts) + "\n"
    with pytest.raises(LibraryFormatError, match="axis code"):
        load_library("".join(lines).encode())


def test_category_count_violation_names_category(pool):
    lines = _lines(pool)
    # drop one Event constraint
    del lines[2]
    with pytest.raises(LibraryFormatError, match="has 9 of 10"):
        load_library("".join(lines).encode())
    partial = load_library("".join(lines).encode(), strict=False)
    assert len(partial) == 199
    assert any("9 of 10" in m for m in validate_pool(partial).hard)


def test_duplicate_id(pool):
    lines = _lines(pool)
    lines.append(lines[2])
    with pytest.raises(LibraryFormatError, match="duplicate id"):
        load_library("".join(lines).encode())


def test_empty_library():
    with pytest.raises(LibraryFormatError):
        load_library(b"# nothing\n")


def test_taxonomy_resolve_errors():
    tax = Taxonomy.default()
    with pytest.raises(KeyError):
        tax.resolve("Event", "Disruption", ["X"] * 9)


def test_subset_for_condition(pool):
    lists = subset_for_condition(pool, TaskCondition.of("1-2"))
    assert [cl.label for cl in lists] == list(ELEMENTS)
    assert all(len(cl) == 50 and cl.show_labels for cl in lists)
    (pooled,) = subset_for_condition(pool, TaskCondition.of("2-2"))
    assert len(pooled) == 200 and not pooled.show_labels
    (labeled,) = subset_for_condition(pool, TaskCondition.of("3"))
    assert labeled.show_labels and labeled.label is None
