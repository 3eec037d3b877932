import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrative_constraints.network import (Ranking, WeightedGraph, build_cooccurrence, build_ppmi, compare_rankings,
                                           inclusion_rate, jaccard, node_strength_topk, persona_rank_divergence)

FIXTURE = [["a", "b", "c"], ["a", "b"], ["b", "c", "d"], ["a", "d"]]


def test_cooccurrence_hand_fixture():
    g = build_cooccurrence(FIXTURE)
    want = np.array([[0, 2, 1, 1],
                     [2, 0, 2, 1],
                     [1, 2, 0, 1],
                     [1, 1, 1, 0]], dtype=float)
    assert g.nodes == ["a", "b", "c", "d"]
    np.testing.assert_array_equal(g.weights, want)
    assert g.strength() == {"a": 4, "b": 5, "c": 4, "d": 3}


def test_ppmi_hand_fixture():
    # row sums a=4, b=5, c=4, d=3 and T = 16 over ordered pairs
    p = build_ppmi(build_cooccurrence(FIXTURE))
    want = {("a", "b"): math.log(1.6), ("a", "c"): 0.0, ("a", "d"): math.log(4 / 3),
            ("b", "c"): math.log(1.6), ("b", "d"): math.log(16 / 15), ("c", "d"): math.log(4 / 3)}
    for (x, y), w in want.items():
        assert p.weight(x, y) == w == p.weight(y, x)
    assert p.n_edges == 5


def test_ppmi_three_node_fixture():
    runs = [["a", "b"], ["a", "b"], ["a", "c"], ["b", "c"]]
    p = build_ppmi(build_cooccurrence(runs))
    assert p.weight("a", "b") == pytest.approx(math.log(16 / 9), abs=1e-15)
    assert p.weight("a", "c") == pytest.approx(math.log(4 / 3), abs=1e-15)
    assert p.weight("b", "c") == pytest.approx(math.log(4 / 3), abs=1e-15)


def test_single_run_edge_count(pool, record_factory):
    g = build_cooccurrence([record_factory(pool.ids[:20])])
    assert g.n_edges == 190
    assert len(g.to_edge_list().splitlines()) == 190


def test_star_network():
    runs = [["hub", f"leaf{i}"] for i in range(6)]
    r = node_strength_topk(build_cooccurrence(runs), k=3)
    assert r.nodes[0] == "hub" and r.strengths["hub"] == 6
    assert r.nodes[1:] == ["leaf0", "leaf1"]


def test_topk_truncation_and_ties():
    r = node_strength_topk(build_cooccurrence(FIXTURE), k=10)
    assert r.nodes == ["b", "a", "c", "d"] and r.truncated
    assert r.rank_of("c") == 3 and r.rank_of("zz") is None


def test_graph_validation():
    with pytest.raises(ValueError):
        WeightedGraph(["a", "b"], [[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        WeightedGraph(["a", "b"], [[1, 1], [1, 0]])
    with pytest.raises(ValueError):
        build_cooccurrence([])
    with pytest.raises(ValueError):
        build_ppmi(build_cooccurrence([["a"], ["b"]]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdefgh"), min_size=2, max_size=6, unique=True), min_size=1, max_size=12))
def test_network_properties(runs):
    c = build_cooccurrence(runs)
    assert np.all(c.weights == c.weights.T) and np.all(c.weights >= 0)
    assert c.weights.max() <= len(runs)
    assert sum(c.strength().values()) == sum(len(r) * (len(r) - 1) for r in runs)
    p = build_ppmi(c)
    assert np.all(p.weights >= 0) and np.all((p.weights > 0) <= (c.weights > 0))


def _ranking(n, offset=0):
    nodes = [f"c{i:03d}" for i in range(offset, offset + n)]
    return Ranking(nodes, {x: float(n - i) for i, x in enumerate(nodes)})


def test_jaccard_reference_rows():
    a = _ranking(100)
    assert round(jaccard(a.set, _ranking(100, 17).set), 2) == 0.71  # overlap 83
    assert round(jaccard(a.set, _ranking(100, 57).set), 2) == 0.27  # overlap 43
    assert jaccard(set(), set()) == 1.0


def test_compare_rankings():
    a = _ranking(30)
    rev = Ranking(list(reversed(a.nodes)), {x: -s for x, s in a.strengths.items()})
    cmp = compare_rankings(a, rev, [a.nodes[:10]], n_perm=500)
    assert cmp.overlap == 30 and cmp.jaccard == 1.0
    assert cmp.spearman_rho == pytest.approx(-1.0)
    assert cmp.spearman_p == pytest.approx(1 / 501)
    same = compare_rankings(a, a, [a.nodes[:10]], n_perm=100)
    assert same.spearman_rho == pytest.approx(1.0)
    assert same.avg_inclusion_cooc == 1.0


def test_inclusion_rate():
    assert inclusion_rate({"a"}, [["a", "b", "c"], ["a", "b"]]) == pytest.approx((1 / 3 + 1 / 2) / 2)
    assert math.isnan(inclusion_rate({"a"}, [[]]))


def test_persona_divergence_reference_gap():
    def rk(position, total=200):
        nodes = [f"x{i}" for i in range(total)]
        nodes.insert(position - 1, "target")
        return Ranking(nodes, {})
    rows = persona_rank_divergence({"Basic": rk(183), "Quality": rk(170), "Creativity": rk(5)})
    t = next(r for r in rows if r.constraint == "target")
    assert (t.rank_B, t.rank_Q, t.rank_C) == (183, 170, 5)
    assert t.avg_BQ == 176.5 and t.delta == 171.5
    assert rows[0].constraint == "target"


def test_persona_divergence_missing_nodes():
    rows = persona_rank_divergence({"Basic": Ranking(["a", "b"], {}), "Quality": Ranking(["a"], {}),
                                    "Creativity": Ranking(["b", "a"], {})})
    b = next(r for r in rows if r.constraint == "b")
    assert b.rank_Q == 3 and b.missing == ("Quality",)
    with pytest.raises(KeyError):
        persona_rank_divergence({"Basic": Ranking(["a"], {})})
