"""Co-occurrence and PPMI networks over selected constraints."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats


@dataclass
class WeightedGraph:
    nodes: list[str]
    weights: np.ndarray  # symmetric, zero diagonal
    kind: str = "cooccurrence"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        n = len(self.nodes)
        if self.weights.shape != (n, n):
            raise ValueError("weight matrix does not match node list")
        if not np.allclose(self.weights, self.weights.T):
            raise ValueError("weights must be symmetric")
        if np.any(np.diag(self.weights) != 0):
            raise ValueError("self-loops are not allowed")

    def index(self, node: str) -> int:
        return self.nodes.index(node)

    def weight(self, a: str, b: str) -> float:
        return float(self.weights[self.index(a), self.index(b)])

    def edges(self) -> list[tuple[str, str, float]]:
        i, j = np.nonzero(np.triu(self.weights, 1))
        return [(self.nodes[a], self.nodes[b], float(self.weights[a, b])) for a, b in zip(i, j)]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.weights, 1)))

    def strength(self) -> dict[str, float]:
        return dict(zip(self.nodes, self.weights.sum(axis=1).tolist()))

    def to_edge_list(self, digits: int = 6) -> str:
        buf = io.StringIO()
        for a, b, w in sorted(self.edges()):
            buf.write(f"{a}\t{b}\t{w:.{digits}f}\n")
        return buf.getvalue()


def _selections(runs) -> list[list[str]]:
    out = []
    for r in runs:
        out.append(list(r.selections) if hasattr(r, "selections") else list(r))
    return out


def build_cooccurrence(runs: Iterable, nodes: Sequence[str] | None = None) -> WeightedGraph:
    """``weight(i, j)`` = number of runs selecting both ``i`` and ``j``.

    ``runs`` are RunRecords or plain iterables of constraint ids. Nodes
    default to every selected id, sorted.
    """
    sels = _selections(runs)
    if not sels:
        raise ValueError("no runs to build a network from")
    nodes = list(nodes) if nodes is not None else sorted({c for s in sels for c in s})
    index = {c: i for i, c in enumerate(nodes)}
    M = np.zeros((len(sels), len(nodes)))
    for u, s in enumerate(sels):
        M[u, [index[c] for c in set(s)]] = 1.0
    W = M.T @ M
    np.fill_diagonal(W, 0.0)
    return WeightedGraph(nodes, W, "cooccurrence")


def build_ppmi(cooc: WeightedGraph, runs=None) -> WeightedGraph:
    """Positive PMI from pair totals.

    With ``T`` the sum of ``C`` over ordered pairs, ``p(i,j) = C_ij / T`` and
    ``p(i) = sum_j C_ij / T``; ``PPMI = max(0, ln p(i,j) / (p(i) p(j)))``.
    ``runs`` is accepted for interface symmetry and unused.
    """
    C = cooc.weights
    T = C.sum()
    if T <= 0:
        raise ValueError("co-occurrence graph has no pairs")
    row = C.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(C * T / np.outer(row, row))
    P = np.where(C > 0, np.maximum(pmi, 0.0), 0.0)
    np.fill_diagonal(P, 0.0)
    return WeightedGraph(list(cooc.nodes), P, "ppmi")


@dataclass
class Ranking:
    nodes: list[str]
    strengths: dict[str, float]
    truncated: bool = False  # k exceeded the node count

    def __len__(self):
        return len(self.nodes)

    @property
    def set(self) -> set[str]:
        return set(self.nodes)

    def rank_of(self, node: str) -> int | None:
        try:
            return self.nodes.index(node) + 1
        except ValueError:
            return None


def node_strength_topk(graph: WeightedGraph, k: int = 100) -> Ranking:
    """Nodes by descending strength; ties broken by id (plain string order)."""
    if not graph.nodes:
        raise ValueError("graph has no nodes")
    s = graph.strength()
    order = sorted(s, key=lambda n: (-s[n], n))
    return Ranking(order[:k], s, truncated=k > len(order))


@dataclass
class RankingComparison:
    overlap: int
    jaccard: float
    spearman_rho: float
    spearman_p: float
    avg_inclusion_cooc: float
    avg_inclusion_ppmi: float
    n_union: int = 0


def jaccard(a: set, b: set) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 1.0


def inclusion_rate(nodes: set, runs) -> float:
    """Mean over runs of ``|nodes & selections| / K``; runs with K = 0 skipped."""
    rates = [len(nodes & set(s)) / len(s) for s in _selections(runs) if len(s)]
    return float(np.mean(rates)) if rates else float("nan")


def compare_rankings(cooc_top: Ranking, ppmi_top: Ranking, runs, n_perm: int = 2000, seed: int = 0
                     ) -> RankingComparison:
    """Overlap, Jaccard, Spearman and inclusion rates for two top-k rankings.

    Spearman uses the full strengths of both networks over the union of the
    two top-k sets (missing nodes count as strength 0); its p-value is a
    two-sided permutation p with ``n_perm`` shuffles.
    """
    if not len(cooc_top) or not len(ppmi_top):
        raise ValueError("empty ranking")
    a, b = cooc_top.set, ppmi_top.set
    union = sorted(a | b)
    x = np.array([cooc_top.strengths.get(n, 0.0) for n in union])
    y = np.array([ppmi_top.strengths.get(n, 0.0) for n in union])
    rho, p = _spearman_perm(x, y, n_perm, seed)
    return RankingComparison(len(a & b), jaccard(a, b), rho, p, inclusion_rate(a, runs), inclusion_rate(b, runs),
                             len(union))


def _spearman_perm(x, y, n_perm: int, seed: int):
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan"), float("nan")
    rx, ry = stats.rankdata(x), stats.rankdata(y)
    rho = float(np.corrcoef(rx, ry)[0, 1])
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((n_perm, ry.size)), axis=1)
    ryc = ry - ry.mean()
    rxc = rx - rx.mean()
    null = (ryc[perms] @ rxc) / np.sqrt((rxc @ rxc) * (ryc @ ryc))
    p = (1 + np.sum(np.abs(null) >= abs(rho) - 1e-12)) / (n_perm + 1)
    return rho, float(p)


@dataclass
class RankDivergence:
    constraint: str
    rank_B: int
    rank_Q: int
    rank_C: int
    avg_BQ: float
    delta: float
    missing: tuple = ()


def persona_rank_divergence(rankings: Mapping[str, Ranking], top: int | None = None) -> list[RankDivergence]:
    """Rank gap between the Creativity ranking and the mean of Basic and Quality.

    ``rankings`` maps persona name to a full frequency-hub ranking. A node
    absent from a ranking gets rank ``len(nodes) + 1`` and is listed in
    ``missing``.
    """
    keys = {"Basic": None, "Quality": None, "Creativity": None}
    for k in keys:
        if k not in rankings:
            raise KeyError(f"missing {k} ranking")
    nodes = sorted(set().union(*(r.set for r in rankings.values())))
    fill = len(nodes) + 1
    out = []
    for n in nodes:
        ranks, missing = {}, []
        for k in keys:
            rk = rankings[k].rank_of(n)
            if rk is None:
                rk = fill
                missing.append(k)
            ranks[k] = rk
        avg = (ranks["Basic"] + ranks["Quality"]) / 2
        out.append(RankDivergence(n, ranks["Basic"], ranks["Quality"], ranks["Creativity"], avg,
                                  abs(avg - ranks["Creativity"]), tuple(missing)))
    out.sort(key=lambda r: (-r.delta, r.constraint))
    return out[:top] if top else out
