"""Constraint-level over/under-selection tests and axis enrichment.

Within an analysis slice (one model x persona by default) the null keeps each
run's budget ``K_u`` and candidate pool fixed and redraws its ``K_u``
selections uniformly from that pool. Observed counts ``Y_c`` are compared to
``E[Y_c] = sum_u K_u n_cu / N_u``.
"""
from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .library import Axis, ConstraintPool
from .stats.fdr import bh_fdr

TIE_EPS = 1e-9
DEFAULT_SLICE = ("model", "persona")


@dataclass
class PermutationResult:
    constraint: str
    model: str
    persona: str
    element: str
    category: str
    y_obs: int
    e_exp: float
    share_obs: float
    share_exp: float
    rd_share: float
    rr_smoothed: float
    p_two: float
    p_over: float
    p_under: float
    n_runs: int
    B: int
    q: float = float("nan")
    flagged: bool = False
    via: str = ""

    @property
    def stratum(self) -> tuple[str, str, str, str]:
        return (self.model, self.persona, self.element, self.category)

    @property
    def direction(self) -> str:
        if self.share_obs > self.share_exp:
            return "over"
        if self.share_obs < self.share_exp:
            return "under"
        return "none"


class _Slice:
    """Availability matrix, budgets and observed selections of a set of runs."""

    def __init__(self, runs: Sequence, ids: list[str]):
        index = {c: i for i, c in enumerate(ids)}
        U, C = len(runs), len(ids)
        self.avail = np.zeros((U, C), dtype=bool)
        self.chosen = np.zeros((U, C), dtype=bool)
        for u, r in enumerate(runs):
            self.avail[u, [index[c] for c in (r.permutation or ids)]] = True
            self.chosen[u, [index[c] for c in r.selections]] = True
        self.K = self.chosen.sum(axis=1)
        self.N = self.avail.sum(axis=1)
        if np.any(self.N == 0):
            raise ValueError("a run has an empty candidate pool (N_u = 0)")
        if np.any(self.chosen & ~self.avail):
            raise ValueError("a run selected a constraint it was not shown")

    def expected(self) -> np.ndarray:
        return (self.K / self.N) @ self.avail

    def observed(self) -> np.ndarray:
        return self.chosen.sum(axis=0)

    def null_counts(self, B: int, rng: np.random.Generator, chunk_elems: int = 4_000_000) -> np.ndarray:
        """(B, C) matrix of null selection counts."""
        active = self.K > 0
        avail, K = self.avail[active], self.K[active]
        U, C = avail.shape
        out = np.zeros((B, C), dtype=np.int64)
        if U == 0:
            return out
        chunk = max(1, chunk_elems // (U * C))
        for start in range(0, B, chunk):
            b = min(chunk, B - start)
            keys = rng.random((b, U, C))
            keys[:, ~avail] = np.inf
            part = np.partition(keys, K.max() - 1, axis=2) if K.min() == K.max() else np.sort(keys, axis=2)
            thr = np.take_along_axis(part, np.broadcast_to((K - 1)[None, :, None], (b, U, 1)), axis=2)
            out[start:start + b] = (keys <= thr).sum(axis=1)
        return out


def expected_counts(runs: Iterable, pool: ConstraintPool | None = None) -> dict[str, float]:
    """``E[Y_c] = sum_u K_u n_cu / N_u`` over the given runs."""
    runs = list(runs)
    ids = pool.ids if pool is not None else sorted({c for r in runs for c in (r.permutation or r.selections)})
    sl = _Slice(runs, ids)
    return dict(zip(ids, sl.expected().tolist()))


def _slices(runs: Sequence, slice_by: Sequence[str]) -> dict:
    groups = defaultdict(list)
    for r in sorted(runs, key=lambda r: r.run_id):
        groups[tuple(getattr(r, f) for f in slice_by)].append(r)
    return dict(sorted(groups.items()))


def permutation_test(runs: Iterable, pool: ConstraintPool, B: int = 2000, seed: int = 0,
                     slice_by: Sequence[str] = DEFAULT_SLICE) -> list[PermutationResult]:
    """Supply-adjusted permutation p-values for every constraint in every slice.

    Each slice gets its own child seed, so results do not depend on the order
    or parallelism in which slices are processed.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    runs = [r for r in runs]
    if not runs:
        raise ValueError("no runs to test")
    ids = pool.ids
    results = []
    groups = _slices(runs, slice_by)
    children = np.random.SeedSequence(seed).spawn(len(groups))
    for (key, members), ss in zip(groups.items(), children):
        if not members:
            raise ValueError(f"stratum {key} has no runs")
        sl = _Slice(members, ids)
        rng = np.random.default_rng(ss)
        E = sl.expected()
        Y = sl.observed()
        null = sl.null_counts(B, rng)
        dev_obs = np.abs(Y - E)
        p_two = (1 + np.sum(np.abs(null - E) >= dev_obs - TIE_EPS, axis=0)) / (B + 1)
        p_over = (1 + np.sum(null >= Y, axis=0)) / (B + 1)
        p_under = (1 + np.sum(null <= Y, axis=0)) / (B + 1)
        total = sl.K.sum()
        share_obs = Y / total if total else np.zeros_like(E)
        share_exp = E / total if total else np.zeros_like(E)
        model = members[0].model
        persona = members[0].persona
        for i, cid in enumerate(ids):
            c = pool[cid]
            results.append(PermutationResult(
                cid, model if "model" in slice_by else "*", persona if "persona" in slice_by else "*",
                c.element, c.category, int(Y[i]), float(E[i]), float(share_obs[i]), float(share_exp[i]),
                float(share_obs[i] - share_exp[i]), float((Y[i] + 0.5) / (E[i] + 0.5)),
                float(p_two[i]), float(p_over[i]), float(p_under[i]), len(members), B,
            ))
    return results


def flag_significant(results: Sequence[PermutationResult], q_threshold: float = 0.10, fallback_p: float = 0.05,
                     min_runs: int = 5, min_distinct: int = 2) -> list[PermutationResult]:
    """BH within each model x persona x element x category stratum.

    A stratum is degenerate when it has fewer than ``min_distinct`` distinct
    p-values or fewer than ``min_runs`` runs; there the raw ``p_two <=
    fallback_p`` rule applies. Sets ``q``, ``flagged`` and ``via`` in place and
    returns the flagged subset.
    """
    strata = defaultdict(list)
    for r in results:
        strata[r.stratum].append(r)
    flagged = []
    for key in sorted(strata):
        members = strata[key]
        p = np.array([r.p_two for r in members])
        degenerate = np.unique(p).size < min_distinct or min(r.n_runs for r in members) < min_runs
        q = p.copy() if degenerate else bh_fdr(p)
        for r, qq in zip(members, q):
            r.q = float(qq)
            if degenerate:
                r.flagged, r.via = bool(r.p_two <= fallback_p), "fallback"
            else:
                r.flagged, r.via = bool(qq <= q_threshold), "bh"
            r.flagged = r.flagged and r.direction != "none"
            if r.flagged:
                flagged.append(r)
    return flagged


@dataclass
class AxisEnrichment:
    group: tuple
    direction: str
    axis: str
    label: str
    category: str
    dimension: str
    support: int
    share: float
    baseline: float
    enrichment: float

    def row(self, group_names: Sequence[str]) -> dict:
        d = dict(zip(group_names, self.group))
        d.update({k: v for k, v in asdict(self).items() if k != "group"})
        return d


def _annotations(cids: Iterable[str], pool: ConstraintPool) -> Counter:
    counts = Counter()
    for cid in cids:
        for a in pool[cid].axes:
            counts[a] += 1
    return counts


def pool_axis_baseline(pool: ConstraintPool) -> dict[Axis, float]:
    counts = _annotations(pool.ids, pool)
    total = sum(counts.values())
    return {a: n / total for a, n in counts.items()}


def axis_enrichment(flagged: Sequence, pool: ConstraintPool, grouping: Sequence[str] = ("model", "persona"),
                    baseline: str | Mapping = "pool", top_k: int | None = None,
                    min_support: int = 1) -> list[AxisEnrichment]:
    """Axis shares among flagged constraints, per group and direction.

    ``baseline`` is ``"pool"`` (share over all library annotations),
    ``"flagged"`` (share over every flagged constraint in that direction,
    across groups), or an explicit mapping ``(direction, axis key) -> share``.
    Flagged constraints count with multiplicity, so a constraint flagged in
    several groups pooled together contributes once per group.
    """
    if not flagged:
        return []
    by_group = defaultdict(list)
    for r in flagged:
        by_group[tuple(getattr(r, g) for g in grouping) + (r.direction,)].append(r.constraint)
    pool_base = pool_axis_baseline(pool)
    dir_base = {}
    if baseline == "flagged":
        for d in {r.direction for r in flagged}:
            counts = _annotations([r.constraint for r in flagged if r.direction == d], pool)
            total = sum(counts.values())
            dir_base[d] = {a: n / total for a, n in counts.items()}
    out = []
    for key in sorted(by_group):
        *group, direction = key
        cids = by_group[key]
        counts = _annotations(cids, pool)
        total = sum(counts.values())
        support = Counter()
        for cid in cids:
            for a in set(pool[cid].axes):
                support[a] += 1
        rows = []
        for a, n in counts.items():
            if baseline == "pool":
                base = pool_base[a]
            elif baseline == "flagged":
                base = dir_base[direction][a]
            else:
                base = baseline.get((direction, a.key), baseline.get(a.key))
                if base is None:
                    raise KeyError(f"no baseline share for axis {a.key} ({direction})")
            if support[a] < min_support:
                continue
            share = n / total
            rows.append(AxisEnrichment(tuple(group), direction, a.key, a.label, a.category, a.dimension,
                                       support[a], share, base, share / base))
        rows.sort(key=lambda r: (-r.enrichment, -r.support, r.axis))
        out.extend(rows[:top_k] if top_k else rows)
    return out


def _tsv(header: Sequence[str], rows: Iterable[Sequence], params: dict | None = None) -> str:
    from .stats.contrasts import fmt

    buf = io.StringIO()
    for k, v in sorted((params or {}).items()):
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


RESULT_COLUMNS = ("model", "persona", "element", "category", "constraint", "direction", "y_obs", "e_exp",
                  "share_obs", "share_exp", "rd_share", "rr_smoothed", "p_two", "p_over", "p_under", "q",
                  "via", "n_runs", "B")


def results_to_tsv(results: Sequence[PermutationResult], params: dict | None = None) -> str:
    rows = sorted(results, key=lambda r: (r.stratum, r.constraint))
    return _tsv(RESULT_COLUMNS, ([getattr(r, c) for c in RESULT_COLUMNS] for r in rows), params)


def enrichment_to_tsv(rows: Sequence[AxisEnrichment], grouping: Sequence[str] = ("model", "persona"),
                      params: dict | None = None) -> str:
    cols = list(grouping) + ["direction", "category", "dimension", "axis", "label", "support", "enrichment",
                             "share_pct", "global_pct"]
    body = ([*r.group, r.direction, r.category, r.dimension, r.axis, r.label, r.support, r.enrichment,
             100 * r.share, 100 * r.baseline] for r in rows)
    return _tsv(cols, body, params)
