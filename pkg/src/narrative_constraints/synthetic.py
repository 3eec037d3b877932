"""Synthetic authors with known selection propensities.

Selections are drawn by successive weighted sampling without replacement,
implemented as an exponential race: item ``i`` gets arrival time
``E_i / w_i`` with ``E_i ~ Exp(1)`` and the first ``k`` arrivals are taken in
order. This has the same distribution as drawing one item at a time with
probability proportional to the remaining weights.

Inclusion probabilities under this scheme are *not* proportional to the
weights. :func:`inclusion_probabilities` computes them exactly and
:func:`calibrate_profile` solves for weights whose induced per-item rates
match target rate ratios.
"""
from __future__ import annotations

import functools
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate, special

from .conditions import ConditionKind, TaskCondition
from .harness.providers import ProviderRequest, ProviderResponse
from .library import ELEMENTS, CandidateList, ConstraintPool, subset_for_condition


@dataclass
class PreferenceProfile:
    weights: dict[str, float]
    description: str = ""
    free_k_mean: float = 20.0
    reason_phrases: tuple[str, ...] = ()

    def __post_init__(self):
        bad = [cid for cid, w in self.weights.items() if not np.isfinite(w) or w < 0]
        if bad:
            raise ValueError(f"weights must be finite and >= 0: {bad[:5]}")

    def weight_vector(self, ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.weights[cid] for cid in ids], dtype=float)
        except KeyError as exc:
            raise ValueError(f"profile has no weight for constraint {exc.args[0]}") from None

    def to_dict(self) -> dict:
        return {"weights": dict(self.weights), "description": self.description,
                "free_k_mean": self.free_k_mean, "reason_phrases": list(self.reason_phrases)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PreferenceProfile":
        return cls(dict(d["weights"]), d.get("description", ""), float(d.get("free_k_mean", 20.0)),
                   tuple(d.get("reason_phrases", ())))


def profile_from_rates(element_rr: Mapping[str, float], category_rr: Mapping | None = None,
                       baseline: str = "Event", pool: ConstraintPool | None = None) -> PreferenceProfile:
    """Weights = element RR x within-element category RR, uniform inside a category.

    ``category_rr`` maps ``(element, category)`` or plain category name to a
    ratio; missing entries default to 1.
    """
    from .library import load_library

    pool = pool or load_library()
    rr = {e: float(element_rr.get(e, 1.0)) for e in ELEMENTS}
    if any(v <= 0 for v in rr.values()):
        raise ValueError(f"rate ratios must be positive: {rr}")
    if abs(rr[baseline] - 1.0) > 1e-12:
        raise ValueError(f"baseline element {baseline} must have RR 1, got {rr[baseline]}")
    cat = dict(category_rr or {})
    weights = {}
    for c in pool:
        crr = float(cat.get((c.element, c.category), cat.get(c.category, 1.0)))
        if crr <= 0:
            raise ValueError(f"category rate ratio for {c.category} must be positive")
        weights[c.id] = rr[c.element] * crr
    desc = "element RR " + ", ".join(f"{e}={rr[e]:g}" for e in ELEMENTS)
    return PreferenceProfile(weights, desc)


def sample_order(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` items drawn successively with probability proportional to weight."""
    weights = np.asarray(weights, dtype=float)
    positive = np.flatnonzero(weights > 0)
    if k > positive.size:
        raise ValueError(f"need {k} positive-weight candidates, have {positive.size}")
    if k == 0:
        return np.empty(0, dtype=int)
    arrival = rng.exponential(size=positive.size) / weights[positive]
    first = np.argpartition(arrival, k - 1)[:k]
    return positive[first[np.argsort(arrival[first], kind="stable")]]


def _binom_prefix(n: int, q: float, kmax: int) -> np.ndarray:
    """Binomial(n, q) pmf at 0..kmax; built from ufuncs since this runs inside quad."""
    j = np.arange(min(kmax, n) + 1)
    logpmf = (special.gammaln(n + 1) - special.gammaln(j + 1) - special.gammaln(n - j + 1)
              + special.xlogy(j, q) + special.xlog1py(n - j, -q))
    out = np.zeros(kmax + 1)
    out[:j.size] = np.exp(logpmf)
    return out


def inclusion_probabilities(weights: Sequence[float], k: int) -> np.ndarray:
    """Exact inclusion probabilities for successive weighted sampling of ``k`` items.

    Uses the exponential-race representation: item ``i`` is included iff fewer
    than ``k`` other items arrive before it, integrated over its arrival time.
    """
    w = np.asarray(weights, dtype=float)
    n = w.size
    if not 0 <= k <= np.count_nonzero(w > 0):
        raise ValueError("k out of range")
    if k == 0:
        return np.zeros(n)
    uniq, inverse, counts = np.unique(w, return_inverse=True, return_counts=True)
    probs = np.zeros(uniq.size)
    for g, wg in enumerate(uniq):
        if wg <= 0:
            continue

        def integrand(t, g=g, wg=wg):
            pmf = np.zeros(k)
            pmf[0] = 1.0
            for h, wh in enumerate(uniq):
                m = counts[h] - (1 if h == g else 0)
                if m == 0 or wh <= 0:
                    continue
                q = -np.expm1(-wh * t)
                pmf = np.convolve(pmf, _binom_prefix(m, q, k - 1))[:k]
            return wg * np.exp(-wg * t) * pmf.sum()

        val, _ = integrate.quad(integrand, 0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=500)
        probs[g] = val
    return probs[inverse]


def calibrate_profile(targets: PreferenceProfile, ids: Sequence[str], k: int, tol: float = 1e-10,
                      max_iter: int = 200) -> PreferenceProfile:
    """Return weights whose induced inclusion probabilities are proportional to ``targets``.

    ``targets.weights`` are read as desired per-item rate ratios for a single
    pool ``ids`` sampled ``k`` at a time.
    """
    target = targets.weight_vector(ids)
    if np.any(target <= 0):
        raise ValueError("calibration needs strictly positive targets")
    w = _calibrated_weights(tuple(target.tolist()), k, tol, max_iter)
    weights = dict(targets.weights)
    weights.update(zip(ids, w.tolist()))
    return PreferenceProfile(weights, f"{targets.description} (calibrated for k={k})",
                             targets.free_k_mean, targets.reason_phrases)


@functools.lru_cache(maxsize=64)
def _calibrated_weights(target: tuple, k: int, tol: float, max_iter: int) -> np.ndarray:
    # fixed point of w <- w * target_share / induced_share
    target = np.array(target)
    w = target.copy()
    for _ in range(max_iter):
        p = inclusion_probabilities(w, k)
        ratio = (target / target.sum()) / (p / p.sum())
        w = w * ratio
        w /= w.min()
        if np.max(np.abs(ratio - 1)) < tol:
            break
    else:
        raise RuntimeError("weight calibration did not converge")
    w.flags.writeable = False
    return w


def _draw_list(profile: PreferenceProfile, cl: CandidateList, k: int, rng: np.random.Generator) -> list:
    w = profile.weight_vector(cl.ids)
    return [cl.constraints[i] for i in sample_order(w, k, rng)]


def select(profile: PreferenceProfile, lists: Sequence[CandidateList], condition: TaskCondition,
           rng: np.random.Generator) -> list:
    """Draw constraints from the presented lists according to the condition's budget."""
    kind = condition.kind
    if condition.element_wise:
        picks = []
        for cl in lists:
            if kind is ConditionKind.C1_2:
                k = condition.per_element_k
            else:
                k = min(int(rng.poisson(profile.free_k_mean / len(lists))), len(cl))
            picks += _draw_list(profile, cl, k, rng)
        return picks
    (cl,) = lists
    if condition.quota is not None:
        picks = []
        for element in ELEMENTS:
            sub = CandidateList(tuple(c for c in cl.constraints if c.element == element))
            picks += _draw_list(profile, sub, condition.quota, rng)
        return picks
    if condition.total_k is not None:
        k = condition.total_k
    else:
        k = min(int(rng.poisson(profile.free_k_mean)), len(cl))
    return _draw_list(profile, cl, k, rng)


def render_response(constraints: Sequence, profile: PreferenceProfile, rng: np.random.Generator) -> str:
    items = []
    for c in constraints:
        phrase = ""
        if profile.reason_phrases:
            phrase = " " + profile.reason_phrases[int(rng.integers(len(profile.reason_phrases)))]
        items.append({"constraint": c.text,
                      "reason": f"This {c.category.lower()} constraint shapes the {c.element.lower()} of the story.{phrase}"})
    counts = Counter(c.element for c in constraints)
    summary = ", ".join(f"{counts.get(e, 0)} {e.lower()}" for e in ELEMENTS)
    items.append({"compatibility": f"The selection combines {summary} constraints that support one another."})
    return "```json\n" + json.dumps(items, ensure_ascii=False, indent=2) + "\n```"


def sample_run(profile: PreferenceProfile, pool: ConstraintPool, condition: TaskCondition, seed: int,
               lists: Sequence[CandidateList] | None = None) -> str:
    """Simulated raw response in the wire format the parser expects."""
    rng = np.random.default_rng(seed)
    lists = list(lists) if lists is not None else subset_for_condition(pool, condition)
    return render_response(select(profile, lists, condition, rng), profile, rng)


class SyntheticProvider:
    """Provider backed by preference profiles keyed by ``(model, persona)`` or ``model``."""

    name = "synthetic"

    def __init__(self, profiles: Mapping, pool: ConstraintPool, default: PreferenceProfile | None = None):
        self.profiles = dict(profiles)
        self.pool = pool
        self.default = default

    def profile_for(self, model: str, persona: str | None) -> PreferenceProfile:
        for key in ((model, persona), model):
            if key in self.profiles:
                return self.profiles[key]
        if self.default is None:
            raise KeyError(f"no synthetic profile for model {model!r}")
        return self.default

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        persona = _persona_from_system(request.system_text)
        profile = self.profile_for(request.model, persona)
        text = sample_run(profile, self.pool, request.condition, request.seed, request.candidates)
        return ProviderResponse(text, {"provider": "synthetic", "profile": profile.description})


def _persona_from_system(system_text: str) -> str | None:
    from .conditions import SYSTEM_PROMPTS

    for kind, text in SYSTEM_PROMPTS.items():
        if text == system_text:
            return kind.value
    return None


def simulate_selections(weights: np.ndarray, k: int, n_runs: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean (n_runs, n_items) inclusion matrix for ``n_runs`` pooled draws of ``k``."""
    w = np.asarray(weights, dtype=float)
    if k > np.count_nonzero(w > 0):
        raise ValueError(f"need {k} positive-weight candidates, have {np.count_nonzero(w > 0)}")
    with np.errstate(divide="ignore"):
        arrival = rng.exponential(size=(n_runs, w.size)) / w
    cut = np.partition(arrival, k - 1, axis=1)[:, k - 1:k]
    return arrival <= cut


def simulate_counts_table(profiles: Mapping, pool: ConstraintPool, runs_per_cell: int, seed: int,
                          k: int = 20, grain: str = "element", experiment_id: str = "sim"):
    """Fast path to a counts table for pooled fixed-budget runs.

    ``profiles`` maps ``(model, persona)`` to a profile. Equivalent in
    distribution to running the harness with :class:`SyntheticProvider` under
    condition 2-2, without prompt rendering and parsing.
    """
    from .stats.counts import RunCountsTable

    rng = np.random.default_rng(seed)
    ids = pool.ids
    elements = np.array([pool[c].element for c in ids])
    cats = np.array([f"{pool[c].element}/{pool[c].category}" for c in ids])
    cols = {c: [] for c in RunCountsTable.COLUMNS}
    for (model, persona), profile in sorted(profiles.items()):
        sel = simulate_selections(profile.weight_vector(ids), k, runs_per_cell, rng)
        run_ids = [f"{experiment_id}/{model}/{persona}/2-2/{r:04d}" for r in range(runs_per_cell)]
        if grain == "element":
            groups = [(e, e, elements == e) for e in ELEMENTS]
            for r, rid in enumerate(run_ids):
                for e, cell, mask in groups:
                    _append(cols, rid, model, persona, e, cell, sel[r, mask].sum(), k, mask.sum(), len(ids))
        else:
            for r, rid in enumerate(run_ids):
                for e in ELEMENTS:
                    emask = elements == e
                    K = int(sel[r, emask].sum())
                    if K == 0:
                        continue
                    for cell in dict.fromkeys(cats[emask]):
                        m = cats == cell
                        _append(cols, rid, model, persona, e, cell, sel[r, m].sum(), K, m.sum(), emask.sum())
    str_cols = [np.array(cols[c], dtype=object) for c in RunCountsTable.COLUMNS[:6]]
    num_cols = [np.array(cols[c], dtype=float) for c in RunCountsTable.COLUMNS[6:]]
    return RunCountsTable(grain, *str_cols, *num_cols)


def _append(cols, rid, model, persona, element, cell, y, K, n, N):
    for key, v in zip(("run_id", "model", "persona", "condition", "element", "cell", "y", "K", "n", "N"),
                      (rid, model, persona, "2-2", element, cell, y, K, n, N)):
        cols[key].append(v)
