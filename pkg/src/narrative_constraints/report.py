"""Analysis tables written from a run log.

Every table is a tab-separated file whose ``#`` header lines record the
parameters used. Records are sorted by run id and floats are printed with
fixed precision, so the same log and parameters give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .library import ELEMENTS, ConstraintPool
from .stats.contrasts import Contrast, baseline_family, fmt, pairwise_family, rr_contrasts
from .stats.counts import EmptyTableError, build_counts_table
from .stats.gee import ConvergenceError, dispersion_diagnostics, fit_poisson_gee
from .stats.linear import condition_contrast, fit_condition_model, wald_heterogeneity
from .conditions import PLANNED_CONTRASTS

ANALYSES = ("elements", "categories", "conditions", "axes", "network", "reasoning")
REPORT_SCHEMA_VERSION = 1


class PrerequisiteError(RuntimeError):
    def __init__(self, analysis: str, message: str):
        super().__init__(f"{analysis}: {message}")
        self.analysis = analysis


def tsv(header: Sequence[str], rows: Iterable[Sequence], params: dict | None = None) -> str:
    buf = io.StringIO()
    for k, v in sorted((params or {}).items()):
        buf.write(f"# {k}={json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else v}\n")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


class _Writer:
    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, list[str]] = defaultdict(list)

    def write(self, analysis: str, name: str, text: str) -> None:
        (self.out / name).write_text(text, "utf-8")
        self.files[analysis].append(name)


def _fixed_budget_runs(records, analysis: str, condition: str = "2-2", min_runs: int = 2):
    runs = [r for r in records if r.valid and r.condition == condition]
    if len(runs) < min_runs:
        raise PrerequisiteError(analysis, f"needs at least {min_runs} valid condition-{condition} runs, "
                                          f"found {len(runs)}")
    return runs


def _gee_rows(fit, results, scope: dict):
    for r in results:
        yield [scope.get("model", "*"), scope.get("persona", "*"), r.label, r.estimate, r.ci_low, r.ci_high,
               r.p, r.q, r.delta_pct, r.reported]


RR_HEADER = ["model", "persona", "contrast", "rr", "ci_low", "ci_high", "p", "q", "delta_pct", "reported"]


def _fit_with_fallback(table, corr, offset):
    try:
        return fit_poisson_gee(table, offset=offset, corr=corr), corr
    except (ConvergenceError, np.linalg.LinAlgError):
        if corr == "independence":
            raise
        return fit_poisson_gee(table, offset=offset, corr="independence"), "independence"


def analyze_elements(records, pool: ConstraintPool, w: _Writer, params: dict) -> dict:
    runs = _fixed_budget_runs(records, "elements")
    table = build_counts_table(runs, pool, "element")
    fit, corr = _fit_with_fallback(table, params["corr"], params["offset"])
    rows = []
    fam = baseline_family(fit.design.cells, "Event")
    rows += list(_gee_rows(fit, rr_contrasts(fit, fam, params["q"], params["delta_floor"]), {}))
    for factor in fit.design.factors:
        for level in fit.design.factors[factor]:
            fam = baseline_family(fit.design.cells, "Event", **{factor: level})
            res = rr_contrasts(fit, fam, params["q"], params["delta_floor"])
            rows += list(_gee_rows(fit, res, {factor: level}))
    disp = dispersion_diagnostics(fit)
    meta = dict(params, corr_used=corr, alpha=round(fit.alpha, 6), phi=round(fit.phi, 6),
                clusters=fit.n_clusters, rows=fit.n_obs, iterations=fit.iterations,
                pearson_chi2_per_df=round(disp["pearson_chi2_per_df"], 6),
                deviance_per_df=round(disp["deviance_per_df"], 6), dropped=fit.dropped)
    w.write("elements", "elements_rr.tsv", tsv(RR_HEADER, rows, meta))
    return meta


def analyze_categories(records, pool: ConstraintPool, w: _Writer, params: dict) -> dict:
    runs = _fixed_budget_runs(records, "categories")
    table = build_counts_table(runs, pool, "category")
    rows, meta = [], dict(params)
    for e in ELEMENTS:
        sub = table.where(element=e)
        if len(sub) == 0:
            continue
        fit, corr = _fit_with_fallback(sub, params["corr"], params["offset"])
        res = rr_contrasts(fit, pairwise_family(fit.design.cells), params["q"], params["delta_floor"])
        for r in res:
            rows.append([e, r.label, r.estimate, r.ci_low, r.ci_high, r.p, r.q, r.delta_pct, r.reported])
        meta[f"{e}.corr_used"] = corr
        meta[f"{e}.clusters"] = fit.n_clusters
    w.write("categories", "categories_rr.tsv",
            tsv(["element", "contrast", "rr", "ci_low", "ci_high", "p", "q", "delta_pct", "reported"], rows, meta))
    return meta


def analyze_conditions(records, pool: ConstraintPool, w: _Writer, params: dict) -> dict:
    try:
        table = build_counts_table(records, pool, "category")
    except EmptyTableError as exc:
        raise PrerequisiteError("conditions", str(exc)) from exc
    present = set(table.condition.tolist())
    rows, wald_rows, notes = [], [], set()
    done = []
    for a, b in PLANNED_CONTRASTS:
        if a.value not in present or b.value not in present:
            continue
        done.append(f"{a.value} vs {b.value}")
        for weighting in params["weighting"]:
            res = condition_contrast(table, (a, b), weighting)
            notes.update(res.notes)
            for r in res:
                rows.append([f"{a.value} vs {b.value}", weighting, r.label, r.estimate, r.ci_low, r.ci_high,
                             r.p, r.q])
            if len(set(table.where(condition=[a.value, b.value]).model.tolist())) > 1:
                fit = fit_condition_model(table, (a, b), weighting, by_model=True)
                wt = wald_heterogeneity(fit, ":D:model[")
                wald_rows.append([f"{a.value} vs {b.value}", weighting, wt["statistic"], wt["df"], wt["p"]])
    if not done:
        raise PrerequisiteError("conditions", "no planned contrast has both conditions in the log")
    meta = dict(params, notes=sorted(notes))
    w.write("conditions", "conditions_rd.tsv",
            tsv(["contrast", "weighting", "cell", "rd_pp", "ci_low", "ci_high", "p", "q"], rows, meta))
    w.write("conditions", "conditions_wald.tsv",
            tsv(["contrast", "weighting", "statistic", "df", "p"], wald_rows, meta))
    return meta


def analyze_axes(records, pool: ConstraintPool, w: _Writer, params: dict, seed: int) -> dict:
    from .permutation import axis_enrichment, enrichment_to_tsv, flag_significant, permutation_test, results_to_tsv

    runs = _fixed_budget_runs(records, "axes")
    results = permutation_test(runs, pool, B=int(params["B"]), seed=seed)
    flagged = flag_significant(results, params["q"], params["fallback_p"])
    meta = dict(params, seed=seed, flagged=len(flagged))
    w.write("axes", "axes_permutation.tsv", results_to_tsv(results, meta))
    grouping = ("model", "persona")
    enr = axis_enrichment(flagged, pool, grouping, baseline=params["baseline"], top_k=params["top_k"])
    w.write("axes", "axes_enrichment.tsv", enrichment_to_tsv(enr, grouping, meta))
    # heatmap-ready: rows = group x direction, columns = axes seen anywhere
    axes = sorted({e.axis for e in enr})
    keyed = defaultdict(dict)
    for e in enr:
        keyed[(*e.group, e.direction)][e.axis] = e.enrichment
    mrows = [[*k, *(keyed[k].get(a, 0.0) for a in axes)] for k in sorted(keyed)]
    w.write("axes", "axes_enrichment_matrix.tsv", tsv([*grouping, "direction", *axes], mrows, meta))
    return meta


def analyze_network(records, pool: ConstraintPool, w: _Writer, params: dict, seed: int) -> dict:
    from .network import build_cooccurrence, build_ppmi, compare_rankings, node_strength_topk, persona_rank_divergence

    runs = [r for r in _fixed_budget_runs(records, "network") if len(r.selections) >= 2]
    slices = defaultdict(list)
    for r in runs:
        slices[(r.model, r.persona)].append(r)
    if not slices or any(len(v) < 2 for v in slices.values()):
        raise PrerequisiteError("network", "every model x persona slice needs at least 2 runs with 2+ selections")
    k = int(params["top_k"])
    rows, rankings = [], defaultdict(dict)
    for key in sorted(slices):
        members = slices[key]
        cooc = build_cooccurrence(members, pool.ids)
        ppmi = build_ppmi(cooc)
        top_c, top_p = node_strength_topk(cooc, k), node_strength_topk(ppmi, k)
        cmp = compare_rankings(top_c, top_p, members, int(params["n_perm"]), seed)
        rows.append([*key, len(members), cmp.overlap, cmp.jaccard, cmp.spearman_rho, cmp.spearman_p,
                     cmp.avg_inclusion_cooc, cmp.avg_inclusion_ppmi])
        rankings[key[0]][key[1]] = node_strength_topk(cooc, len(pool))
        w.write("network", f"network_{key[0]}_{key[1]}_cooc.edges", cooc.to_edge_list())
        w.write("network", f"network_{key[0]}_{key[1]}_ppmi.edges", ppmi.to_edge_list())
    meta = dict(params, seed=seed)
    w.write("network", "network_comparison.tsv",
            tsv(["model", "persona", "runs", "overlap", "jaccard", "spearman_rho", "spearman_p",
                 "inclusion_cooc", "inclusion_ppmi"], rows, meta))
    div_rows = []
    for model in sorted(rankings):
        if set(rankings[model]) >= {"Basic", "Quality", "Creativity"}:
            for d in persona_rank_divergence(rankings[model], int(params["divergence_top"])):
                div_rows.append([model, d.constraint, d.rank_B, d.rank_Q, d.rank_C, d.avg_BQ, d.delta,
                                 ",".join(d.missing)])
    w.write("network", "network_persona_divergence.tsv",
            tsv(["model", "constraint", "rank_B", "rank_Q", "rank_C", "avg_BQ", "delta", "missing"], div_rows, meta))
    return meta


def analyze_reasoning(records, pool: ConstraintPool, w: _Writer, params: dict) -> dict:
    from .reasoning import (EmbeddingCache, HashingEmbedder, OpenAIEmbedder, ReasoningCorpus, centroid_distances,
                            cliffs_delta_posthoc, distinctive_phrases, embed_corpus, kruskal_wallis_epsilon)

    corpus = ReasoningCorpus.from_runs(records)
    groups = corpus.groups("model")
    if len(groups) < 2:
        raise PrerequisiteError("reasoning", "needs reasoning texts from at least 2 models")
    if params["embedder"] == "hashing":
        emb = HashingEmbedder(int(params["dim"]))
    elif params["embedder"] == "openai":
        emb = OpenAIEmbedder()
    else:
        raise ValueError(f"unknown embedder {params['embedder']!r}")
    cache = EmbeddingCache(params["cache_dir"]) if params.get("cache_dir") else None
    corpus = embed_corpus(corpus, emb, cache)
    dist = centroid_distances(corpus.embeddings)
    by_model = {g: dist[idx] for g, idx in groups.items()}
    kw = kruskal_wallis_epsilon(by_model)
    meta = dict(params, embedder_name=emb.name, documents=len(corpus), scalar="distance to global centroid")
    w.write("reasoning", "reasoning_kruskal.tsv",
            tsv(["H", "df", "p", "epsilon2", "n", "groups"], [[kw["H"], kw["df"], kw["p"], kw["epsilon2"],
                                                               kw["n"], kw["k"]]], meta))
    post = cliffs_delta_posthoc(by_model)
    w.write("reasoning", "reasoning_cliffs.tsv",
            tsv(["group_a", "group_b", "delta", "p", "q"],
                [[*r["pair"], r["delta"], r["p"], r["q"]] for r in post], meta))
    phrases = distinctive_phrases(corpus, "model", (1, 3), int(params["top_k"]), float(params["threshold"]),
                                  int(params["min_support"]))
    w.write("reasoning", "reasoning_phrases.tsv",
            tsv(["model", "rank", "phrase", "count", "ratio"],
                [[g, p.rank, p.phrase, p.count, p.ratio] for g in sorted(phrases) for p in phrases[g]], meta))
    return meta


def emit_tables(records: Iterable, pool: ConstraintPool, out: str | Path, analyses: Sequence[str] = ANALYSES,
                params: dict | None = None, seed: int = 0) -> dict:
    """Run the selected analyses and write their tables plus ``index.json`` under ``out``.

    ``params`` maps analysis name to its parameter dict (see the manifest's
    ``analyses`` section for keys and defaults).
    """
    from .manifest import DEFAULTS

    records = sorted(records, key=lambda r: r.run_id)
    if not records:
        raise PrerequisiteError("report", "run log is empty")
    unknown = set(analyses) - set(ANALYSES)
    if unknown:
        raise ValueError(f"unknown analyses: {sorted(unknown)}")
    w = _Writer(Path(out))
    merged = {a: dict(DEFAULTS["analyses"][a], **((params or {}).get(a, {}))) for a in analyses}
    index = {"schema_version": REPORT_SCHEMA_VERSION, "runs": len(records),
             "valid_runs": sum(r.valid for r in records), "analyses": {}}
    for a in [a for a in ANALYSES if a in analyses]:
        p = {k: v for k, v in merged[a].items() if k != "enabled"}
        if a in ("axes", "network"):
            meta = globals()[f"analyze_{a}"](records, pool, w, p, seed)
        else:
            meta = globals()[f"analyze_{a}"](records, pool, w, p)
        index["analyses"][a] = {"files": w.files[a], "params": _jsonable(meta)}
    (Path(out) / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", "utf-8")
    return index


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))
