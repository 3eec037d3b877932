"""Cluster-robust OLS/WLS and the condition-contrast models built on it."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse, stats

from ..conditions import ConditionKind, parse_condition
from .contrasts import ContrastResult
from .counts import RunCountsTable
from .fdr import bh_fdr

Z95 = stats.norm.ppf(0.975)


class SingularDesignError(ValueError):
    pass


@dataclass
class LinearFit:
    params: np.ndarray
    cov: np.ndarray
    names: list[str]
    n_obs: int
    n_clusters: int
    weighting: str
    cov_type: str
    notes: list[str] = field(default_factory=list)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def bse(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))


def cluster_codes(groups) -> tuple[np.ndarray, int]:
    _, codes = np.unique(np.asarray(groups), return_inverse=True)
    return codes, int(codes.max()) + 1 if codes.size else 0


def cluster_sum(codes: np.ndarray, n_clusters: int, values: np.ndarray) -> np.ndarray:
    """Sum rows of ``values`` within clusters."""
    S = sparse.csr_matrix((np.ones(codes.size), (codes, np.arange(codes.size))), shape=(n_clusters, codes.size))
    return np.asarray(S @ values)


def wls_cluster(y, X, groups, weights=None, names=None, cov_type: str = "CR0") -> LinearFit:
    """Least squares with a cluster-robust sandwich covariance.

    ``cov_type`` is ``"CR0"`` (no small-sample factor) or ``"CR1"``
    (``G/(G-1) * (n-1)/(n-p)``).
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    rank = np.linalg.matrix_rank(X * np.sqrt(w)[:, None])
    if rank < p:
        raise SingularDesignError(f"design has rank {rank} < {p} columns")
    XtW = X.T * w
    bread = np.linalg.inv(XtW @ X)
    beta = bread @ (XtW @ y)
    resid = y - X @ beta
    codes, G = cluster_codes(groups)
    scores = cluster_sum(codes, G, X * (w * resid)[:, None])
    meat = scores.T @ scores
    cov = bread @ meat @ bread
    if cov_type == "CR1":
        cov *= G / (G - 1) * (n - 1) / (n - p)
    elif cov_type != "CR0":
        raise ValueError(f"unknown cov_type {cov_type!r}")
    cov = (cov + cov.T) / 2
    names = list(names) if names is not None else [f"x{i}" for i in range(p)]
    return LinearFit(beta, cov, names, n, G, "ols" if weights is None else "wls", cov_type)


def _contrast_design(table: RunCountsTable, treated: np.ndarray, by_model: bool, covariate: bool):
    cells = table.cells()
    cell_idx = np.array([cells.index(c) for c in table.cell])
    C = np.eye(len(cells))[cell_idx]
    cols = [C, C * treated[:, None]]
    names = [f"cell[{c}]" for c in cells] + [f"cell[{c}]:D" for c in cells]
    if by_model:
        models = table.levels("model")
        for m in models[:-1]:
            code = (table.model == m).astype(float) - (table.model == models[-1]).astype(float)
            cols += [C * code[:, None], C * (code * treated)[:, None]]
            names += [f"cell[{c}]:model[{m}]" for c in cells]
            names += [f"cell[{c}]:D:model[{m}]" for c in cells]
    if covariate:
        cols.append(table.supply_share[:, None])
        names.append("supply_share")
    return np.hstack(cols), names, cells


@dataclass
class ConditionContrast:
    pair: tuple[str, str]
    results: list[ContrastResult]
    fit: LinearFit
    notes: list[str]

    def __iter__(self):
        return iter(self.results)

    def __len__(self):
        return len(self.results)


def fit_condition_model(table: RunCountsTable, pair: Sequence, weighting: str = "ols", by_model: bool = False,
                        cov_type: str = "CR0") -> LinearFit:
    """Regress shares on cell effects, cell x D and the supply share.

    ``D`` = 1 for runs in the first condition of ``pair``. The supply-share
    covariate is dropped, with a note, when it is collinear with the cell
    effects (always the case when every run sees the full library).
    """
    a, b = (parse_condition(c).value for c in pair)
    present = set(table.condition.tolist())
    for c in (a, b):
        if c not in present:
            raise ValueError(f"condition {c} absent from the counts table")
    sub = table.where(condition=[a, b])
    treated = (sub.condition == a).astype(float)
    notes = []
    X, names, _ = _contrast_design(sub, treated, by_model, covariate=True)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        X, names, _ = _contrast_design(sub, treated, by_model, covariate=False)
        notes.append("supply share is collinear with the cell effects and was dropped")
    if weighting == "ols":
        w = None
    elif weighting == "wls_K":
        w = sub.K
    else:
        raise ValueError(f"weighting must be 'ols' or 'wls_K', got {weighting!r}")
    fit = wls_cluster(sub.share, X, sub.run_id, w, names, cov_type)
    fit.weighting = weighting
    fit.notes = notes
    return fit


def condition_contrast(table: RunCountsTable, pair: Sequence = (ConditionKind.C3, ConditionKind.C1_2),
                       weighting: str = "ols", cov_type: str = "CR0") -> ConditionContrast:
    """Per-cell risk differences (percentage points) between two conditions."""
    fit = fit_condition_model(table, pair, weighting, by_model=False, cov_type=cov_type)
    cells = [n[5:-3] for n in fit.names if n.endswith("]:D")]
    est, se, pvals = [], [], []
    for c in cells:
        i = fit.index(f"cell[{c}]:D")
        est.append(fit.params[i] * 100)
        se.append(fit.bse[i] * 100)
        z = est[-1] / se[-1] if se[-1] > 0 else 0.0
        pvals.append(float(2 * stats.norm.sf(abs(z))))
    q = bh_fdr(pvals)
    results = [
        ContrastResult(c, e, e - Z95 * s, e + Z95 * s, p, float(qq), kind="rd_pp", se=s)
        for c, e, s, p, qq in zip(cells, est, se, pvals, q)
    ]
    a, b = (parse_condition(c).value for c in pair)
    return ConditionContrast((a, b), results, fit, list(fit.notes))


def wald_heterogeneity(fit: LinearFit, terms) -> dict:
    """Joint robust Wald test that a block of coefficients is zero.

    ``terms`` is a list of coefficient names or a substring selecting them
    (e.g. ``":D:model["``). The block covariance may be singular when cell
    shares sum to one; the test uses its pseudo-inverse with df = its rank.
    """
    if isinstance(terms, str):
        idx = [i for i, n in enumerate(fit.names) if terms in n]
    else:
        idx = [fit.index(t) for t in terms]
    if not idx:
        raise ValueError("interaction block is empty")
    b = fit.params[idx]
    V = fit.cov[np.ix_(idx, idx)]
    evals = np.linalg.eigvalsh(V)
    tol = max(V.shape) * np.finfo(float).eps * max(evals.max(), 0.0)
    df = int(np.sum(evals > tol))
    if df == 0:
        raise ValueError("interaction block covariance has rank 0")
    stat = float(b @ np.linalg.pinv(V, rcond=1e-10, hermitian=True) @ b)
    return {"statistic": stat, "df": df, "p": float(stats.chi2.sf(stat, df))}
