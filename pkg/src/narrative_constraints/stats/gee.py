"""Poisson GEE with log link and run-clustered sandwich covariance.

The mean model is ``log E[y] = offset + X b`` with ``offset = log K`` (or
``log K + log n``). For the exchangeable working correlation
``R = (1 - a) I + a J`` the inverse has the closed form
``R^-1 = c (I - d J)`` with ``c = 1/(1 - a)`` and ``d = a / (1 - a + m a)`` for
a cluster of size ``m``, so every cluster-level quantity reduces to sums over
rows and per-cluster totals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .counts import RunCountsTable
from .linear import cluster_codes, cluster_sum

log = logging.getLogger(__name__)

OFFSETS = ("logK", "logK_plus_logn")
CORRELATIONS = ("exchangeable", "independence")
CODINGS = ("effect", "treatment")
# keep the exchangeable working matrix away from singularity
ALPHA_MARGIN = 1e-3


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, step: float):
        super().__init__(f"GEE did not converge after {iterations} iterations (last max|step| = {step:.3g})")
        self.iterations = iterations
        self.step = step


@dataclass
class Design:
    """Names and coding of the columns of a cell x (model, persona) design."""

    cells: list[str]
    factors: dict[str, list[str]]
    coding: str
    names: list[str]
    # set when columns were dropped: full-design names, row-space projector and
    # the map from full-design contrasts to the kept columns
    full_names: list[str] | None = None
    rowspace: np.ndarray | None = None
    reducer: np.ndarray | None = None

    def coding_row(self, factor: str, level: str | None) -> np.ndarray:
        levels = self.factors[factor]
        if level is None:
            return np.mean([self.coding_row(factor, lv) for lv in levels], axis=0)
        if level not in levels:
            raise KeyError(f"unknown {factor} level {level!r}")
        if self.coding == "effect":
            ref = levels[-1]
            row = np.array([1.0 if level == lv else 0.0 for lv in levels[:-1]])
            return -np.ones(len(levels) - 1) if level == ref else row
        return np.array([1.0 if level == lv else 0.0 for lv in levels[1:]])

    def log_rate_vector(self, cell: str, **levels) -> np.ndarray:
        """Linear combination giving the log rate of ``cell`` at the given factor levels.

        Omitted factors are averaged over their levels with equal weight.
        """
        if cell not in self.cells:
            raise KeyError(f"unknown cell {cell!r}")
        full = self.full_names or self.names
        L = np.zeros(len(full))
        L[full.index(f"cell[{cell}]")] = 1.0
        for factor in self.factors:
            row = self.coding_row(factor, levels.get(factor))
            for lv, v in zip(self._coded_levels(factor), row):
                L[full.index(f"cell[{cell}]:{factor}[{lv}]")] = v
        if self.reducer is None:
            return L
        # estimable iff L lies in the row space of the full design
        if np.max(np.abs(L - L @ self.rowspace)) > 1e-8:
            raise ValueError(f"not estimable: log rate of {cell} at {levels or 'averaged levels'} "
                             "involves dropped columns")
        return L @ self.reducer

    def _coded_levels(self, factor: str) -> list[str]:
        levels = self.factors[factor]
        return levels[:-1] if self.coding == "effect" else levels[1:]


def build_design(table: RunCountsTable, factors: Sequence[str] = ("model", "persona"),
                 coding: str = "effect") -> tuple[np.ndarray, Design]:
    """No-intercept design: cell indicators plus cell x factor interactions."""
    if coding not in CODINGS:
        raise ValueError(f"coding must be one of {CODINGS}")
    cells = table.cells()
    cell_idx = np.array([cells.index(c) for c in table.cell])
    C = np.eye(len(cells))[cell_idx]
    cols, names = [C], [f"cell[{c}]" for c in cells]
    fac_levels = {}
    for factor in factors:
        values = getattr(table, factor)
        levels = table.levels(factor)
        fac_levels[factor] = levels
        if len(levels) < 2:
            continue
        coded = levels[:-1] if coding == "effect" else levels[1:]
        for lv in coded:
            code = (values == lv).astype(float)
            if coding == "effect":
                code -= (values == levels[-1]).astype(float)
            cols.append(C * code[:, None])
            names += [f"cell[{c}]:{factor}[{lv}]" for c in cells]
    design = Design(cells, {f: lv for f, lv in fac_levels.items() if len(lv) >= 2}, coding, names)
    return np.hstack(cols), design


@dataclass
class GeeFit:
    params: np.ndarray
    cov: np.ndarray
    cov_naive: np.ndarray
    names: list[str]
    design: Design
    corr: str
    alpha: float
    alpha_clamped: bool
    phi: float
    n_clusters: int
    n_obs: int
    iterations: int
    converged: bool
    last_step: float
    offset: str
    cov_type: str
    y: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    dropped: list[dict] = field(default_factory=list)

    @property
    def bse(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    @property
    def df_resid(self) -> int:
        return self.n_obs - len(self.params)

    def coef(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def rr(self, cell: str, baseline: str, **levels) -> float:
        L = self.design.log_rate_vector(cell, **levels) - self.design.log_rate_vector(baseline, **levels)
        return float(np.exp(L @ self.params))


def _exchangeable_terms(alpha: float, sizes: np.ndarray):
    c = 1.0 / (1.0 - alpha)
    d = alpha / (1.0 - alpha + sizes * alpha)
    return c, d


def _estimate_alpha(e: np.ndarray, codes: np.ndarray, G: int, sizes: np.ndarray, p: int, phi: float):
    """Moment estimator from Pearson residuals over all within-cluster pairs."""
    n_pairs = float(np.sum(sizes * (sizes - 1) / 2))
    if n_pairs <= p or phi <= 0:
        return 0.0, False
    tot = cluster_sum(codes, G, e)
    sq = cluster_sum(codes, G, e * e)
    pair_sum = float(np.sum((tot * tot - sq) / 2))
    alpha = pair_sum / (n_pairs - p) / phi
    lo = -1.0 / (sizes.max() - 1) + ALPHA_MARGIN
    hi = 1.0 - ALPHA_MARGIN
    clamped = not lo <= alpha <= hi
    return float(np.clip(alpha, lo, hi)), clamped


def _drop_empty_strata(table: RunCountsTable, strata: Sequence[str]):
    keys = list(zip(table.cell, *(getattr(table, s) for s in strata)))
    totals: dict = {}
    for k, y in zip(keys, table.y):
        totals[k] = totals.get(k, 0.0) + y
    empty = {k for k, v in totals.items() if v == 0}
    if not empty:
        return table, []
    mask = np.array([k not in empty for k in keys])
    report = [dict(zip(("cell",) + tuple(strata), k), rows=int(sum(1 for kk in keys if kk == k)))
              for k in sorted(empty)]
    for r in report:
        log.warning("dropping all-zero stratum %s", r)
    return table.subset(mask), report


def fit_poisson_gee(table: RunCountsTable, offset: str = "logK", corr: str = "exchangeable",
                    factors: Sequence[str] = ("model", "persona"), coding: str = "effect",
                    tol: float = 1e-8, max_iter: int = 100, cov_type: str = "CR0",
                    drop_empty: bool = True) -> GeeFit:
    """Fit the cell-effects Poisson GEE.

    Parameters
    ----------
    table : RunCountsTable
    offset : "logK" or "logK_plus_logn"
    corr : "exchangeable" or "independence"
    factors : interaction factors; each gets cell x factor columns
    coding : "effect" makes cell coefficients unweighted averages over factor
        levels; "treatment" makes them the first level's values
    cov_type : "CR0" or "CR1" sandwich

    Cells with zero counts in every cluster of a (cell, factors) stratum are
    dropped and listed in ``GeeFit.dropped``.
    """
    if offset not in OFFSETS:
        raise ValueError(f"offset must be one of {OFFSETS}")
    if corr not in CORRELATIONS:
        raise ValueError(f"corr must be one of {CORRELATIONS}")
    dropped = []
    if drop_empty:
        table, dropped = _drop_empty_strata(table, factors)
    if np.any(table.K <= 0) or (offset == "logK_plus_logn" and np.any(table.n <= 0)):
        raise ValueError("exposures must be positive")
    codes, G = cluster_codes(table.run_id)
    if G < 2:
        raise ValueError("GEE needs at least 2 clusters")
    X, design = build_design(table, factors, coding)
    y = table.y.astype(float)
    off = np.log(table.K) + (np.log(table.n) if offset == "logK_plus_logn" else 0.0)
    X_full = X
    X, aliased = _drop_aliased(X, design.names)
    if aliased:
        pinv = np.linalg.pinv(X_full)
        design.full_names = list(design.names)
        design.rowspace = pinv @ X_full
        design.reducer = pinv @ X
        design.names = [n for n in design.names if n not in aliased]
        dropped = dropped + [{"column": a} for a in aliased]
        log.warning("dropping aliased or empty columns %s", aliased)
    n, p = X.shape
    sizes = np.bincount(codes, minlength=G).astype(float)
    row_size = sizes[codes]

    beta = _glm_start(y, X, off)
    alpha, clamped, phi = 0.0, False, 1.0
    step_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(off + X @ beta)
        e = (y - mu) / np.sqrt(mu)
        phi = float(e @ e / (n - p)) if n > p else 1.0
        if corr == "exchangeable":
            alpha, clamped = _estimate_alpha(e, codes, G, sizes, p, phi)
        B, scores = _bread_and_scores(X, mu, e, codes, G, sizes, row_size, alpha)
        step = np.linalg.solve(B, scores.sum(axis=0))
        beta = beta + step
        step_norm = float(np.max(np.abs(step)))
        if step_norm < tol:
            break
    else:
        raise ConvergenceError(it, step_norm)

    mu = np.exp(off + X @ beta)
    e = (y - mu) / np.sqrt(mu)
    phi = float(e @ e / (n - p)) if n > p else 1.0
    if corr == "exchangeable":
        alpha, clamped = _estimate_alpha(e, codes, G, sizes, p, phi)
    B, scores = _bread_and_scores(X, mu, e, codes, G, sizes, row_size, alpha)
    Binv = np.linalg.inv(B)
    cov = Binv @ (scores.T @ scores) @ Binv
    if cov_type == "CR1":
        cov *= G / (G - 1)
    elif cov_type != "CR0":
        raise ValueError(f"unknown cov_type {cov_type!r}")
    cov = (cov + cov.T) / 2
    if clamped:
        log.info("exchangeable alpha clamped to %.4f", alpha)
    return GeeFit(beta, cov, Binv * phi, list(design.names), design, corr, alpha, clamped, phi, G, n, it,
                  True, step_norm, offset, cov_type, y, mu, dropped)


def _drop_aliased(X, names):
    """Greedily keep columns that add rank; the rest are linear combinations of earlier ones."""
    keep, aliased = [], []
    for j in range(X.shape[1]):
        trial = keep + [j]
        if np.linalg.matrix_rank(X[:, trial]) == len(trial):
            keep = trial
        else:
            aliased.append(names[j])
    return X[:, keep], aliased


def _glm_start(y, X, off, iters: int = 50) -> np.ndarray:
    """Poisson IRLS starting values."""
    mu = np.maximum(y, 0.5)
    beta = np.zeros(X.shape[1])
    for _ in range(iters):
        z = np.log(mu) - off + (y - mu) / mu
        W = mu
        new = np.linalg.lstsq(X * np.sqrt(W)[:, None], z * np.sqrt(W), rcond=None)[0]
        mu = np.exp(off + X @ new)
        if np.max(np.abs(new - beta)) < 1e-10:
            return new
        beta = new
    return beta


def _bread_and_scores(X, mu, e, codes, G, sizes, row_size, alpha):
    Z = X * np.sqrt(mu)[:, None]
    ZtZ = Z.T @ Z
    Ze = cluster_sum(codes, G, Z * e[:, None])
    if alpha == 0.0:
        return ZtZ, Ze
    c, d = _exchangeable_terms(alpha, sizes)
    s = cluster_sum(codes, G, Z)
    ebar = cluster_sum(codes, G, e)
    B = c * (ZtZ - (s * d[:, None]).T @ s)
    scores = c * (Ze - s * (d * ebar)[:, None])
    return B, scores


def dispersion_diagnostics(fit: GeeFit, table: RunCountsTable | None = None) -> dict:
    """Pearson chi2/df and deviance/df from the fitted means."""
    df = fit.df_resid
    if df <= 0:
        raise ValueError(f"no residual degrees of freedom (n={fit.n_obs}, p={len(fit.params)})")
    y, mu = fit.y, fit.mu
    pearson = float(np.sum((y - mu) ** 2 / mu))
    deviance = float(2 * np.sum(special.xlogy(y, y / mu) - (y - mu)))
    return {"pearson_chi2": pearson, "deviance": deviance, "df": df,
            "pearson_chi2_per_df": pearson / df, "deviance_per_df": deviance / df}
