"""Contrast results, risk-ratio contrasts on GEE fits, and reporting masks."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .fdr import bh_fdr

Z95 = stats.norm.ppf(0.975)


class ContrastSpanError(ValueError):
    """The requested contrast is not a combination of the fitted coefficients."""


def delta_pct(rr):
    """Percent change implied by a rate ratio, ``(RR - 1) * 100``."""
    return (np.asarray(rr, dtype=float) - 1.0) * 100.0 if np.ndim(rr) else (float(rr) - 1.0) * 100.0


@dataclass
class ContrastResult:
    label: str
    estimate: float
    ci_low: float
    ci_high: float
    p: float
    q: float
    kind: str = "rr"  # "rr" or "rd_pp"
    se: float = float("nan")  # log scale for RR, pp for risk differences
    delta_pct: float | None = None
    reported: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "rr" and self.delta_pct is None:
            self.delta_pct = delta_pct(self.estimate)

    def row(self) -> dict:
        d = asdict(self)
        meta = d.pop("meta")
        d.update(meta)
        return d


@dataclass(frozen=True)
class Contrast:
    """Rate ratio of ``cell`` over ``baseline``, optionally within factor levels."""

    cell: str
    baseline: str
    levels: tuple = ()
    label: str | None = None

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        where = ",".join(f"{k}={v}" for k, v in self.levels)
        return f"{self.cell} vs {self.baseline}" + (f" [{where}]" if where else "")


def baseline_family(cells: Sequence[str], baseline: str, **levels) -> list[Contrast]:
    lv = tuple(sorted(levels.items()))
    return [Contrast(c, baseline, lv) for c in cells if c != baseline]


def pairwise_family(cells: Sequence[str], **levels) -> list[Contrast]:
    lv = tuple(sorted(levels.items()))
    return [Contrast(a, b, lv) for i, a in enumerate(cells) for b in cells[i + 1:]]


def _vector(fit, contrast) -> np.ndarray:
    if isinstance(contrast, Contrast):
        try:
            return (fit.design.log_rate_vector(contrast.cell, **dict(contrast.levels))
                    - fit.design.log_rate_vector(contrast.baseline, **dict(contrast.levels)))
        except (KeyError, ValueError) as exc:
            raise ContrastSpanError(f"{contrast.name}: {exc}") from exc
    L = np.asarray(contrast, dtype=float)
    if L.shape != fit.params.shape:
        raise ContrastSpanError(f"contrast has length {L.size}, fit has {fit.params.size} coefficients")
    return L


def rr_contrasts(fit, family: Iterable, q_threshold: float = 0.05, delta_floor: float = 10.0,
                 labels: Sequence[str] | None = None) -> list[ContrastResult]:
    """Wald rate-ratio contrasts with BH q-values computed within ``family``.

    ``reported`` is true when ``q < q_threshold`` and ``|delta%| >= delta_floor``.
    """
    if not fit.converged:
        raise ValueError("fit did not converge")
    family = list(family)
    out = []
    for i, c in enumerate(family):
        L = _vector(fit, c)
        est = float(L @ fit.params)
        se = float(np.sqrt(max(L @ fit.cov @ L, 0.0)))
        if se > 0:
            p = float(stats.chi2.sf((est / se) ** 2, 1))
        else:
            p = 1.0 if abs(est) < 1e-12 else 0.0
        label = labels[i] if labels else (c.name if isinstance(c, Contrast) else f"contrast_{i}")
        out.append([label, est, se, p])
    q = bh_fdr([r[3] for r in out]) if out else []
    results = []
    for (label, est, se, p), qq in zip(out, q):
        rr = float(np.exp(est))
        r = ContrastResult(label, rr, float(np.exp(est - Z95 * se)), float(np.exp(est + Z95 * se)),
                           p, float(qq), kind="rr", se=se)
        r.reported = bool(qq < q_threshold and abs(r.delta_pct) >= delta_floor)
        results.append(r)
    return results


def results_to_tsv(results: Sequence[ContrastResult], params: dict | None = None, digits: int = 6) -> str:
    """Stable delimiter-separated rendering; parameters go into ``#`` header lines."""
    buf = io.StringIO()
    for k, v in sorted((params or {}).items()):
        buf.write(f"# {k}={v}\n")
    rows = [r.row() for r in results]
    if not rows:
        return buf.getvalue()
    cols = list(rows[0])
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([fmt(row.get(c), digits) for c in cols])
    return buf.getvalue()


def fmt(v, digits: int = 6) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
        return f"{float(v):.{digits}f}"
    return str(v)
