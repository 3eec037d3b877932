"""Closed-form run counts for detecting a Poisson rate ratio."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import stats


class UnsatisfiableDesign(ValueError):
    pass


def runs_for_stratum(rr: float, mu0: float, phi: float = 1.0, alpha: float = 0.05, power: float = 0.80) -> float:
    """Runs per group to detect ``rr`` against a baseline mean ``mu0`` per run.

    ``n = phi (z_{1-alpha/2} + z_{power})^2 (1/mu0 + 1/(rr mu0)) / (ln rr)^2``
    """
    if rr <= 0:
        raise ValueError("rr must be positive")
    if rr == 1:
        raise UnsatisfiableDesign("rr = 1 cannot be detected with any number of runs")
    if mu0 <= 0:
        raise ValueError("baseline mean must be positive")
    if phi < 0:
        raise ValueError("phi must be non-negative")
    z = stats.norm.ppf(1 - alpha / 2) + stats.norm.ppf(power)
    return phi * z * z * (1 / mu0 + 1 / (rr * mu0)) / math.log(rr) ** 2


def power_required_runs(rr: float, phi: float = 1.0, K: float | None = None, baseline_mean: float | None = None,
                        alpha: float = 0.05, power: float = 0.80, strata: Sequence[float] | None = None,
                        percentile: float = 80.0) -> int:
    """Required runs per group, taken at ``percentile`` across strata baselines.

    Strata are per-run baseline means ``mu0``; without strata the single
    ``baseline_mean`` is used. When ``K`` is given, the strata (or
    ``baseline_mean``) are read as selection shares and scaled by ``K``.
    """
    if strata is None:
        if baseline_mean is None:
            raise ValueError("need baseline_mean or strata")
        strata = [baseline_mean]
    mus = np.asarray(list(strata), dtype=float)
    if mus.size == 0:
        raise ValueError("strata must not be empty")
    if K is not None:
        mus = mus * K
    ns = np.array([runs_for_stratum(rr, m, phi, alpha, power) for m in mus])
    return int(math.ceil(np.percentile(ns, percentile) - 1e-9))
