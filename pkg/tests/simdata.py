"""Simulated count tables shared by the regression tests."""
from functools import lru_cache

import numpy as np
from scipy import optimize

from narrative_constraints.library import ELEMENTS, load_library
from narrative_constraints.stats import RunCountsTable
from narrative_constraints.synthetic import calibrate_profile, profile_from_rates, simulate_selections


@lru_cache(maxsize=None)
def _pool():
    return load_library()


@lru_cache(maxsize=None)
def weights_for_shares(shares: tuple) -> np.ndarray:
    """Item weights whose expected element shares under K=20 equal ``shares`` exactly."""
    pool = _pool()
    sh = dict(zip(ELEMENTS, shares))
    rr = {e: sh[e] / sh["Event"] for e in ELEMENTS[1:]}
    return calibrate_profile(profile_from_rates(rr, pool=pool), pool.ids, 20).weight_vector(pool.ids)


UNIFORM = (0.25, 0.25, 0.25, 0.25)


def condition_table(rng, runs, treated=UNIFORM, control=UNIFORM, models=("a", "b"), personas=("Basic",),
                    pair=("2-2", "2-1"), shifted_models=("a",)):
    """Element-grain table for two conditions.

    The first condition of ``pair`` is a fixed budget of 20; the second draws a
    Poisson(20) budget as free-choice runs do. Models in ``shifted_models`` use
    ``treated`` shares under the first condition; everything else uses ``control``.
    """
    pool = _pool()
    el = np.array([pool[c].element for c in pool.ids])
    masks = [el == e for e in ELEMENTS]
    w_t, w_c = weights_for_shares(tuple(treated)), weights_for_shares(tuple(control))
    rows = []
    for m in models:
        for p in personas:
            for cond in pair:
                w = w_t if (cond == pair[0] and m in shifted_models) else w_c
                for r in range(runs):
                    K = 20 if cond == pair[0] else max(1, int(rng.poisson(20)))
                    s = simulate_selections(w, K, 1, rng)[0]
                    rid = f"{m}/{p}/{cond}/{r}"
                    rows += [(rid, m, p, cond, e, e, s[mk].sum(), K, 50, 200) for e, mk in zip(ELEMENTS, masks)]
    cols = list(zip(*rows))
    obj = [np.array(c, dtype=object) for c in cols[:6]]
    num = [np.array(c, dtype=float) for c in cols[6:]]
    return RunCountsTable("element", *obj, *num)


def table_from(run_id, model, persona, cell, y, K, n=None, N=None):
    m = len(y)
    obj = lambda v: np.array(v, dtype=object)
    n = np.full(m, 50.0) if n is None else np.asarray(n, float)
    N = np.full(m, 200.0) if N is None else np.asarray(N, float)
    return RunCountsTable("element", obj(run_id), obj(model), obj(persona), obj(["2-2"] * m), obj(cell),
                          obj(cell), np.asarray(y, float), np.asarray(K, float), n, N)


def poisson_table(n_runs, seed, rates=(0.25, 0.40, 0.28, 0.27), one_row_per_cluster=False):
    """Independent Poisson counts for each (run, element) row; no multinomial constraint."""
    rng = np.random.default_rng(seed)
    rid, model, persona, cell, y, K = [], [], [], [], [], []
    for r in range(n_runs):
        mdl, per = ("a", "b")[r % 2], ("Basic", "Quality", "Creativity")[(r // 2) % 3]
        k = rng.integers(10, 30)
        for j, e in enumerate(ELEMENTS):
            rid.append(f"r{r}/{e}" if one_row_per_cluster else f"r{r}")
            model.append(mdl), persona.append(per), cell.append(e), K.append(k)
            bump = 1.15 if (mdl == "a" and e == "Style") else 1.0
            y.append(rng.poisson(k * rates[j] * bump))
    return table_from(rid, model, persona, cell, y, K)


def poisson_mle(y, X, off):
    """Poisson maximum likelihood by trust-region Newton on the exact log-likelihood."""
    nll = lambda b: float(np.sum(np.exp(off + X @ b) - y * (off + X @ b)))
    grad = lambda b: X.T @ (np.exp(off + X @ b) - y)
    hess = lambda b: (X * np.exp(off + X @ b)[:, None]).T @ X
    res = optimize.minimize(nll, np.zeros(X.shape[1]), jac=grad, hess=hess, method="trust-exact",
                            options={"gtol": 1e-12, "maxiter": 500})
    return res.x
