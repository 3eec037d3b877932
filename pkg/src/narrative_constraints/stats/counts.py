"""Run-level count tables.

Each row is one (run, cell) pair. At element grain the cell is an element
and the exposure ``K`` is the run's total selection count; at category grain
the cell is ``Element/Category`` and ``K`` is the number of items the run
selected from that element.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ..library import ConstraintPool

GRAINS = ("element", "category")


class EmptyTableError(ValueError):
    pass


@dataclass
class RunCountsTable:
    grain: str
    run_id: np.ndarray
    model: np.ndarray
    persona: np.ndarray
    condition: np.ndarray
    element: np.ndarray
    cell: np.ndarray
    y: np.ndarray
    K: np.ndarray
    n: np.ndarray
    N: np.ndarray

    COLUMNS = ("run_id", "model", "persona", "condition", "element", "cell", "y", "K", "n", "N")

    def __len__(self) -> int:
        return self.y.size

    @property
    def share(self) -> np.ndarray:
        """Within-unit selection share ``y / K``."""
        return self.y / self.K

    @property
    def supply_share(self) -> np.ndarray:
        return self.n / self.N

    @property
    def n_clusters(self) -> int:
        return np.unique(self.run_id).size

    def cells(self) -> list[str]:
        # first-appearance order keeps the library's element/category order
        return list(dict.fromkeys(self.cell.tolist()))

    def levels(self, column: str) -> list[str]:
        return sorted(set(getattr(self, column).tolist()))

    def subset(self, mask) -> "RunCountsTable":
        mask = np.asarray(mask)
        return RunCountsTable(self.grain, *(getattr(self, c)[mask] for c in self.COLUMNS))

    def where(self, **eq) -> "RunCountsTable":
        mask = np.ones(len(self), dtype=bool)
        for col, value in eq.items():
            vals = value if isinstance(value, (list, tuple, set)) else [value]
            mask &= np.isin(getattr(self, col), list(vals))
        return self.subset(mask)

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(self.COLUMNS)
        for i in range(len(self)):
            w.writerow([getattr(self, c)[i] for c in self.COLUMNS])
        return buf.getvalue()


def build_counts_table(records: Iterable, pool: ConstraintPool, grain: str = "element",
                       filter: Callable | None = None, conditions: Sequence[str] | None = None,
                       valid_only: bool = True) -> RunCountsTable:
    """Tabulate selections per run and cell.

    Parameters
    ----------
    records : iterable of RunRecord (a RunLog works)
    grain : "element" or "category"
    filter : optional predicate on a record
    conditions : optional condition codes to keep
    valid_only : drop invalid and unparseable runs (default)

    Supplies come from each run's presented candidates, so runs shown a
    reduced pool get the right ``n`` and ``N``.
    """
    if grain not in GRAINS:
        raise ValueError(f"grain must be one of {GRAINS}, got {grain!r}")
    taxonomy = pool.taxonomy
    rows = []
    for rec in sorted(records, key=lambda r: r.run_id):
        if valid_only and not rec.valid:
            continue
        if conditions is not None and rec.condition not in conditions:
            continue
        if filter is not None and not filter(rec):
            continue
        presented = [pool[c] for c in (rec.permutation or pool.ids)]
        chosen = [pool[c] for c in rec.selections]
        base = (rec.run_id, rec.model, rec.persona, rec.condition)
        if grain == "element":
            N = len(presented)
            K = len(chosen)
            if K == 0:
                continue
            for e in taxonomy.elements:
                n = sum(c.element == e for c in presented)
                y = sum(c.element == e for c in chosen)
                rows.append(base + (e, e, y, K, n, N))
        else:
            for e in taxonomy.elements:
                K = sum(c.element == e for c in chosen)
                if K == 0:
                    continue
                N = sum(c.element == e for c in presented)
                for cat in taxonomy.categories(e):
                    n = sum(c.element == e and c.category == cat for c in presented)
                    y = sum(c.element == e and c.category == cat for c in chosen)
                    rows.append(base + (e, f"{e}/{cat}", y, K, n, N))
    if not rows:
        raise EmptyTableError("no selections left after filtering; nothing to tabulate")
    cols = list(zip(*rows))
    str_cols = [np.array(c, dtype=object) for c in cols[:6]]
    num_cols = [np.array(c, dtype=float) for c in cols[6:]]
    return RunCountsTable(grain, *str_cols, *num_cols)
