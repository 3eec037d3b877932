"""Annotated narrative-constraint library.

The library is a tab-separated text file, one record per line::

    id<TAB>element<TAB>category<TAB>axes(comma-separated)<TAB>text

Lines starting with ``#`` are comments. Axis codes are positional: the i-th
code belongs to the i-th annotation dimension of the constraint's category,
as declared in the taxonomy file shipped next to the library.
"""
from __future__ import annotations

import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Iterator, Sequence

ELEMENTS = ("Event", "Style", "Character", "Setting")
CONSTRAINTS_PER_CATEGORY = 10
CATEGORIES_PER_ELEMENT = 5
POOL_SIZE = len(ELEMENTS) * CATEGORIES_PER_ELEMENT * CONSTRAINTS_PER_CATEGORY
WORD_RANGE = (15, 20)
# Author-imitation prompts are a handful of words by design.
WORD_RULE_EXEMPT = frozenset({"Write like X"})


class LibraryFormatError(ValueError):
    """Raised when a library file cannot be loaded.

    ``errors`` holds ``(line_number, message)`` pairs, 1-based; line 0 is used
    for file-level problems.
    """

    def __init__(self, errors: Sequence[tuple[int, str]]):
        self.errors = list(errors)
        lines = "; ".join(f"line {n}: {msg}" if n else msg for n, msg in self.errors)
        super().__init__(lines)


@dataclass(frozen=True)
class Axis:
    """One annotation value, e.g. the ``XTR`` terrain of a macro setting."""

    element: str
    category: str
    dimension: str
    code: str
    label: str

    @property
    def key(self) -> str:
        return f"{self.category}/{self.dimension}={self.code}"


@dataclass(frozen=True)
class _Dimension:
    name: str
    codes: dict
    patterns: dict

    def label_for(self, code: str) -> str | None:
        if code in self.codes:
            return self.codes[code]
        for pattern, template in self.patterns.items():
            m = re.match(pattern, code)
            if m:
                return template.format(*m.groups())
        return None


class Taxonomy:
    """Element -> category -> ordered annotation dimensions."""

    def __init__(self, spec: dict):
        self._dims: dict[tuple[str, str], list[_Dimension]] = {}
        self._categories: dict[str, list[str]] = {}
        for element, cats in spec["elements"].items():
            self._categories[element] = list(cats)
            for category, dims in cats.items():
                self._dims[(element, category)] = [
                    _Dimension(d["name"], dict(d.get("codes", {})), dict(d.get("patterns", {})))
                    for d in dims
                ]
        self.version = spec.get("version", 1)

    @classmethod
    def default(cls) -> "Taxonomy":
        text = resources.files(__package__).joinpath("data/taxonomy.json").read_text("utf-8")
        return cls(json.loads(text))

    @property
    def elements(self) -> list[str]:
        return list(self._categories)

    def categories(self, element: str) -> list[str]:
        return list(self._categories.get(element, []))

    def has_category(self, element: str, category: str) -> bool:
        return (element, category) in self._dims

    def dimensions(self, element: str, category: str) -> list[str]:
        return [d.name for d in self._dims[(element, category)]]

    def resolve(self, element: str, category: str, codes: Sequence[str]) -> list[Axis]:
        """Map positional codes to :class:`Axis` objects; raise ``KeyError`` on unknown codes."""
        dims = self._dims[(element, category)]
        if len(codes) != len(dims):
            raise KeyError(
                f"{category} takes {len(dims)} axis codes ({', '.join(d.name for d in dims)}), got {len(codes)}"
            )
        axes = []
        for dim, code in zip(dims, codes):
            label = dim.label_for(code)
            if label is None:
                raise KeyError(f"unknown {dim.name} axis code {code!r} for category {category}")
            axes.append(Axis(element, category, dim.name, code, label))
        return axes

    def all_axes(self, element: str, category: str) -> list[tuple[str, dict]]:
        return [(d.name, dict(d.codes)) for d in self._dims[(element, category)]]


@dataclass(frozen=True)
class Constraint:
    id: str
    element: str
    category: str
    text: str
    axes: tuple[Axis, ...]

    @property
    def axis_codes(self) -> tuple[str, ...]:
        return tuple(a.code for a in self.axes)

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class ConstraintPool:
    """Immutable, ordered collection of constraints plus their taxonomy."""

    constraints: tuple[Constraint, ...]
    taxonomy: Taxonomy = field(default_factory=Taxonomy.default, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "_index", {c.id: c for c in self.constraints})

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self) -> Iterator[Constraint]:
        return iter(self.constraints)

    def __getitem__(self, cid: str) -> Constraint:
        return self._index[cid]

    def __contains__(self, cid: object) -> bool:
        return cid in self._index

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.constraints]

    def by_element(self, element: str) -> list[Constraint]:
        return [c for c in self.constraints if c.element == element]

    def by_category(self, element: str, category: str) -> list[Constraint]:
        return [c for c in self.constraints if c.element == element and c.category == category]

    def element_supply(self) -> dict[str, int]:
        counts = Counter(c.element for c in self.constraints)
        return {e: counts.get(e, 0) for e in ELEMENTS}

    def category_supply(self) -> dict[tuple[str, str], int]:
        return dict(Counter((c.element, c.category) for c in self.constraints))

    def subset(self, ids: Iterable[str]) -> "ConstraintPool":
        keep = set(ids)
        return ConstraintPool(tuple(c for c in self.constraints if c.id in keep), self.taxonomy)


@dataclass
class ValidationReport:
    hard: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.hard


def _parse_records(stream: IO[str], taxonomy: Taxonomy) -> list[Constraint]:
    errors: list[tuple[int, str]] = []
    constraints: list[Constraint] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            errors.append((lineno, f"expected 5 tab-separated fields, found {len(parts)}"))
            continue
        cid, element, category, axes_field, text = (p.strip() for p in parts)
        if not cid or not text:
            errors.append((lineno, "empty id or text"))
            continue
        if cid in seen:
            errors.append((lineno, f"duplicate id {cid!r} (first seen on line {seen[cid]})"))
            continue
        seen[cid] = lineno
        if element not in taxonomy.elements:
            errors.append((lineno, f"unknown element {element!r}"))
            continue
        if not taxonomy.has_category(element, category):
            errors.append((lineno, f"unknown category {category!r} for element {element}"))
            continue
        codes = [c.strip() for c in axes_field.split(",") if c.strip()]
        if not codes:
            errors.append((lineno, f"constraint {cid} has no axis codes"))
            continue
        try:
            axes = taxonomy.resolve(element, category, codes)
        except KeyError as exc:
            errors.append((lineno, str(exc.args[0])))
            continue
        constraints.append(Constraint(cid, element, category, text, tuple(axes)))
    if errors:
        raise LibraryFormatError(errors)
    if not constraints:
        raise LibraryFormatError([(0, "no constraint records found")])
    return constraints


def load_library(source: IO | str | bytes | None = None, taxonomy: Taxonomy | None = None,
                 strict: bool = True) -> ConstraintPool:
    """Load a constraint library.

    Parameters
    ----------
    source : text or binary stream, str path, bytes, or None
        ``None`` loads the library shipped with the package.
    taxonomy : Taxonomy, optional
        Defaults to the shipped taxonomy.
    strict : bool
        When true, pool-level count invariants must hold as well
        (see :func:`validate_pool`); partial libraries need ``strict=False``.
    """
    taxonomy = taxonomy or Taxonomy.default()
    if source is None:
        text = resources.files(__package__).joinpath("data/constraints.tsv").read_text("utf-8")
        stream: IO[str] = io.StringIO(text)
    elif isinstance(source, bytes):
        stream = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            stream = io.StringIO(fh.read())
    else:
        data = source.read()
        stream = io.StringIO(data.decode("utf-8") if isinstance(data, bytes) else data)
    pool = ConstraintPool(tuple(_parse_records(stream, taxonomy)), taxonomy)
    if strict:
        report = validate_pool(pool)
        if report.hard:
            raise LibraryFormatError([(0, msg) for msg in report.hard])
    return pool


def dump_library(pool: ConstraintPool, stream: IO[str]) -> None:
    stream.write("# narrative constraint library, format version 1\n")
    stream.write("# id\telement\tcategory\taxes\ttext\n")
    for c in pool:
        stream.write("\t".join([c.id, c.element, c.category, ",".join(c.axis_codes), c.text]) + "\n")


def validate_pool(pool: ConstraintPool) -> ValidationReport:
    report = ValidationReport()
    tax = pool.taxonomy
    ids = Counter(c.id for c in pool)
    for cid, n in sorted(ids.items()):
        if n > 1:
            report.hard.append(f"id {cid} appears {n} times")
    if len(pool) != POOL_SIZE:
        report.hard.append(f"pool has {len(pool)} constraints, expected {POOL_SIZE}")
    supply = pool.category_supply()
    for element in ELEMENTS:
        cats = tax.categories(element)
        if len(cats) != CATEGORIES_PER_ELEMENT:
            report.hard.append(f"element {element} defines {len(cats)} categories, expected {CATEGORIES_PER_ELEMENT}")
        for category in cats:
            n = supply.get((element, category), 0)
            if n != CONSTRAINTS_PER_CATEGORY:
                report.hard.append(f"category {category} has {n} of {CONSTRAINTS_PER_CATEGORY}")
    for c in pool:
        if not tax.has_category(c.element, c.category):
            report.hard.append(f"{c.id}: category {c.category!r} not defined for {c.element}")
            continue
        if not c.axes:
            report.hard.append(f"{c.id}: no axis annotations")
        else:
            try:
                tax.resolve(c.element, c.category, c.axis_codes)
            except KeyError as exc:
                report.hard.append(f"{c.id}: {exc.args[0]}")
        if c.category in WORD_RULE_EXEMPT:
            continue
        lo, hi = WORD_RANGE
        if not lo <= c.word_count <= hi:
            report.warnings.append(f"{c.id}: {c.word_count} words, outside {lo}-{hi}")
    return report


@dataclass(frozen=True)
class CandidateList:
    """A list of constraints shown to a model, optionally under an element label."""

    constraints: tuple[Constraint, ...]
    label: str | None = None
    show_labels: bool = False

    def __len__(self) -> int:
        return len(self.constraints)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.constraints]

    def reordered(self, order: Sequence[int]) -> "CandidateList":
        return CandidateList(tuple(self.constraints[i] for i in order), self.label, self.show_labels)


def subset_for_condition(pool: ConstraintPool, condition) -> list[CandidateList]:
    """Split the pool into the candidate list(s) presented under ``condition``.

    Element-wise conditions get one labeled list per element; pooled conditions
    a single list of the whole pool, labeled only when the condition shows labels.
    """
    if condition.element_wise:
        return [CandidateList(tuple(pool.by_element(e)), label=e, show_labels=True) for e in ELEMENTS]
    return [CandidateList(tuple(pool.constraints), label=None, show_labels=condition.labels_visible)]
