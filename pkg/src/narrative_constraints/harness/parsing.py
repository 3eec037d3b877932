"""Response parsing, constraint-text resolution and selection validation."""
from __future__ import annotations

import difflib
import json
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from ..conditions import TaskCondition
from ..library import ELEMENTS, ConstraintPool

log = logging.getLogger(__name__)

FUZZY_THRESHOLD = 0.9

_QUOTES = str.maketrans({"‘": "'", "’": "'", "“": '"', "”": '"', "–": "-", "—": "-"})
_LEAD = re.compile(r"^\s*(?:[-*•]\s*|\d+[.)]\s*)?(?:\[(?:%s)\]\s*)?" % "|".join(ELEMENTS), re.IGNORECASE)


def normalize_text(text: str) -> str:
    """Case-, whitespace- and terminal-punctuation-insensitive form of a constraint text."""
    s = unicodedata.normalize("NFKC", text).translate(_QUOTES)
    s = _LEAD.sub("", s)
    s = " ".join(s.lower().split())
    return s.strip(" \"'").rstrip(".!?;:,").strip(" \"'")


@dataclass
class ParseResult:
    selections: list[str] = field(default_factory=list)
    reasons: dict[str, str] = field(default_factory=dict)
    compatibility: str | None = None
    errors: list[str] = field(default_factory=list)
    fuzzy_matches: list[tuple[str, str, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass
class ValidationResult:
    status: str  # "valid" | "invalid" | "parse_error"
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.status == "valid"

    def to_dict(self) -> dict:
        return {"status": self.status, "violations": list(self.violations)}


class TextResolver:
    """Resolve echoed constraint texts to pool ids.

    Exact match after :func:`normalize_text` is the rule; the optional fuzzy
    fallback accepts the best candidate with similarity >= ``threshold`` and
    always logs it.
    """

    def __init__(self, pool: ConstraintPool, fuzzy: bool = False, threshold: float = FUZZY_THRESHOLD):
        self.fuzzy = fuzzy
        self.threshold = threshold
        self._exact = {normalize_text(c.text): c.id for c in pool}
        self._norms = list(self._exact)

    def resolve(self, text: str) -> tuple[str | None, float]:
        norm = normalize_text(text)
        if norm in self._exact:
            return self._exact[norm], 1.0
        if not self.fuzzy:
            return None, 0.0
        best, score = None, 0.0
        for cand in difflib.get_close_matches(norm, self._norms, n=3, cutoff=self.threshold):
            r = difflib.SequenceMatcher(None, norm, cand).ratio()
            if r > score:
                best, score = cand, r
        if best is None:
            return None, 0.0
        log.warning("fuzzy constraint match (%.3f): %r -> %s", score, text, self._exact[best])
        return self._exact[best], score


def extract_array(raw: str) -> list | None:
    """Return the first JSON array of objects embedded in ``raw``."""
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\[", raw):
        try:
            value, _ = decoder.raw_decode(raw, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            return value
    return None


def _constraint_text(item: dict) -> str | None:
    for key in ("constraint", "Constraint", "text", "selected_constraint"):
        if isinstance(item.get(key), str):
            return item[key]
    for key, value in item.items():
        if key not in ("reason", "element", "compatibility") and isinstance(value, str):
            return value
    return None


def parse_response(raw: str, condition: TaskCondition | None, pool: ConstraintPool, *, fuzzy: bool = False,
                   resolver: TextResolver | None = None) -> ParseResult:
    """Extract selections, reasons and the compatibility paragraph from a raw response.

    Problems are collected per item in ``errors``; nothing here enforces the
    condition's budget (see :func:`validate_selection`).
    """
    result = ParseResult()
    items = extract_array(raw or "")
    if items is None:
        result.errors.append("no JSON array found in response")
        return result
    resolver = resolver or TextResolver(pool, fuzzy=fuzzy)
    for pos, item in enumerate(items):
        if "compatibility" in item:
            if result.compatibility is not None:
                result.errors.append(f"item {pos}: more than one compatibility object")
            result.compatibility = str(item["compatibility"])
            continue
        text = _constraint_text(item)
        if text is None:
            result.errors.append(f"item {pos}: no constraint text")
            continue
        cid, score = resolver.resolve(text)
        if cid is None:
            result.errors.append(f"item {pos}: unresolvable constraint text {text!r}")
            continue
        if score < 1.0:
            result.fuzzy_matches.append((text, cid, score))
        result.selections.append(cid)
        result.reasons.setdefault(cid, str(item.get("reason", "")))
    if result.compatibility is None:
        result.errors.append("trailing compatibility object missing")
    elif "compatibility" not in items[-1]:
        result.errors.append("compatibility object is not the last array element")
    return result


def validate_selection(selections: Sequence[str], condition: TaskCondition, pool: ConstraintPool) -> ValidationResult:
    violations = []
    dupes = sorted(cid for cid, n in Counter(selections).items() if n > 1)
    if dupes:
        violations.append(f"duplicate selections: {', '.join(dupes)}")
    unknown = [cid for cid in selections if cid not in pool]
    if unknown:
        violations.append(f"ids not in pool: {', '.join(unknown)}")
    distinct = [cid for cid in dict.fromkeys(selections) if cid in pool]
    per_element = Counter(pool[cid].element for cid in distinct)
    if condition.total_k is not None and len(selections) != condition.total_k:
        violations.append(f"budget: selected {len(selections)}, expected exactly {condition.total_k}")
    required = condition.per_element_k if condition.per_element_k is not None else condition.quota
    if required is not None:
        for element in ELEMENTS:
            n = per_element.get(element, 0)
            if n != required:
                kind = "quota" if condition.quota is not None else "per-element budget"
                violations.append(f"{kind}: {element} has {n}, expected {required}")
    return ValidationResult("invalid" if violations else "valid", violations)
