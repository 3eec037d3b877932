"""Justification-text analysis: embeddings, rank tests, effect sizes, distinctive phrases."""
from __future__ import annotations

import hashlib
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np
from scipy import stats

from .stats.fdr import bh_fdr

TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


@dataclass(frozen=True)
class ReasoningDoc:
    run_id: str
    model: str
    persona: str
    constraint: str
    text: str


@dataclass
class ReasoningCorpus:
    docs: list[ReasoningDoc]
    embeddings: np.ndarray | None = None

    def __post_init__(self):
        if self.embeddings is not None:
            self.embeddings = np.asarray(self.embeddings, dtype=float)
            if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.docs):
                raise ValueError("need one embedding row per document")

    def __len__(self):
        return len(self.docs)

    @classmethod
    def from_runs(cls, records: Iterable, valid_only: bool = True) -> "ReasoningCorpus":
        docs = []
        for r in sorted(records, key=lambda r: r.run_id):
            if valid_only and not r.valid:
                continue
            for cid in r.selections:
                text = r.reasons.get(cid)
                if text:
                    docs.append(ReasoningDoc(r.run_id, r.model, r.persona, cid, text))
        return cls(docs)

    def groups(self, by: str = "model") -> dict[str, np.ndarray]:
        """Row indices per group, groups sorted by name."""
        idx = defaultdict(list)
        for i, d in enumerate(self.docs):
            idx[getattr(d, by)].append(i)
        return {k: np.array(v) for k, v in sorted(idx.items())}


class EmbeddingProvider(Protocol):
    name: str
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic signed feature hashing of word uni- and bigrams, L2-normalized.

    Needs no network; useful for tests and offline runs.
    """

    def __init__(self, dim: int = 256, ngrams: tuple[int, int] = (1, 2)):
        self.dim = dim
        self.ngrams = ngrams
        self.name = f"hashing-{dim}-{ngrams[0]}{ngrams[1]}"

    def _vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for gram in ngrams(tokenize(text), *self.ngrams):
            h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            v[int.from_bytes(h[:4], "little") % self.dim] += 1.0 if h[4] & 1 else -1.0
        norm = np.linalg.norm(v)
        return v / norm if norm else v

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.vstack([self._vector(t) for t in texts]) if texts else np.zeros((0, self.dim))


class OpenAIEmbedder:
    """OpenAI-compatible ``/embeddings`` endpoint; key from ``OPENAI_API_KEY``."""

    def __init__(self, model: str = "text-embedding-3-large", base_url: str = "https://api.openai.com/v1",
                 api_key_env: str = "OPENAI_API_KEY", batch_size: int = 64, timeout: float = 120.0,
                 client: httpx.Client | None = None):
        self.model = model
        self.name = f"openai-{model}"
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.batch_size = batch_size
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise RuntimeError(f"environment variable {self.api_key_env} is not set")
        rows = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            resp = self._client.post(f"{self.base_url}/embeddings", headers={"Authorization": f"Bearer {key}"},
                                     json={"model": self.model, "input": batch})
            if resp.status_code >= 400:
                raise RuntimeError(f"embedding request failed: HTTP {resp.status_code}: {resp.text[:200]}")
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            rows += [d["embedding"] for d in data]
        return np.asarray(rows, dtype=float)


class EmbeddingCache:
    """Vectors on disk keyed by a digest of (provider name, text)."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)

    @staticmethod
    def key(provider_name: str, text: str) -> str:
        return hashlib.sha256(f"{provider_name}\0{text}".encode("utf-8")).hexdigest()

    def path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        p = self.path(key)
        return np.load(p) if p.exists() else None

    def put(self, key: str, vec: np.ndarray) -> None:
        p = self.path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_name(p.stem + ".tmp.npy")
        np.save(tmp, np.asarray(vec, dtype=np.float64))
        os.replace(tmp, p)


def embed_corpus(corpus: ReasoningCorpus, provider: EmbeddingProvider, cache: EmbeddingCache | None = None
                 ) -> ReasoningCorpus:
    """Attach one vector per document, reusing cached vectors and embedding each distinct text once."""
    texts = [d.text for d in corpus.docs]
    unique = list(dict.fromkeys(texts))
    vectors: dict[str, np.ndarray] = {}
    missing = []
    for t in unique:
        v = cache.get(EmbeddingCache.key(provider.name, t)) if cache else None
        if v is None:
            missing.append(t)
        else:
            vectors[t] = v
    if missing:
        new = np.asarray(provider.embed(missing), dtype=float)
        if new.shape[0] != len(missing):
            raise RuntimeError(f"provider returned {new.shape[0]} vectors for {len(missing)} texts")
        for t, v in zip(missing, new):
            vectors[t] = v
            if cache:
                cache.put(EmbeddingCache.key(provider.name, t), v)
    dims = {v.shape for v in vectors.values()}
    if len(dims) > 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    E = np.vstack([vectors[t] for t in texts]) if texts else np.zeros((0, 0))
    return replace(corpus, embeddings=E)


def centroid_distances(embeddings: np.ndarray) -> np.ndarray:
    """Euclidean distance of each row to the global centroid (the KW scalar)."""
    E = np.asarray(embeddings, dtype=float)
    return np.linalg.norm(E - E.mean(axis=0), axis=1)


def _check_groups(groups) -> list[np.ndarray]:
    gs = [np.asarray(g, dtype=float).ravel() for g in (groups.values() if isinstance(groups, Mapping) else groups)]
    if len(gs) < 2:
        raise ValueError("need at least 2 groups")
    if any(g.size == 0 for g in gs):
        raise ValueError("empty group")
    return gs


def kruskal_wallis_epsilon(groups) -> dict:
    """Kruskal-Wallis H (tie-corrected), its chi-square p-value and ``eps2 = H/(n-1)``."""
    gs = _check_groups(groups)
    n = sum(g.size for g in gs)
    allv = np.concatenate(gs)
    if np.all(allv == allv[0]):
        H, p = 0.0, 1.0
    else:
        H, p = stats.kruskal(*gs)
    return {"H": float(H), "p": float(p), "epsilon2": float(H) / (n - 1), "n": n, "k": len(gs), "df": len(gs) - 1}


def cliffs_delta(a, b) -> float:
    """``(#{a > b} - #{a < b}) / (|A| |B|)`` via sorted counting."""
    a = np.asarray(a, dtype=float)
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty group")
    greater = np.searchsorted(b, a, side="left").sum()
    less = (b.size - np.searchsorted(b, a, side="right")).sum()
    return float(greater - less) / (a.size * b.size)


def cliffs_delta_posthoc(groups: Mapping[str, Sequence[float]] | Sequence, names: Sequence[str] | None = None
                         ) -> list[dict]:
    """All pairwise Cliff's deltas with Mann-Whitney p-values and BH q-values."""
    if isinstance(groups, Mapping):
        names = list(groups)
    gs = _check_groups(groups)
    names = list(names) if names is not None else [str(i) for i in range(len(gs))]
    rows = []
    for (i, a), (j, b) in combinations(enumerate(gs), 2):
        d = cliffs_delta(a, b)
        if np.all(np.concatenate([a, b]) == a[0]):
            p = 1.0
        else:
            p = float(stats.mannwhitneyu(a, b, alternative="two-sided").pvalue)
        rows.append({"pair": (names[i], names[j]), "delta": d, "p": p})
    for r, q in zip(rows, bh_fdr([r["p"] for r in rows])):
        r["q"] = float(q)
    return rows


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower().replace("’", "'"))


def ngrams(tokens: Sequence[str], lo: int = 1, hi: int = 3) -> list[str]:
    out = []
    for n in range(lo, hi + 1):
        out += [" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    return out


@dataclass
class Phrase:
    phrase: str
    count: int
    rank: int  # competition rank by within-group frequency over all n-grams
    ratio: float


def distinctive_phrases(corpus: ReasoningCorpus | Mapping[str, Sequence[str]], by: str = "model",
                        ngram_range: tuple[int, int] = (1, 3), top_k: int = 10, threshold: float = 3.0,
                        min_support: int = 5) -> dict[str, list[Phrase]]:
    """Phrases over-represented in one group relative to all other groups pooled.

    A phrase qualifies for group ``g`` when it occurs at least ``min_support``
    times there, its relative frequency is at least ``threshold`` times the
    pooled rate elsewhere, and ``g`` is the group where its relative frequency
    is highest (so each phrase lands in at most one group). ``rank`` is the
    phrase's position in the group's overall frequency list.
    """
    if isinstance(corpus, ReasoningCorpus):
        texts = defaultdict(list)
        for d in corpus.docs:
            texts[getattr(d, by)].append(d.text)
    else:
        texts = {k: list(v) for k, v in corpus.items()}
    counts = {g: Counter(gram for t in ts for gram in ngrams(tokenize(t), *ngram_range))
              for g, ts in sorted(texts.items())}
    totals = {g: sum(c.values()) for g, c in counts.items()}
    grand = Counter()
    for c in counts.values():
        grand.update(c)
    grand_total = sum(totals.values())
    rel = {g: {p: n / totals[g] for p, n in c.items()} for g, c in counts.items() if totals[g]}
    best = {}
    for p in grand:
        # ties in relative frequency resolved by group name; a tie means no group is distinctive anyway
        best[p] = max(rel, key=lambda g: (rel[g].get(p, 0.0), g))
    out = {}
    for g, c in counts.items():
        ordered = sorted(c.items(), key=lambda kv: (-kv[1], -len(kv[0].split()), kv[0]))
        ranks, prev, rank = {}, None, 0
        for pos, (p, n) in enumerate(ordered, start=1):
            if n != prev:
                rank, prev = pos, n
            ranks[p] = rank
        other_total = grand_total - totals[g]
        found = []
        for p, n in ordered:
            if n < min_support or best[p] != g:
                continue
            other = grand[p] - n
            rf = n / totals[g]
            rf_other = other / other_total if other_total else 0.0
            ratio = float("inf") if rf_other == 0 else rf / rf_other
            if ratio >= threshold:
                found.append(Phrase(p, n, ranks[p], ratio))
            if top_k and len(found) >= top_k:
                break
        out[g] = found
    return out
