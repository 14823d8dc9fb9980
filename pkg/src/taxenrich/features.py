"""Word vectors, head words, relationship measures, and binned lexical features."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import nn
from .corpus import tokenize
from .taxonomy import normalize_term

# -- embedding store -----------------------------------------------------------------


def fnv1a(s: str) -> int:
    h = 2166136261
    for byte in s.encode("utf-8"):
        h ^= byte
        h = (h * 16777619) & 0xFFFFFFFF
    return h


class EmbeddingStore:
    """Fixed token vectors with a deterministic subword-hash fallback.

    OOV tokens get the mean of hashed character n-gram bucket vectors; each
    bucket vector is drawn from a generator seeded by ``(seed, bucket)`` so the
    table never needs to be materialized.
    """

    def __init__(self, vectors: dict[str, np.ndarray], dim: int, buckets: int = 2**16,
                 minn: int = 3, maxn: int = 5, seed: int = 0):
        self.dim = dim
        self.buckets = buckets
        self.minn, self.maxn = minn, maxn
        self.seed = seed
        self._vectors = {}
        for k, v in vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (dim,):
                raise ValueError(f"vector for {k!r} has shape {v.shape}, expected ({dim},)")
            v.setflags(write=False)
            self._vectors[k] = v
        self._bucket_cache: dict[int, np.ndarray] = {}
        self._term_cache: dict[str, np.ndarray] = {}

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    @classmethod
    def load(cls, path: str | Path, **kw) -> "EmbeddingStore":
        """Read word2vec text format (``N D`` header, then ``token v1 .. vD``)."""
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: missing 'N D' header")
            n, dim = int(header[0]), int(header[1])
            for lineno, line in enumerate(fh, 2):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values")
                vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
        if len(vectors) != n:
            raise ValueError(f"{path}: header says {n} vectors, found {len(vectors)}")
        return cls(vectors, dim, **kw)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self._vectors)} {self.dim}\n")
            for k, v in self._vectors.items():
                fh.write(k + " " + " ".join(repr(float(x)) for x in v) + "\n")

    def _bucket(self, b: int) -> np.ndarray:
        vec = self._bucket_cache.get(b)
        if vec is None:
            rng = np.random.default_rng((self.seed, b))
            vec = rng.normal(0.0, 1.0 / np.sqrt(self.dim), self.dim)
            self._bucket_cache[b] = vec
        return vec

    def ngrams(self, token: str) -> list[str]:
        w = f"<{token}>"
        return [w[i : i + n] for n in range(self.minn, self.maxn + 1) for i in range(len(w) - n + 1)]

    def subword_vector(self, token: str) -> np.ndarray:
        grams = self.ngrams(token) or [f"<{token}>"]
        return np.mean([self._bucket(fnv1a(g) % self.buckets) for g in grams], axis=0)

    def token_vector(self, token: str) -> np.ndarray:
        v = self._vectors.get(token)
        return v if v is not None else self.subword_vector(token)

    def term_vector(self, term: str) -> np.ndarray:
        term = normalize_term(term)
        cached = self._term_cache.get(term)
        if cached is not None:
            return cached
        key = term.replace(" ", "_")
        if key in self._vectors:
            vec = self._vectors[key]
        else:
            toks = tokenize(term) or [key]
            vec = np.mean([self.token_vector(t) for t in toks], axis=0)
        self._term_cache[term] = vec
        return vec

    def matrix(self, terms: Sequence[str]) -> np.ndarray:
        if not terms:
            return np.zeros((0, self.dim))
        return np.stack([self.term_vector(t) for t in terms])


# -- head words and relationship measures ---------------------------------------------

_SEPARATORS = re.compile(r"\s*(?:&|,|\band\b)\s*")


def head_words(term: str) -> list[str]:
    """Split grouping terms on '&', ',' and ' and '; each chunk's head is its last token."""
    chunks = [c.strip() for c in _SEPARATORS.split(normalize_term(term))]
    heads = []
    for chunk in chunks:
        toks = tokenize(chunk)
        if toks:
            heads.append(toks[-1])
    if not heads:
        heads = [normalize_term(term).split()[-1]]
    return heads


class RelMeasure(NamedTuple):
    l1: float
    l2: float
    cos: float


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def rel_measure(a: np.ndarray, b: np.ndarray) -> RelMeasure:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return RelMeasure(float(np.abs(d).sum()), float(np.sqrt((d * d).sum())), _cos(a, b))


def rel_block(a, b) -> nn.Tensor:
    """Batched relationship measure on the tape: rows of (l1, l2, cos)."""
    d = nn.sub(a, b)
    cols = [nn.l1_norm(d), nn.l2_norm(d), nn.cosine(a, b)]
    return nn.stack(cols, axis=-1)


def head_similarity(v: str, v2: str, store: EmbeddingStore) -> float:
    return max(
        _cos(store.term_vector(h1), store.term_vector(h2))
        for h1 in head_words(v)
        for h2 in head_words(v2)
    )


def semantic_rep(v: str, v2: str, store: EmbeddingStore) -> np.ndarray:
    return np.concatenate([[head_similarity(v, v2, store)], store.term_vector(v), store.term_vector(v2)])


# -- lexical features -------------------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def longest_common_substring(a: str, b: str) -> int:
    best = 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, 1):
            if ca == cb:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best


def _char_codes(strings: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Right-padded code-point matrix (pad -1) and lengths."""
    lens = np.array([len(s) for s in strings], dtype=np.int64)
    codes = np.full((len(strings), max(int(lens.max(initial=0)), 1)), -1, dtype=np.int64)
    for k, s in enumerate(strings):
        codes[k, : len(s)] = [ord(ch) for ch in s]
    return codes, lens


def string_measures_many(strings: Sequence[str], b: str) -> tuple[np.ndarray, np.ndarray]:
    """Levenshtein distance and longest common substring of each string against ``b``.

    Same recurrences as :func:`levenshtein` and :func:`longest_common_substring`,
    run column-wise over all strings at once.
    """
    codes, lens = _char_codes(strings)
    n, width = codes.shape
    rows = np.arange(n)
    dist_prev = np.tile(np.arange(width + 1), (n, 1))
    run_prev = np.zeros((n, width + 1), dtype=np.int64)
    best = np.zeros(n, dtype=np.int64)
    for i, ch in enumerate(b, 1):
        eq = codes == ord(ch)
        dist = np.empty_like(dist_prev)
        dist[:, 0] = i
        for j in range(1, width + 1):
            dist[:, j] = np.minimum(np.minimum(dist_prev[:, j], dist[:, j - 1]) + 1, dist_prev[:, j - 1] + ~eq[:, j - 1])
        run = np.zeros_like(run_prev)
        run[:, 1:] = (run_prev[:, :-1] + 1) * eq
        best = np.maximum(best, run.max(axis=1))
        dist_prev, run_prev = dist, run
    return dist_prev[rows, lens], best


def suffix_match(a: str, b: str) -> int:
    """Number of common trailing tokens."""
    ta, tb = a.split(), b.split()
    k = 0
    while k < min(len(ta), len(tb)) and ta[-1 - k] == tb[-1 - k]:
        k += 1
    return k


@dataclass(frozen=True)
class LexicalFeatures:
    ends_with: bool
    contains: bool
    suffix_match: int
    lcs_len: int
    len_diff: int
    edit_dist: int

    def as_tuple(self) -> tuple:
        return (self.ends_with, self.contains, self.suffix_match, self.lcs_len, self.len_diff, self.edit_dist)


def lexical_features(hyper: str, hypo: str) -> LexicalFeatures:
    """Raw string features for (candidate hypernym, candidate hyponym)."""
    return LexicalFeatures(
        ends_with=hypo.endswith(hyper),
        contains=hyper in hypo,
        suffix_match=suffix_match(hyper, hypo),
        lcs_len=longest_common_substring(hyper, hypo),
        len_diff=len(hypo) - len(hyper),
        edit_dist=levenshtein(hyper, hypo),
    )


def lexical_matrix(hypers: Sequence[str], hypo: str) -> np.ndarray:
    """Raw lexical features of every candidate hypernym against one hyponym, shape (n, 6)."""
    dist, lcs = string_measures_many(hypers, hypo)
    out = np.empty((len(hypers), 6), dtype=np.int64)
    for k, h in enumerate(hypers):
        out[k, :3] = (hypo.endswith(h), h in hypo, suffix_match(h, hypo))
        out[k, 4] = len(hypo) - len(h)
    out[:, 3] = lcs
    out[:, 5] = dist
    return out


LEXICAL_NAMES = ("ends_with", "contains", "suffix_match", "lcs_len", "len_diff", "edit_dist")
BIN_DIM = 10


@dataclass(frozen=True)
class BinSpec:
    """Right-closed bin edges per feature; value x falls in bin ``searchsorted(edges, x)``."""

    edges: tuple[tuple[int, ...], ...] = (
        (0,),  # False / True
        (0,),
        (0, 1, 2),  # 0, 1, 2, >=3
        (0, 2, 5, 10),  # 0, 1-2, 3-5, 6-10, >=11
        (-6, -1, 0, 5),  # <=-6, -5..-1, 0, 1..5, >=6
        (0, 2, 5, 10),
    )
    dim: int = BIN_DIM

    @property
    def sizes(self) -> list[int]:
        return [len(e) + 1 for e in self.edges]

    @property
    def offsets(self) -> list[int]:
        return [int(x) for x in np.cumsum([0] + self.sizes[:-1])]

    @property
    def n_rows(self) -> int:
        return sum(self.sizes)

    def local_bin(self, k: int, value) -> int:
        return int(np.searchsorted(self.edges[k], int(value), side="left"))

    def ids(self, feats: LexicalFeatures) -> list[int]:
        return [off + self.local_bin(k, x) for k, (off, x) in enumerate(zip(self.offsets, feats.as_tuple()))]

    def ids_many(self, raw: np.ndarray) -> np.ndarray:
        """Row ids for a (n, 6) matrix of raw feature values."""
        cols = [off + np.searchsorted(e, raw[:, k], side="left") for k, (off, e) in enumerate(zip(self.offsets, self.edges))]
        return np.stack(cols, axis=1).astype(np.int64) if len(raw) else np.zeros((0, len(self.edges)), dtype=np.int64)

    def to_json(self) -> dict:
        labels = []
        for name, edges in zip(LEXICAL_NAMES, self.edges):
            lo = None
            bins = []
            for e in edges:
                bins.append([lo, e])
                lo = e + 1
            bins.append([lo, None])
            labels.append({"feature": name, "bins_inclusive": bins})
        return {
            "dim": self.dim,
            "features": labels,
            "notes": "len_diff is signed, in characters: len(hyponym) - len(hypernym); booleans map False->0, True->1",
        }


def init_bin_table(spec: BinSpec, rng: np.random.Generator) -> np.ndarray:
    return nn.xavier_uniform(rng, spec.n_rows, spec.dim)


def lexical_rep(hyper: str, hypo: str, spec: BinSpec, table: nn.Tensor | np.ndarray) -> nn.Tensor:
    ids = spec.ids(lexical_features(hyper, hypo))
    t = table if isinstance(table, nn.Tensor) else nn.Tensor(table)
    return nn.reshape(nn.take(t, ids), (len(ids) * spec.dim,))


def save_bins(spec: BinSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=1) + "\n")
