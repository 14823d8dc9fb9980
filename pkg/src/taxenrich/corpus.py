"""Item profiles, queries, distant BIOE labels and the term-level extraction split."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

TAGS = ("B", "I", "O", "E")
TAG_INDEX = {t: i for i, t in enumerate(TAGS)}

_STRIP = string.punctuation.replace("&", "")


def tokenize(text: str) -> list[str]:
    """Whitespace tokenizer with punctuation trimming.

    >>> tokenize("Dairy, Cheese & Eggs")
    ['dairy', 'cheese', '&', 'eggs']
    """
    out = []
    for raw in text.casefold().split():
        pieces = raw.split("&")
        for k, piece in enumerate(pieces):
            if k:
                out.append("&")
            tok = piece.strip(_STRIP)
            if tok:
                out.append(tok)
    return out


@dataclass(frozen=True)
class ItemProfile:
    id: str
    title_tokens: tuple[str, ...]
    assigned_node: str | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "ItemProfile":
        tokens = tokenize(obj["title"])
        if not tokens:
            raise ValueError(f"item {obj.get('id')!r} has an empty title")
        node = obj.get("node")
        if node is not None:
            from .taxonomy import normalize_term

            node = normalize_term(node)
        return cls(str(obj["id"]), tuple(tokens), node)

    def to_json(self) -> dict:
        return {"id": self.id, "title": " ".join(self.title_tokens), "node": self.assigned_node}


@dataclass(frozen=True)
class QueryRecord:
    query_tokens: tuple[str, ...]
    clicked_item_ids: tuple[str, ...]

    @classmethod
    def from_json(cls, obj: dict) -> "QueryRecord":
        return cls(tuple(tokenize(obj["query"])), tuple(str(c) for c in obj.get("clicks", [])))

    def to_json(self) -> dict:
        return {"query": " ".join(self.query_tokens), "clicks": list(self.clicked_item_ids)}


@dataclass(frozen=True)
class TaggedSequence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError(f"length mismatch: {len(self.tokens)} tokens vs {len(self.tags)} tags")

    @property
    def well_formed(self) -> bool:
        return is_well_formed(self.tags)


def is_well_formed(tags: Sequence[str]) -> bool:
    """I/E only continue an open B...; an open span ends with E unless it is a lone B."""
    open_span = False  # inside B I* awaiting E
    span_len = 0
    for tag in tags:
        if tag in ("I", "E"):
            if not open_span:
                return False
            if tag == "E":
                open_span = False
            else:
                span_len += 1
        else:
            if open_span and span_len > 0:  # B I ... not closed
                return False
            open_span = tag == "B"
            span_len = 0
            if tag not in ("B", "O"):
                raise ValueError(f"unknown tag {tag!r}")
    return not (open_span and span_len > 0)


def _vocab_index(vocab: Iterable[str]) -> dict[str, list[tuple[str, ...]]]:
    """First token -> candidate token tuples, longest first."""
    index: dict[str, list[tuple[str, ...]]] = {}
    for term in vocab:
        toks = tuple(tokenize(term))
        if toks:
            index.setdefault(toks[0], []).append(toks)
    for cands in index.values():
        cands.sort(key=lambda t: (-len(t), t))
    return index


def match_spans(tokens: Sequence[str], vocab: Iterable[str] | dict) -> list[tuple[int, int]]:
    """Greedy left-to-right longest match; returns half-open token spans."""
    index = vocab if isinstance(vocab, dict) else _vocab_index(vocab)
    spans = []
    i, n = 0, len(tokens)
    while i < n:
        hit = 0
        for cand in index.get(tokens[i], ()):
            k = len(cand)
            if i + k <= n and tuple(tokens[i : i + k]) == cand:
                hit = k
                break
        if hit:
            spans.append((i, i + hit))
            i += hit
        else:
            i += 1
    return spans


def spans_to_tags(n: int, spans: Iterable[tuple[int, int]]) -> list[str]:
    tags = ["O"] * n
    for a, b in spans:
        tags[a] = "B"
        for k in range(a + 1, b - 1):
            tags[k] = "I"
        if b - a > 1:
            tags[b - 1] = "E"
    return tags


def distant_label(tokens: Sequence[str], vocab: Iterable[str] | dict) -> TaggedSequence:
    spans = match_spans(tokens, vocab)
    return TaggedSequence(tuple(tokens), tuple(spans_to_tags(len(tokens), spans)))


def decode_spans(tags: Sequence[str], tokens: Sequence[str]) -> list[str]:
    """Read lone-B and B I* E chunks; malformed fragments are dropped."""
    if len(tags) != len(tokens):
        raise ValueError(f"length mismatch: {len(tags)} tags vs {len(tokens)} tokens")
    out = []
    i, n = 0, len(tags)
    while i < n:
        if tags[i] != "B":
            i += 1
            continue
        j = i + 1
        while j < n and tags[j] == "I":
            j += 1
        if j < n and tags[j] == "E":
            out.append(" ".join(tokens[i : j + 1]))
            i = j + 1
        elif j == i + 1:
            out.append(tokens[i])
            i = j
        else:
            i = j  # B I+ without E
    return out


def contains_term(tokens: Sequence[str], term_tokens: Sequence[str]) -> bool:
    k = len(term_tokens)
    if k == 0:
        return False
    tt = tuple(term_tokens)
    return any(tuple(tokens[i : i + k]) == tt for i in range(len(tokens) - k + 1))


# -- I/O -----------------------------------------------------------------------

def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_items(path: str | Path) -> list[ItemProfile]:
    return [ItemProfile.from_json(o) for o in read_jsonl(path)]


def load_queries(path: str | Path) -> list[QueryRecord]:
    return [QueryRecord.from_json(o) for o in read_jsonl(path)]


def load_labels(path: str | Path) -> list[TaggedSequence]:
    return [TaggedSequence(tuple(o["tokens"]), tuple(o["tags"])) for o in read_jsonl(path)]


def label_rows(items: Sequence[ItemProfile], vocab: Iterable[str]) -> list[dict]:
    index = _vocab_index(vocab)
    rows = []
    for item in items:
        seq = distant_label(item.title_tokens, index)
        rows.append({"id": item.id, "tokens": list(seq.tokens), "tags": list(seq.tags)})
    return rows


# -- closed-world extraction split ---------------------------------------------

@dataclass
class ExtractionSplit:
    train_terms: list[str]
    test_terms: list[str]
    train: list[TaggedSequence]  # titles labeled with train terms only
    test_pairs: list[tuple[str, str]]  # (item id, term)

    def to_json(self) -> dict:
        return {"train_terms": self.train_terms, "test_terms": self.test_terms, "test_pairs": [list(p) for p in self.test_pairs]}


def build_extraction_split(
    items: Sequence[ItemProfile], vocab: Iterable[str], ratio: float = 0.8, seed: int = 0
) -> ExtractionSplit:
    """Split (title, term) pairs by term so no term is on both sides.

    Titles that mention any test term are excluded from training.
    """
    index = _vocab_index(vocab)
    mentions: dict[str, list[int]] = {}
    per_item: list[list[str]] = []
    for k, item in enumerate(items):
        terms = [" ".join(item.title_tokens[a:b]) for a, b in match_spans(item.title_tokens, index)]
        per_item.append(terms)
        for t in dict.fromkeys(terms):
            mentions.setdefault(t, []).append(k)
    matched = sorted(mentions)
    if len(matched) < 2:
        raise ValueError(f"too few matched terms for an extraction split: {len(matched)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(matched))
    n_train = min(max(1, int(round(ratio * len(matched)))), len(matched) - 1)
    train_terms = sorted(matched[i] for i in order[:n_train])
    test_terms = sorted(matched[i] for i in order[n_train:])
    test_set = set(test_terms)
    train_index = _vocab_index(train_terms)
    train, test_pairs = [], []
    for item, terms in zip(items, per_item):
        hits = [t for t in terms if t in test_set]
        if hits:
            test_pairs.extend((item.id, t) for t in dict.fromkeys(hits))
        elif terms:
            train.append(distant_label(item.title_tokens, train_index))
    return ExtractionSplit(train_terms, test_terms, train, test_pairs)
