"""Reference attachment baselines: Random, Root, Substr, I2T."""

from __future__ import annotations

from collections import Counter
from typing import Sequence

import numpy as np

from .corpus import ItemProfile, contains_term, tokenize
from .taxonomy import Taxonomy


def random_attach(terms: Sequence[str], core: Taxonomy, seed: int = 0) -> dict[str, str]:
    rng = np.random.default_rng(seed)
    nodes = core.nodes
    return {t: nodes[int(rng.integers(len(nodes)))] for t in terms}


def root_attach(terms: Sequence[str], core: Taxonomy) -> dict[str, str]:
    return {t: core.root for t in terms}


def substr_parent(term: str, core: Taxonomy) -> str:
    """Longest core term that is a substring of ``term``; ties lexicographic; else the root."""
    hits = [v for v in core.nodes if v in term and v != term]
    if not hits:
        return core.root
    return min(hits, key=lambda v: (-len(v), v))


def substr_attach(terms: Sequence[str], core: Taxonomy) -> dict[str, str]:
    return {t: substr_parent(t, core) for t in terms}


def i2t_attach(terms: Sequence[str], core: Taxonomy, items: Sequence[ItemProfile]) -> dict[str, str]:
    """Majority vote over the core nodes of items whose titles mention the term."""
    out = {}
    for t in terms:
        toks = tokenize(t)
        votes = Counter(
            it.assigned_node
            for it in items
            if it.assigned_node is not None and it.assigned_node in core and contains_term(it.title_tokens, toks)
        )
        if not votes:
            out[t] = core.root
        else:
            out[t] = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    return out
