"""Core taxonomy data model: a rooted tree of normalized terms."""

from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_WS = re.compile(r"\s+")


class TaxonomyError(ValueError):
    """Raised when an edge list does not describe a single rooted tree."""


def normalize_term(surface: str) -> str:
    """Case-fold and collapse internal whitespace. Punctuation is kept."""
    term = _WS.sub(" ", surface.casefold()).strip()
    if not term:
        raise TaxonomyError(f"empty term: {surface!r}")
    return term


class Taxonomy:
    """Immutable tree of terms with parent/children maps.

    Children keep insertion order; every traversal (``nodes``, ``edges``)
    is breadth-first over that order so output is deterministic.
    """

    def __init__(self, root: str, parent: dict[str, str], children: dict[str, list[str]]):
        self.root = root
        self._parent = parent
        self._children = children
        self._nodes = self._bfs()
        self._validate()

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> "Taxonomy":
        parent: dict[str, str] = {}
        children: dict[str, list[str]] = {}
        seen: list[str] = []
        for p_raw, c_raw in edges:
            p, c = normalize_term(p_raw), normalize_term(c_raw)
            if p == c:
                raise TaxonomyError(f"cycle detected: self-loop on {p!r}")
            if c in parent:
                if parent[c] == p:
                    raise TaxonomyError(f"duplicate edge {p!r} -> {c!r}")
                raise TaxonomyError(f"multiple parents for {c!r}: {parent[c]!r}, {p!r}")
            parent[c] = p
            for t in (p, c):
                if t not in children:
                    children[t] = []
                    seen.append(t)
            children[p].append(c)
        if not seen:
            raise TaxonomyError("empty taxonomy")
        roots = [t for t in seen if t not in parent]
        if not roots:
            raise TaxonomyError("cycle detected: no root")
        if len(roots) > 1:
            # a cycle detached from the main tree also yields an unreachable component
            raise TaxonomyError(f"multiple roots: {roots[:5]}")
        return cls(roots[0], parent, children)

    @classmethod
    def single(cls, root: str) -> "Taxonomy":
        r = normalize_term(root)
        return cls(r, {}, {r: []})

    def _bfs(self) -> list[str]:
        order = [self.root]
        queue = deque([self.root])
        while queue:
            for c in self._children[queue.popleft()]:
                order.append(c)
                queue.append(c)
        return order

    def _validate(self) -> None:
        if self.root in self._parent:
            raise TaxonomyError("root has a parent")
        if len(self._nodes) != len(self._children):
            missing = sorted(set(self._children) - set(self._nodes))
            raise TaxonomyError(f"cycle detected: unreachable nodes {missing[:5]}")
        for c, p in self._parent.items():
            if c not in self._children[p]:
                raise TaxonomyError(f"inconsistent parent/children maps at {c!r}")
        if len(self._parent) != len(self._nodes) - 1:
            raise TaxonomyError("edge count does not match node count")

    # -- queries -----------------------------------------------------------
    @property
    def nodes(self) -> list[str]:
        return list(self._nodes)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(self._parent[c], c) for c in self._nodes[1:]]

    def __contains__(self, term: str) -> bool:
        return term in self._children

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Taxonomy):
            return NotImplemented
        return self.root == other.root and self._parent == other._parent

    def _check(self, t: str) -> None:
        if t not in self._children:
            raise KeyError(f"unknown term: {t!r}")

    def parent(self, t: str) -> str | None:
        self._check(t)
        return self._parent.get(t)

    def children(self, t: str) -> list[str]:
        self._check(t)
        return list(self._children[t])

    def ancestors(self, t: str) -> list[str]:
        """Parent first, root last; empty for the root."""
        self._check(t)
        out = []
        while t in self._parent:
            t = self._parent[t]
            out.append(t)
        return out

    def depth(self, t: str) -> int:
        return len(self.ancestors(t))

    def siblings(self, t: str) -> list[str]:
        p = self.parent(t)
        if p is None:
            return []
        return [c for c in self._children[p] if c != t]

    def leaves(self) -> set[str]:
        return {t for t in self._nodes if not self._children[t]}

    def leaf_list(self) -> list[str]:
        return [t for t in self._nodes if not self._children[t]]

    def parent_map(self) -> dict[str, str]:
        return dict(self._parent)

    # -- mutation (returns new trees) --------------------------------------
    def attach_term(self, parent: str, child: str) -> "Taxonomy":
        parent, child = normalize_term(parent), normalize_term(child)
        if parent not in self._children:
            raise KeyError(f"unknown parent: {parent!r}")
        if child in self._children:
            raise TaxonomyError(f"duplicate child: {child!r}")
        new_parent = dict(self._parent)
        new_children = {k: list(v) for k, v in self._children.items()}
        new_parent[child] = parent
        new_children[parent].append(child)
        new_children[child] = []
        return Taxonomy(self.root, new_parent, new_children)

    def remove_leaves(self, terms: Iterable[str]) -> "Taxonomy":
        drop = set(terms)
        for t in drop:
            self._check(t)
            if self._children[t]:
                raise TaxonomyError(f"not a leaf: {t!r}")
            if t == self.root:
                raise TaxonomyError("cannot remove the root")
        new_parent = {c: p for c, p in self._parent.items() if c not in drop}
        new_children = {k: [c for c in v if c not in drop] for k, v in self._children.items() if k not in drop}
        return Taxonomy(self.root, new_parent, new_children)

    # -- serialization -----------------------------------------------------
    def to_tsv(self) -> str:
        return "".join(f"{p}\t{c}\n" for p, c in self.edges)

    def save_tsv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    def to_json(self) -> dict:
        return {"root": self.root, "edges": [[p, c] for p, c in self.edges]}

    @classmethod
    def from_json(cls, obj: dict) -> "Taxonomy":
        edges = obj.get("edges", [])
        if not edges:
            return cls.single(obj["root"])
        tax = cls.from_edges((p, c) for p, c in edges)
        if tax.root != normalize_term(obj["root"]):
            raise TaxonomyError("declared root does not match edges")
        return tax


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Read a ``parent<TAB>child`` TSV edge list."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise TaxonomyError(f"{path}:{lineno}: expected 'parent<TAB>child'")
            edges.append((parts[0], parts[1]))
    if not edges:
        raise TaxonomyError(f"{path}: empty file")
    return Taxonomy.from_edges(edges)


@dataclass
class LeafSplit:
    """Closed-world hold-out: leaves removed from the core with their gold parents."""

    core: Taxonomy
    train: list[tuple[str, str]]
    dev: list[tuple[str, str]]
    test: list[tuple[str, str]]
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def gold(self, part: str | Sequence[str] = ("train", "dev", "test")) -> dict[str, str]:
        parts = [part] if isinstance(part, str) else part
        return {t: p for name in parts for t, p in getattr(self, name)}

    @property
    def new_terms(self) -> list[str]:
        return [t for t, _ in self.train + self.dev + self.test]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "core": self.core.to_json(),
            "train": [list(x) for x in self.train],
            "dev": [list(x) for x in self.dev],
            "test": [list(x) for x in self.test],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LeafSplit":
        return cls(
            core=Taxonomy.from_json(obj["core"]),
            train=[tuple(x) for x in obj["train"]],
            dev=[tuple(x) for x in obj["dev"]],
            test=[tuple(x) for x in obj["test"]],
            seed=obj.get("seed", 0),
        )


def split_sizes(n: int, ratios: Sequence[float] = (0.64, 0.16, 0.20)) -> tuple[int, int, int]:
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_test = int(round(ratios[2] * n))
    return n_train, n - n_train - n_test, n_test


def ablate_leaves(tax: Taxonomy, ratios: Sequence[float] = (0.64, 0.16, 0.20), seed: int = 0) -> LeafSplit:
    """Hold out every leaf as a new term and split them train/dev/test."""
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError(f"ratios must be three values summing to 1: {ratios}")
    leaves = tax.leaf_list()
    if len(leaves) < 5:
        raise TaxonomyError(f"too few leaves to split: {len(leaves)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(leaves))
    shuffled = [leaves[i] for i in order]
    n_train, n_dev, _ = split_sizes(len(leaves), ratios)
    pairs = [(t, tax.parent(t)) for t in shuffled]
    core = tax.remove_leaves(leaves)
    return LeafSplit(
        core=core,
        train=pairs[:n_train],
        dev=pairs[n_train : n_train + n_dev],
        test=pairs[n_train + n_dev :],
        seed=seed,
    )


def save_split(split: LeafSplit, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_json(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> LeafSplit:
    return LeafSplit.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
