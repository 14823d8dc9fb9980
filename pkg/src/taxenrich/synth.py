"""Deterministic synthetic catalog: taxonomy, word vectors, item titles, queries and clicks.

Names are compositional (a child is a modifier plus either its parent's full
name or its parent's head noun), child vectors partly inherit their parent's
vector, and queries for a term click items from that term's subtree.
Leaf items are filed under the leaf's parent, as a catalog missing its
fine-grained types would file them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import ItemProfile, QueryRecord, write_jsonl
from .features import EmbeddingStore
from .taxonomy import Taxonomy

BASE_NOUNS = (
    "tea", "coffee", "cheese", "bread", "pasta", "rice", "juice", "candy", "cookies", "chips",
    "sauce", "soup", "honey", "nuts", "jam", "cereal", "yogurt", "beans", "vinegar", "spices",
    "crackers", "chocolate", "syrup", "flour", "butter", "noodles", "salsa", "pickles",
)
MODIFIERS = (
    "black", "green", "white", "herbal", "roasted", "ground", "instant", "whole", "sliced", "aged",
    "smoked", "spicy", "sweet", "sour", "salted", "unsalted", "dark", "milk", "creamy", "crunchy",
    "organic", "wild", "raw", "dried", "frozen", "canned", "baked", "fried", "toasted", "grilled",
    "mild", "sharp", "soft", "hard", "light", "rich", "bold", "golden", "brown", "red",
    "yellow", "purple", "mini", "jumbo", "thin", "thick", "flat", "rolled", "cracked", "crushed",
    "blended", "mixed", "plain", "honeyed", "glazed", "candied", "pickled", "fermented", "sprouted", "puffed",
    "italian", "french", "greek", "thai", "indian", "korean", "mexican", "swiss", "irish", "belgian",
    "jasmine", "basmati", "earl", "chai", "mocha", "vanilla", "maple", "cinnamon", "ginger", "lemon",
)
BRANDS = (
    "acme", "bellwood", "cortland", "dunmore", "everly", "fairhaven", "glenbrook", "harlow", "ivybridge",
    "juniper", "kestrel", "larkspur", "milbrook", "northvale", "oakridge", "pemberton", "quillan", "redfern",
)
FILLERS = (
    "pack", "of", "12", "6", "24", "oz", "ounce", "count", "bag", "box", "jar", "bottle", "value",
    "gift", "set", "bulk", "family", "size", "premium", "deluxe", "assorted", "variety", "case", "pouch",
)
SUFFIXES = (("pack", "of", "12"), ("16", "oz"), ("gift", "box"), ("value", "bag"), ("6", "count"), ())


@dataclass
class SynthConfig:
    seed: int = 0
    depth: int = 4
    n_base: int = 18
    branching: tuple[int, int] = (2, 4)
    early_leaf_rate: float = 0.25
    full_name_rate: float = 0.5
    items_per_leaf: int = 3
    items_per_internal: int = 2
    query_rate: float = 0.7
    queries_per_term: int = 2
    clicks_per_query: int = 3
    click_noise: float = 0.1
    noise_rate: float = 0.15
    assign_noise: float = 0.05
    dim: int = 50
    inherit: float = 0.5
    root: str = "grocery"

    def validate(self) -> None:
        rates = ("early_leaf_rate", "full_name_rate", "query_rate", "click_noise", "noise_rate", "assign_noise", "inherit")
        for name in rates:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        lo, hi = self.branching
        if not 1 <= lo <= hi:
            raise ValueError("branching must satisfy 1 <= min <= max")
        if not 1 <= self.n_base <= len(BASE_NOUNS):
            raise ValueError(f"n_base must be in [1, {len(BASE_NOUNS)}]")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        for name in ("items_per_leaf", "items_per_internal", "queries_per_term", "clicks_per_query"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branching"] = list(self.branching)
        return d


@dataclass
class World:
    taxonomy: Taxonomy
    store: EmbeddingStore
    items: list[ItemProfile]
    queries: list[QueryRecord]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "taxonomy": out / "taxonomy.tsv",
            "vectors": out / "vectors.vec",
            "items": out / "items.jsonl",
            "queries": out / "queries.jsonl",
        }
        self.taxonomy.save_tsv(paths["taxonomy"])
        self.store.save(paths["vectors"])
        write_jsonl(paths["items"], (it.to_json() for it in self.items))
        write_jsonl(paths["queries"], (q.to_json() for q in self.queries))
        return paths


def _head(name: str) -> str:
    return name.split()[-1]


def _gen_tree(cfg: SynthConfig, rng: np.random.Generator) -> Taxonomy:
    bases = [BASE_NOUNS[k] for k in sorted(rng.choice(len(BASE_NOUNS), cfg.n_base, replace=False))]
    used = {cfg.root, *bases}
    edges = [(cfg.root, b) for b in bases]
    frontier = [(b, 1) for b in bases]
    while frontier:
        nxt = []
        for name, d in frontier:
            if d >= cfg.depth or (d >= 2 and rng.random() < cfg.early_leaf_rate):
                continue
            for _ in range(int(rng.integers(cfg.branching[0], cfg.branching[1] + 1))):
                child = _child_name(name, cfg, rng, used)
                if child is None:
                    continue
                used.add(child)
                edges.append((name, child))
                nxt.append((child, d + 1))
        frontier = nxt
    return Taxonomy.from_edges(edges)


def _child_name(parent: str, cfg: SynthConfig, rng: np.random.Generator, used: set[str]) -> str | None:
    full_first = rng.random() < cfg.full_name_rate
    taken = set(parent.split())
    for stem in ((parent, _head(parent)) if full_first else (_head(parent), parent)):
        for _ in range(40):
            mod = MODIFIERS[int(rng.integers(len(MODIFIERS)))]
            if mod in taken:
                continue
            name = f"{mod} {stem}"
            if name not in used:
                return name
    return None


def _gen_vectors(tax: Taxonomy, cfg: SynthConfig, rng: np.random.Generator) -> EmbeddingStore:
    D = cfg.dim
    scale = 1.0 / np.sqrt(D)

    def draw():
        return rng.normal(0.0, scale, D)

    vectors: dict[str, np.ndarray] = {}
    def unit():
        v = rng.normal(0.0, 1.0, D)
        return v / np.linalg.norm(v)

    # a child keeps a fraction `inherit` of its parent's direction, so cosine
    # similarity decays geometrically with tree distance
    rho = cfg.inherit
    term_vec: dict[str, np.ndarray] = {tax.root: unit()}
    for node in tax.nodes[1:]:
        p = tax.parent(node)
        if p == tax.root:
            term_vec[node] = unit()
        else:
            term_vec[node] = rho * term_vec[p] + np.sqrt(1.0 - rho * rho) * unit()
    mod_center, filler_center = draw(), draw()
    for tok in MODIFIERS:
        vectors[tok] = mod_center + 0.7 * draw()
    for tok in BRANDS + FILLERS:
        if tok not in vectors:
            vectors[tok] = filler_center + 0.7 * draw()
    for node in tax.nodes:
        vectors[node.replace(" ", "_")] = term_vec[node]
    return EmbeddingStore(vectors, D, seed=cfg.seed)


def _title(term: str, rng: np.random.Generator, noise_rate: float) -> tuple[str, ...]:
    brand = BRANDS[int(rng.integers(len(BRANDS)))]
    suffix = SUFFIXES[int(rng.integers(len(SUFFIXES)))]
    toks = [brand]
    if rng.random() < noise_rate:
        toks.append(FILLERS[int(rng.integers(len(FILLERS)))])
    toks.extend(term.split())
    toks.extend(suffix)
    if rng.random() < noise_rate:
        toks.append(FILLERS[int(rng.integers(len(FILLERS)))])
    return tuple(toks)


def gen_world(cfg: SynthConfig) -> World:
    cfg.validate()
    tax = _gen_tree(cfg, np.random.default_rng((cfg.seed, 0)))
    store = _gen_vectors(tax, cfg, np.random.default_rng((cfg.seed, 1)))

    rng = np.random.default_rng((cfg.seed, 2))
    internal = [t for t in tax.nodes if tax.children(t) and t != tax.root]
    items: list[ItemProfile] = []
    items_of: dict[str, list[str]] = {}
    for node in tax.nodes[1:]:
        is_leaf = not tax.children(node)
        count = cfg.items_per_leaf if is_leaf else cfg.items_per_internal
        for _ in range(count):
            iid = f"i{len(items):06d}"
            home = tax.parent(node) if is_leaf else node
            if internal and rng.random() < cfg.assign_noise:
                home = internal[int(rng.integers(len(internal)))]
            items.append(ItemProfile(iid, _title(node, rng, cfg.noise_rate), home))
            items_of.setdefault(node, []).append(iid)

    rng = np.random.default_rng((cfg.seed, 3))
    all_ids = [it.id for it in items]
    queries: list[QueryRecord] = []
    for node in tax.nodes[1:]:
        if rng.random() >= cfg.query_rate:
            continue
        pool = [iid for t in [node, *_descendants(tax, node)] for iid in items_of.get(t, [])]
        for _ in range(cfg.queries_per_term):
            toks = node.split()
            if rng.random() < 0.5:
                toks = toks + [FILLERS[int(rng.integers(len(FILLERS)))]]
            clicks = []
            for _ in range(cfg.clicks_per_query):
                if pool and rng.random() >= cfg.click_noise:
                    clicks.append(pool[int(rng.integers(len(pool)))])
                elif all_ids:
                    clicks.append(all_ids[int(rng.integers(len(all_ids)))])
            queries.append(QueryRecord(tuple(toks), tuple(clicks)))
    return World(tax, store, items, queries)


def _descendants(tax: Taxonomy, node: str) -> list[str]:
    out, stack = [], list(tax.children(node))
    while stack:
        t = stack.pop(0)
        out.append(t)
        stack.extend(tax.children(t))
    return out
