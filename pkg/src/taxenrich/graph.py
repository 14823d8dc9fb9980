"""Heterogeneous term graph and relational GCN structural embeddings.

Edges are stored as ``(src, dst)`` index pairs: ``dst`` aggregates messages
from ``src``. ``N(v, r)`` is therefore the set of sources of edges into v.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .corpus import ItemProfile, QueryRecord, tokenize
from .taxonomy import Taxonomy, normalize_term

RELATIONS = ("r1", "r2", "r3")
R1_DIRECTIONS = ("C->P", "P->C", "C<->P")


class GraphError(ValueError):
    pass


@dataclass
class HetGraph:
    nodes: list[str]
    n_core: int
    r1: list[tuple[int, int]]
    r2: list[tuple[int, int]]
    relations: tuple[str, ...] = RELATIONS
    r1_direction: str = "C->P"
    index: dict[str, int] = field(init=False, repr=False)
    _incoming: dict[str, list[list[int]]] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise GraphError("duplicate node names")
        self._incoming = {}
        for rel, edges in (("r1", self.r1), ("r2", self.r2)):
            inc: list[list[int]] = [[] for _ in self.nodes]
            if rel in self.relations:
                for s, d in edges:
                    inc[d].append(s)
            self._incoming[rel] = [sorted(set(x)) for x in inc]
        self._incoming["r3"] = [[i] if "r3" in self.relations else [] for i in range(len(self.nodes))]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def new_terms(self) -> list[str]:
        return self.nodes[self.n_core :]

    def neighbors(self, v: str | int, rel: str) -> list[int]:
        i = self.index[v] if isinstance(v, str) else v
        return list(self._incoming[rel][i])

    def to_json(self) -> dict:
        name = self.nodes
        return {
            "nodes": list(self.nodes),
            "n_core": self.n_core,
            "relations": list(self.relations),
            "r1_direction": self.r1_direction,
            "r1": [[name[s], name[d]] for s, d in self.r1],
            "r2": [[name[s], name[d]] for s, d in self.r2],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HetGraph":
        idx = {t: i for i, t in enumerate(obj["nodes"])}
        return cls(
            nodes=list(obj["nodes"]),
            n_core=obj["n_core"],
            r1=[(idx[s], idx[d]) for s, d in obj["r1"]],
            r2=[(idx[s], idx[d]) for s, d in obj["r2"]],
            relations=tuple(obj.get("relations", RELATIONS)),
            r1_direction=obj.get("r1_direction", "C->P"),
        )

    def with_relations(self, relations: Sequence[str]) -> "HetGraph":
        return HetGraph(self.nodes, self.n_core, self.r1, self.r2, tuple(relations), self.r1_direction)


def _query_index(queries: Sequence[QueryRecord], max_len: int) -> dict[tuple[str, ...], list[int]]:
    index: dict[tuple[str, ...], list[int]] = {}
    for qi, q in enumerate(queries):
        toks = q.query_tokens
        seen = set()
        for a in range(len(toks)):
            for b in range(a + 1, min(len(toks), a + max_len) + 1):
                key = tuple(toks[a:b])
                if key not in seen:
                    seen.add(key)
                    index.setdefault(key, []).append(qi)
    return index


def behavior_edges(
    core: Taxonomy, new_terms: Sequence[str], queries: Sequence[QueryRecord], items: Iterable[ItemProfile]
) -> list[tuple[str, str]]:
    """(v_i, v') pairs: queries mentioning v' -> clicked items -> their assigned core nodes."""
    item_node = {it.id: it.assigned_node for it in items}
    term_toks = {t: tuple(tokenize(t)) for t in new_terms}
    max_len = max((len(x) for x in term_toks.values()), default=1)
    qindex = _query_index(queries, max_len)
    out = []
    for t in new_terms:
        nodes: dict[str, None] = {}
        for qi in qindex.get(term_toks[t], ()):
            for item_id in queries[qi].clicked_item_ids:
                node = item_node.get(item_id)
                if node is None:
                    continue
                if node not in core:
                    raise GraphError(f"item {item_id!r} assigned to unknown node {node!r}")
                nodes[node] = None
        out.extend((n, t) for n in sorted(nodes))
    return out


def build_graph(
    core: Taxonomy,
    new_terms: Sequence[str],
    queries: Sequence[QueryRecord] = (),
    items: Iterable[ItemProfile] = (),
    r1_direction: str = "C->P",
    relations: Sequence[str] = RELATIONS,
) -> HetGraph:
    if r1_direction not in R1_DIRECTIONS:
        raise GraphError(f"r1_direction must be one of {R1_DIRECTIONS}")
    if not set(relations) <= set(RELATIONS):
        raise GraphError(f"unknown relations: {relations}")
    fresh = []
    for t in new_terms:
        t = normalize_term(t)
        if t in core:
            raise GraphError(f"new term already in the core taxonomy: {t!r}")
        fresh.append(t)
    fresh = list(dict.fromkeys(fresh))
    nodes = core.nodes + fresh
    idx = {t: i for i, t in enumerate(nodes)}
    r1 = []
    for p, c in core.edges:
        if r1_direction in ("C->P", "C<->P"):
            r1.append((idx[c], idx[p]))
        if r1_direction in ("P->C", "C<->P"):
            r1.append((idx[p], idx[c]))
    r2 = [(idx[v], idx[t]) for v, t in behavior_edges(core, fresh, queries, items)]
    return HetGraph(nodes, len(core), r1, r2, tuple(relations), r1_direction)


def save_graph(graph: HetGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")


def load_graph(path: str | Path) -> HetGraph:
    return HetGraph.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# -- RGCN ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class RgcnConfig:
    dim: int
    layers: int = 2
    sample_size: int | None = 5
    relations: tuple[str, ...] = RELATIONS

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("RGCN needs at least one layer")


def rgcn_param_name(layer: int, rel: str) -> str:
    return f"rgcn.l{layer}.{rel}"


def init_rgcn(params: nn.ParamSet, cfg: RgcnConfig, rng: np.random.Generator) -> None:
    for layer in range(cfg.layers):
        for rel in cfg.relations:
            params.add(rgcn_param_name(layer, rel), nn.xavier_uniform(rng, cfg.dim, cfg.dim))


def sample_adjacency(
    graph: HetGraph, cfg: RgcnConfig, rng: np.random.Generator | None
) -> list[dict[str, tuple[np.ndarray, np.ndarray] | None]]:
    """Per layer and relation, sampled message edges as ``(src, dst)`` index arrays.

    Neighbor lists no longer than ``sample_size`` are used whole; longer ones
    are subsampled without replacement. ``rng=None`` or ``sample_size=None``
    disables sampling. The self-loop relation is returned as ``None`` (identity).
    """
    n = len(graph)
    out = []
    for _layer in range(cfg.layers):
        mats: dict[str, tuple[np.ndarray, np.ndarray] | None] = {}
        for rel in cfg.relations:
            if rel == "r3":
                mats[rel] = None
                continue
            src: list[int] = []
            dst: list[int] = []
            for v in range(n):
                nbrs = graph.neighbors(v, rel)
                if cfg.sample_size is not None and rng is not None and len(nbrs) > cfg.sample_size:
                    pick = rng.choice(len(nbrs), cfg.sample_size, replace=False)
                    nbrs = [nbrs[k] for k in sorted(pick)]
                src.extend(nbrs)
                dst.extend([v] * len(nbrs))
            mats[rel] = (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
        out.append(mats)
    return out


def dense_adjacency(edges: tuple[np.ndarray, np.ndarray] | None, n: int) -> np.ndarray:
    """0/1 matrix with ``A[dst, src] = 1``; ``None`` (self loops) gives the identity."""
    if edges is None:
        return np.eye(n)
    A = np.zeros((n, n))
    A[edges[1], edges[0]] = 1.0
    return A


def rgcn_forward(
    params: nn.ParamSet,
    cfg: RgcnConfig,
    h0: np.ndarray | nn.Tensor,
    adjacency: list[dict[str, tuple[np.ndarray, np.ndarray] | None]],
    c_norm: float = 1.0,
) -> nn.Tensor:
    """h^{l+1} = ReLU(sum_r sum_{i in N(v,r)} (1/c) W_r^l h_i^l); returns h^L for every node."""
    h = h0 if isinstance(h0, nn.Tensor) else nn.Tensor(h0)
    if h.shape[1] != cfg.dim:
        raise ValueError(f"h0 has dim {h.shape[1]}, RGCN expects {cfg.dim}")
    n = h.shape[0]
    for layer in range(cfg.layers):
        total = None
        for rel in cfg.relations:
            W = params[rgcn_param_name(layer, rel)]
            msg = nn.matmul(h, nn.transpose(W))
            edges = adjacency[layer][rel]
            if edges is not None:
                msg = nn.scatter_add(msg, edges[0], edges[1], n)
            if c_norm != 1.0:
                msg = nn.mul(msg, 1.0 / c_norm)
            total = msg if total is None else nn.add(total, msg)
        h = nn.relu(total)
    return h
