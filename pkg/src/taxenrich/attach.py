"""Pair representation, two-layer scorer, BCE training with dev selection, inference."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import nn
from .evaluation import edge_prf
from .features import BinSpec, EmbeddingStore, head_words, init_bin_table, lexical_matrix, rel_block
from .graph import HetGraph, RgcnConfig, init_rgcn, rgcn_forward, sample_adjacency
from .taxonomy import LeafSplit, Taxonomy

log = logging.getLogger(__name__)

ANCHOR_MODES = ("core", "train", "both")


@dataclass
class AttachConfig:
    use_L: bool = True
    use_W: bool = True
    use_H: bool = True
    use_G: bool = True
    layers: int = 2
    sample_size: int | None = 5
    c_norm: float = 1.0
    hidden: int = 100
    lr: float = 1e-4
    epochs: int = 50
    patience: int = 10
    batch_size: int = 256
    negative_ratio: str | int = "all"
    anchors: str = "both"
    r1_direction: str = "C->P"
    relations: tuple[str, ...] = ("r1", "r2", "r3")
    seed: int = 0

    def __post_init__(self):
        self.relations = tuple(self.relations)
        if self.anchors not in ANCHOR_MODES:
            raise ValueError(f"anchors must be one of {ANCHOR_MODES}")
        if self.negative_ratio != "all" and int(self.negative_ratio) < 1:
            raise ValueError("negative_ratio must be 'all' or a positive integer")
        if not (self.use_L or self.use_W or self.use_H or self.use_G):
            raise ValueError("at least one representation block must be enabled")

    @property
    def code(self) -> str:
        return " + ".join(k for k, on in (("L", self.use_L), ("W", self.use_W), ("H", self.use_H), ("G", self.use_G)) if on)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relations"] = list(self.relations)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttachConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def rep_dim(cfg: AttachConfig, dim: int) -> int:
    return 9 * cfg.use_G + 1 * cfg.use_H + 2 * dim * cfg.use_W + 6 * BinSpec().dim * cfg.use_L


# -- pair features ----------------------------------------------------------------------


class PairFeaturizer:
    """Caches the fixed (non-trainable) per-pair inputs: head similarity and lexical bin ids."""

    def __init__(self, store: EmbeddingStore, bins: BinSpec | None = None):
        self.store = store
        self.bins = bins or BinSpec()
        self._cache: dict[tuple[str, str], tuple[float, np.ndarray]] = {}
        self._heads: dict[str, np.ndarray] = {}

    def _unit_heads(self, term: str) -> np.ndarray:
        m = self._heads.get(term)
        if m is None:
            m = self.store.matrix(head_words(term))
            norms = np.linalg.norm(m, axis=1, keepdims=True)
            m = np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)
            self._heads[term] = m
        return m

    def _fill(self, cands: Sequence[str], term: str) -> None:
        todo = list(dict.fromkeys(v for v in cands if (v, term) not in self._cache))
        if not todo:
            return
        ids = self.bins.ids_many(lexical_matrix(todo, term))
        th = self._unit_heads(term)
        for k, v in enumerate(todo):
            self._cache[(v, term)] = (float((self._unit_heads(v) @ th.T).max()), ids[k])

    def pair(self, v: str, t: str) -> tuple[float, np.ndarray]:
        self._fill([v], t)
        return self._cache[(v, t)]

    def batch(self, pairs: Sequence[tuple[str, str]]) -> tuple[np.ndarray, np.ndarray]:
        by_term: dict[str, list[str]] = {}
        for v, t in pairs:
            by_term.setdefault(t, []).append(v)
        for t, cands in by_term.items():
            self._fill(cands, t)
        feats = [self._cache[p] for p in pairs]
        H = np.array([f[0] for f in feats], dtype=np.float64)
        ids = np.array([f[1] for f in feats], dtype=np.int64).reshape(len(pairs), len(self.bins.edges))
        return H, ids


@dataclass
class GraphContext:
    """Everything the model reads besides its parameters."""

    graph: HetGraph
    store: EmbeddingStore
    featurizer: PairFeaturizer
    h0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.h0 = self.store.matrix(self.graph.nodes)

    @classmethod
    def build(cls, graph: HetGraph, store: EmbeddingStore, featurizer: PairFeaturizer | None = None) -> "GraphContext":
        return cls(graph, store, featurizer or PairFeaturizer(store))


# -- model ---------------------------------------------------------------------------------


class AttachModel:
    def __init__(self, cfg: AttachConfig, dim: int, params: nn.ParamSet | None = None):
        self.cfg = cfg
        self.dim = dim
        self.bins = BinSpec()
        self.rgcn = RgcnConfig(dim, cfg.layers, cfg.sample_size, cfg.relations)
        if params is None:
            params = nn.ParamSet()
            rng = np.random.default_rng(cfg.seed)
            R = rep_dim(cfg, dim)
            params.add("scorer.W2", nn.xavier_uniform(rng, cfg.hidden, R))
            params.add("scorer.b2", np.zeros(cfg.hidden))
            params.add("scorer.W1", nn.xavier_uniform(rng, 1, cfg.hidden))
            params.add("scorer.b1", np.zeros(1))
            if cfg.use_L:
                params.add("lexical.bins", init_bin_table(self.bins, rng))
            if cfg.use_G:
                init_rgcn(params, self.rgcn, rng)
        self.params = params

    @property
    def rep_dim(self) -> int:
        return rep_dim(self.cfg, self.dim)

    def adjacency(self, ctx: GraphContext, rng: np.random.Generator | None):
        if not self.cfg.use_G:
            return None
        graph = ctx.graph if ctx.graph.relations == self.cfg.relations else ctx.graph.with_relations(self.cfg.relations)
        return sample_adjacency(graph, self.rgcn, rng)

    def structural(self, ctx: GraphContext, adjacency) -> nn.Tensor | None:
        if not self.cfg.use_G:
            return None
        return rgcn_forward(self.params, self.rgcn, ctx.h0, adjacency, self.cfg.c_norm)

    def representation(
        self, ctx: GraphContext, g: nn.Tensor | None, cand: np.ndarray, term: np.ndarray, H: np.ndarray, bin_ids: np.ndarray
    ) -> nn.Tensor:
        """Rows of [s(g_v,g_v'), s(w_v,g_v'), s(g_v,w_v'), H, w_v, w_v', L] for enabled blocks."""
        cfg = self.cfg
        wv, wt = ctx.h0[cand], ctx.h0[term]
        blocks = []
        if cfg.use_G:
            gv, gt = nn.take(g, cand), nn.take(g, term)
            blocks += [rel_block(gv, gt), rel_block(wv, gt), rel_block(gv, wt)]
        if cfg.use_H:
            blocks.append(nn.Tensor(H.reshape(-1, 1)))
        if cfg.use_W:
            blocks += [nn.Tensor(wv), nn.Tensor(wt)]
        if cfg.use_L:
            emb = nn.take(self.params["lexical.bins"], bin_ids)
            blocks.append(nn.reshape(emb, (len(cand), bin_ids.shape[1] * self.bins.dim)))
        return nn.concat(blocks, axis=1)

    def logits(self, rep: nn.Tensor) -> nn.Tensor:
        p = self.params
        hidden = nn.relu(nn.add(nn.matmul(rep, nn.transpose(p["scorer.W2"])), p["scorer.b2"]))
        out = nn.add(nn.matmul(hidden, nn.transpose(p["scorer.W1"])), p["scorer.b1"])
        return nn.reshape(out, (rep.shape[0],))

    def score_pairs(self, ctx: GraphContext, pairs: Sequence[tuple[str, str]], g=None, adjacency=None) -> nn.Tensor:
        """Probabilities for (candidate hypernym, term) pairs."""
        idx = ctx.graph.index
        for v, _ in pairs:
            if v not in idx or idx[v] >= ctx.graph.n_core:
                raise KeyError(f"unknown candidate: {v!r}")
        cand = np.array([idx[v] for v, _ in pairs], dtype=np.int64)
        term = np.array([idx[t] for _, t in pairs], dtype=np.int64)
        H, ids = ctx.featurizer.batch(pairs)
        if g is None and self.cfg.use_G:
            g = self.structural(ctx, adjacency if adjacency is not None else self.adjacency(ctx, eval_rng(self.cfg.seed)))
        return nn.sigmoid(self.logits(self.representation(ctx, g, cand, term, H, ids)))

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"kind": "attach", "dim": self.dim, "config": self.cfg.to_dict()}
        meta.update(extra or {})
        nn.save_checkpoint(self.params, path, extra=meta)

    @classmethod
    def load(cls, path: str | Path) -> "AttachModel":
        state, extra = nn.load_checkpoint(path)
        model = cls(AttachConfig.from_dict(extra["config"]), extra["dim"])
        model.params.load_state(state)
        return model


def eval_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng((seed, 2))


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng((seed, 1, epoch))


# -- training pairs ------------------------------------------------------------------------


def training_anchors(core: Taxonomy, split: LeafSplit | None, anchors: str = "both") -> list[tuple[str, str]]:
    """(term, gold parent) for every supervised anchor."""
    out = []
    if anchors in ("core", "both"):
        out += [(c, p) for p, c in core.edges]
    if anchors in ("train", "both") and split is not None:
        out += list(split.train)
    return out


def build_training_pairs(
    core: Taxonomy,
    split: LeafSplit | None,
    negative_ratio: str | int = "all",
    anchors: str = "both",
    seed: int = 0,
) -> list[tuple[str, str, int]]:
    """(candidate v, anchor t, label) with every core node other than t as a candidate."""
    rng = np.random.default_rng((seed, 3))
    nodes = core.nodes
    out = []
    for t, parent in training_anchors(core, split, anchors):
        out.append((parent, t, 1))
        negs = [v for v in nodes if v != t and v != parent]
        if negative_ratio != "all" and len(negs) > int(negative_ratio):
            pick = np.sort(rng.choice(len(negs), int(negative_ratio), replace=False))
            negs = [negs[k] for k in pick]
        out.extend((v, t, 0) for v in negs)
    return out


# -- inference ---------------------------------------------------------------------------------


@dataclass
class AttachmentPrediction:
    term: str
    ranked: list[tuple[str, float]]

    @property
    def best(self) -> tuple[str, float]:
        return self.ranked[0]

    def top_k(self, k: int) -> list[str]:
        return [v for v, _ in self.ranked[:k]]

    def to_json(self) -> dict:
        return {"term": self.term, "ranked": [[v, p] for v, p in self.ranked]}

    @classmethod
    def from_json(cls, obj: dict) -> "AttachmentPrediction":
        return cls(obj["term"], [(v, float(p)) for v, p in obj["ranked"]])


def top_k(pred: AttachmentPrediction, k: int) -> list[str]:
    return pred.top_k(k)


def filter_predictions(preds: Iterable[AttachmentPrediction], c: float) -> list[AttachmentPrediction]:
    """Drop terms whose best probability is below ``c``."""
    return [p for p in preds if p.best[1] >= c]


def _rank(term: str, cands: Sequence[str], logits: np.ndarray) -> AttachmentPrediction:
    order = sorted(range(len(cands)), key=lambda k: (-logits[k], cands[k]))
    probs = np.clip(nn.tensor._sigmoid(logits), nn.BCE_EPS, 1.0 - nn.BCE_EPS)
    return AttachmentPrediction(term, [(cands[k], float(probs[k])) for k in order])


def predict(
    model: AttachModel, ctx: GraphContext, terms: Sequence[str], candidates: Sequence[str] | None = None
) -> list[AttachmentPrediction]:
    """Rank every core candidate for each term; ties broken by candidate name."""
    cands = list(candidates) if candidates is not None else ctx.graph.nodes[: ctx.graph.n_core]
    g = model.structural(ctx, model.adjacency(ctx, eval_rng(model.cfg.seed))) if model.cfg.use_G else None
    idx = ctx.graph.index
    cand_idx = np.array([idx[v] for v in cands], dtype=np.int64)
    out = []
    for t in terms:
        pairs = [(v, t) for v in cands]
        H, ids = ctx.featurizer.batch(pairs)
        term_idx = np.full(len(cands), idx[t], dtype=np.int64)
        logits = model.logits(model.representation(ctx, g, cand_idx, term_idx, H, ids)).data
        out.append(_rank(t, cands, logits))
    return out


def dev_edge_f1(model: AttachModel, ctx: GraphContext, gold: Mapping[str, str]) -> float:
    preds = predict(model, ctx, list(gold))
    return edge_prf({p.term: p.best[0] for p in preds}, gold)[2]


# -- training -------------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: AttachModel
    history: list[dict]
    best_epoch: int
    best_dev_f1: float


def train_attach(
    pairs: Sequence[tuple[str, str, int]],
    ctx: GraphContext,
    cfg: AttachConfig,
    dev_gold: Mapping[str, str] | None = None,
) -> TrainResult:
    """Mini-batch Adam on mean BCE; keeps the epoch with the best dev Edge-F1.

    Ties keep the earliest epoch. Training stops after ``cfg.patience``
    epochs without improvement.
    """
    if not pairs:
        raise ValueError("empty training set")
    model = AttachModel(cfg, ctx.store.dim)
    idx = ctx.graph.index
    cand = np.array([idx[v] for v, _, _ in pairs], dtype=np.int64)
    term = np.array([idx[t] for _, t, _ in pairs], dtype=np.int64)
    y = np.array([lab for _, _, lab in pairs], dtype=np.float64)
    H, ids = ctx.featurizer.batch([(v, t) for v, t, _ in pairs])

    history: list[dict] = []
    best_state, best_f1, best_epoch, stale = model.params.state(), -1.0, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        rng = epoch_rng(cfg.seed, epoch)
        adjacency = model.adjacency(ctx, rng)
        order = rng.permutation(len(pairs))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            b = order[lo : lo + cfg.batch_size]
            model.params.zero_grad()
            with nn.Tape() as tape:
                g = model.structural(ctx, adjacency)
                probs = nn.sigmoid(model.logits(model.representation(ctx, g, cand[b], term[b], H[b], ids[b])))
                loss = nn.mean(nn.bce_loss(probs, y[b]))
            tape.backward(loss)
            if not model.params.grads_finite():
                raise nn.NonFiniteError(f"non-finite gradient at epoch {epoch}")
            nn.adam_step(model.params, lr=cfg.lr)
            total += loss.item() * len(b)
        mean_loss = total / len(pairs)
        dev = dev_edge_f1(model, ctx, dev_gold) if dev_gold else -mean_loss
        history.append({"epoch": epoch, "loss": mean_loss, "dev_edge_f1": dev if dev_gold else None})
        log.info("attach epoch %d loss %.5f dev %.4f", epoch, mean_loss, dev)
        if dev > best_f1:
            best_state, best_f1, best_epoch, stale = model.params.state(), dev, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.load_state(best_state)
    return TrainResult(model, history, best_epoch, best_f1)


def save_predictions(preds: Iterable[AttachmentPrediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def load_predictions(path: str | Path) -> list[AttachmentPrediction]:
    with open(path, encoding="utf-8") as fh:
        return [AttachmentPrediction.from_json(json.loads(line)) for line in fh if line.strip()]


def with_flags(cfg: AttachConfig, code: str) -> AttachConfig:
    """Config for a representation code such as 'L + W + H'."""
    parts = {p.strip() for p in code.split("+")}
    return replace(cfg, use_L="L" in parts, use_W="W" in parts, use_H="H" in parts, use_G="G" in parts)
