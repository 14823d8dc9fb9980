"""BiLSTM-CRF term tagger over the BIOE schema."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .corpus import TAG_INDEX, TAGS, ItemProfile, TaggedSequence, decode_spans
from .features import EmbeddingStore
from .taxonomy import normalize_term

log = logging.getLogger(__name__)

N_TAGS = len(TAGS)
B, I, O, E = (TAG_INDEX[t] for t in "BIOE")

# allowed[i, j]: tag i may be followed by tag j.  A lone B may be followed by
# another B (two adjacent single-token terms); B I+ must close with E.
ALLOWED = np.zeros((N_TAGS, N_TAGS), dtype=bool)
for _a, _b in [(B, B), (B, I), (B, O), (B, E), (I, I), (I, E), (O, B), (O, O), (E, B), (E, O)]:
    ALLOWED[_a, _b] = True
ALLOWED_START = np.array([True, False, True, False])  # B, O
ALLOWED_END = np.array([True, False, True, True])  # B, O, E


# -- CRF -------------------------------------------------------------------------------


def crf_score(emissions: np.ndarray, tags: Sequence[int], trans: np.ndarray, start: np.ndarray, end: np.ndarray) -> float:
    y = list(tags)
    s = start[y[0]] + end[y[-1]] + sum(emissions[t, y[t]] for t in range(len(y)))
    s += sum(trans[y[t - 1], y[t]] for t in range(1, len(y)))
    return float(s)


def crf_log_partition(emissions: np.ndarray, trans: np.ndarray, start: np.ndarray, end: np.ndarray) -> float:
    alpha = start + emissions[0]
    for t in range(1, len(emissions)):
        scores = alpha[:, None] + trans
        m = scores.max(axis=0)
        alpha = m + np.log(np.exp(scores - m).sum(axis=0)) + emissions[t]
    final = alpha + end
    m = final.max()
    return float(m + np.log(np.exp(final - m).sum()))


def crf_nll(emissions: nn.Tensor, gold: Sequence[int], trans: nn.Tensor, start: nn.Tensor, end: nn.Tensor) -> nn.Tensor:
    """-(score(gold) - logZ), with logZ from the forward algorithm."""
    T = emissions.shape[0]
    y = np.asarray(gold, dtype=np.int64)
    if len(y) != T:
        raise ValueError(f"length mismatch: {T} emission rows vs {len(y)} tags")
    gold_score = nn.add(nn.sum_(nn.getitem(emissions, (np.arange(T), y))), nn.add(start[int(y[0])], end[int(y[-1])]))
    if T > 1:
        gold_score = nn.add(gold_score, nn.sum_(nn.getitem(trans, (y[:-1], y[1:]))))
    alpha = nn.add(start, emissions[0])
    for t in range(1, T):
        alpha = nn.add(nn.logsumexp(nn.add(nn.reshape(alpha, (N_TAGS, 1)), trans), axis=0), emissions[t])
    log_z = nn.logsumexp(nn.add(alpha, end))
    return nn.sub(log_z, gold_score)


def viterbi_decode(
    emissions: np.ndarray, trans: np.ndarray, start: np.ndarray, end: np.ndarray, constrained: bool = True
) -> list[int]:
    T = len(emissions)
    if T == 0:
        return []
    if constrained:
        trans = np.where(ALLOWED, trans, -np.inf)
        start = np.where(ALLOWED_START, start, -np.inf)
        end = np.where(ALLOWED_END, end, -np.inf)
    score = start + emissions[0]
    back = np.zeros((T, N_TAGS), dtype=np.int64)
    for t in range(1, T):
        cand = score[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(N_TAGS)] + emissions[t]
    score = score + end
    best = [int(np.argmax(score))]
    for t in range(T - 1, 0, -1):
        best.append(int(back[t, best[-1]]))
    return best[::-1]


# -- BiLSTM-CRF ------------------------------------------------------------------------


@dataclass
class TaggerModel:
    store: EmbeddingStore
    hidden: int = 100
    seed: int = 0
    params: nn.ParamSet = field(default_factory=nn.ParamSet)

    def __post_init__(self):
        if len(self.params) == 0:
            rng = np.random.default_rng(self.seed)
            D, H = self.store.dim, self.hidden
            for d in ("fwd", "bwd"):
                self.params.add(f"lstm.{d}.Wx", nn.xavier_uniform(rng, 4 * H, D).T)
                self.params.add(f"lstm.{d}.Wh", nn.xavier_uniform(rng, 4 * H, H).T)
                b = np.zeros(4 * H)
                b[H : 2 * H] = 1.0  # forget gate
                self.params.add(f"lstm.{d}.b", b)
            self.params.add("proj.W", nn.xavier_uniform(rng, N_TAGS, 2 * H).T)
            self.params.add("proj.b", np.zeros(N_TAGS))
            self.params.add("crf.trans", np.zeros((N_TAGS, N_TAGS)))
            self.params.add("crf.start", np.zeros(N_TAGS))
            self.params.add("crf.end", np.zeros(N_TAGS))

    def _direction(self, xw: nn.Tensor, d: str, reverse: bool) -> list[nn.Tensor]:
        H = self.hidden
        Wh = self.params[f"lstm.{d}.Wh"]
        h = nn.Tensor(np.zeros(H))
        c = nn.Tensor(np.zeros(H))
        T = xw.shape[0]
        outs: list[nn.Tensor] = [None] * T  # type: ignore[list-item]
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            z = nn.add(xw[t], nn.matmul(h, Wh))
            i = nn.sigmoid(z[0:H])
            f = nn.sigmoid(z[H : 2 * H])
            g = nn.tanh(z[2 * H : 3 * H])
            o = nn.sigmoid(z[3 * H : 4 * H])
            c = nn.add(nn.mul(f, c), nn.mul(i, g))
            h = nn.mul(o, nn.tanh(c))
            outs[t] = h
        return outs

    def emissions(self, tokens: Sequence[str]) -> nn.Tensor:
        X = np.stack([self.store.token_vector(t) for t in tokens])
        p = self.params
        hs = []
        for d, rev in (("fwd", False), ("bwd", True)):
            xw = nn.add(nn.matmul(X, p[f"lstm.{d}.Wx"]), p[f"lstm.{d}.b"])
            hs.append(nn.stack(self._direction(xw, d, rev), axis=0))
        feats = nn.concat(hs, axis=1)
        return nn.add(nn.matmul(feats, p["proj.W"]), p["proj.b"])

    def nll(self, seq: TaggedSequence) -> nn.Tensor:
        em = self.emissions(seq.tokens)
        p = self.params
        return crf_nll(em, [TAG_INDEX[t] for t in seq.tags], p["crf.trans"], p["crf.start"], p["crf.end"])

    def predict(self, tokens: Sequence[str], constrained: bool = True) -> list[str]:
        if not tokens:
            return []
        em = self.emissions(tokens).data
        p = self.params
        path = viterbi_decode(em, p["crf.trans"].data, p["crf.start"].data, p["crf.end"].data, constrained)
        return [TAGS[k] for k in path]


def train_tagger(
    labeled: Sequence[TaggedSequence],
    store: EmbeddingStore,
    epochs: int = 5,
    lr: float = 1e-3,
    seed: int = 0,
    hidden: int = 100,
    shuffle: bool = True,
) -> tuple[TaggerModel, list[float]]:
    """Sequence-level Adam on the CRF NLL; returns the model and per-epoch mean NLL."""
    data = [s for s in labeled if s.tokens]
    if not data:
        raise ValueError("empty training data")
    model = TaggerModel(store, hidden=hidden, seed=seed)
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng((seed, epoch)).permutation(len(data)) if shuffle else np.arange(len(data))
        total = 0.0
        for k in order:
            model.params.zero_grad()
            with nn.Tape() as tape:
                loss = model.nll(data[k])
            tape.backward(loss)
            nn.adam_step(model.params, lr=lr)
            total += loss.item()
        history.append(total / len(data))
        log.info("tagger epoch %d mean nll %.4f", epoch + 1, history[-1])
    return model, history


def extract_terms(
    model: TaggerModel, items: Iterable[ItemProfile], core_vocab: Iterable[str] = (), constrained: bool = True
) -> list[tuple[str, int]]:
    """Decoded span frequencies, minus core terms, by count desc then term."""
    core = {normalize_term(t) for t in core_vocab}
    counts: Counter[str] = Counter()
    for item in items:
        tags = model.predict(item.title_tokens, constrained)
        for span in decode_spans(tags, item.title_tokens):
            term = normalize_term(span)
            if term not in core:
                counts[term] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def save_tagger(model: TaggerModel, path) -> None:
    nn.save_checkpoint(model.params, path, extra={"kind": "tagger", "hidden": model.hidden, "dim": model.store.dim, "seed": model.seed})


def load_tagger(path, store: EmbeddingStore) -> TaggerModel:
    state, extra = nn.load_checkpoint(path)
    model = TaggerModel(store, hidden=extra["hidden"], seed=extra.get("seed", 0))
    model.params.load_state(state)
    return model
