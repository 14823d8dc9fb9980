"""Attachment metrics: Edge-F1, Ancestor-F1, Hit@K, neighbor precision, PR trade-off."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .taxonomy import Taxonomy


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _check_terms(preds: Mapping[str, str], gold: Mapping[str, str]) -> None:
    for t in preds:
        if t not in gold:
            raise KeyError(f"predicted term not in gold: {t!r}")


def edge_prf(preds: Mapping[str, str], gold: Mapping[str, str]) -> tuple[float, float, float]:
    """P = correct / |preds|, R = correct / |gold|."""
    _check_terms(preds, gold)
    correct = sum(1 for t, v in preds.items() if gold[t] == v)
    p = correct / len(preds) if preds else 0.0
    r = correct / len(gold) if gold else 0.0
    return p, r, _f1(p, r)


def path_set(node: str, core: Taxonomy) -> set[str]:
    """The node plus all its ancestors up to and including the root."""
    return {node, *core.ancestors(node)}


def ancestor_prf(
    preds: Mapping[str, str], gold: Mapping[str, str], core: Taxonomy, average: str = "micro"
) -> tuple[float, float, float]:
    _check_terms(preds, gold)
    gold_sets = {t: path_set(p, core) for t, p in gold.items()}
    sys_sets = {t: path_set(v, core) for t, v in preds.items()}
    if average == "micro":
        inter = sum(len(sys_sets[t] & gold_sets[t]) for t in preds)
        n_sys = sum(len(s) for s in sys_sets.values())
        n_gold = sum(len(s) for s in gold_sets.values())
        p = inter / n_sys if n_sys else 0.0
        r = inter / n_gold if n_gold else 0.0
    elif average == "macro":
        p = sum(len(sys_sets[t] & gold_sets[t]) / len(sys_sets[t]) for t in preds) / len(preds) if preds else 0.0
        r = (
            sum(len(sys_sets[t] & gold_sets[t]) / len(gold_sets[t]) for t in preds) / len(gold)
            if gold
            else 0.0
        )
    else:
        raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")
    return p, r, _f1(p, r)


def hit_at_k(ranked: Mapping[str, Sequence[str]], gold: Mapping[str, str], k: int) -> float:
    """Fraction of gold terms whose parent is among the top-k candidates."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold:
        return 0.0
    hits = sum(1 for t, p in gold.items() if p in list(ranked.get(t, ()))[:k])
    return hits / len(gold)


def neighbor_correct(pred: str, gold_parent: str, core: Taxonomy) -> bool:
    path = [pred, *core.ancestors(pred)]
    credit = set(path)
    for node in path:
        credit.update(core.siblings(node))
    return gold_parent in credit


def neighbor_precision(preds: Mapping[str, str], gold: Mapping[str, str], core: Taxonomy) -> float:
    """Precision where siblings of any node on the predicted path also count."""
    _check_terms(preds, gold)
    if not preds:
        return 0.0
    return sum(neighbor_correct(v, gold[t], core) for t, v in preds.items()) / len(preds)


def filter_threshold(top: Mapping[str, tuple[str, float]], c: float) -> dict[str, str]:
    """Keep terms whose best probability is at least ``c``."""
    return {t: v for t, (v, prob) in top.items() if prob >= c}


@dataclass
class PRRow:
    c: float
    precision: float
    recall: float
    attached: int


def pr_tradeoff(
    top: Mapping[str, tuple[str, float]], gold: Mapping[str, str], thresholds: Sequence[float]
) -> list[PRRow]:
    rows = []
    for c in sorted(thresholds):
        kept = filter_threshold(top, c)
        p, r, _ = edge_prf(kept, gold)
        rows.append(PRRow(float(c), p, r, len(kept)))
    return rows


@dataclass
class EvalReport:
    edge_p: float
    edge_r: float
    edge_f1: float
    ancestor_p: float
    ancestor_r: float
    ancestor_f1: float
    ancestor_macro_p: float
    ancestor_macro_r: float
    ancestor_macro_f1: float
    neighbor_precision: float
    attached: int
    total: int
    hit_at_k: dict[int, float] = field(default_factory=dict)
    pr_curve: list[PRRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hit_at_k"] = {str(k): v for k, v in sorted(self.hit_at_k.items())}
        return d

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def evaluate(
    top: Mapping[str, tuple[str, float]],
    gold: Mapping[str, str],
    core: Taxonomy,
    ranked: Mapping[str, Sequence[str]] | None = None,
    ks: Sequence[int] = (1, 5, 10, 50),
    thresholds: Sequence[float] = (),
    c: float = 0.0,
) -> EvalReport:
    """Score the predictions that pass threshold ``c`` (0 attaches everything)."""
    preds = filter_threshold(top, c)
    ep, er, ef = edge_prf(preds, gold)
    ap, ar, af = ancestor_prf(preds, gold, core)
    mp, mr, mf = ancestor_prf(preds, gold, core, average="macro")
    hits = {k: hit_at_k(ranked, gold, k) for k in ks} if ranked is not None else {}
    curve = pr_tradeoff(top, gold, thresholds) if thresholds else []
    return EvalReport(ep, er, ef, ap, ar, af, mp, mr, mf, neighbor_precision(preds, gold, core),
                      len(preds), len(gold), hits, curve)


def save_pr_curve(rows: Sequence[PRRow], path: str | Path) -> None:
    lines = ["c\tprecision\trecall\tattached"]
    lines += [f"{r.c:g}\t{r.precision:.6f}\t{r.recall:.6f}\t{r.attached}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
