import numpy as np
import pytest

import oracles
from taxenrich.baselines import i2t_attach, random_attach, root_attach, substr_attach, substr_parent
from taxenrich.corpus import ItemProfile
from taxenrich.evaluation import (
    ancestor_prf,
    edge_prf,
    evaluate,
    filter_threshold,
    hit_at_k,
    neighbor_precision,
    pr_tradeoff,
    save_pr_curve,
)
from taxenrich.taxonomy import Taxonomy

THRESHOLDS = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]


def tree_of(parent):
    return Taxonomy.from_edges((p, c) for c, p in parent.items())


@pytest.mark.parametrize("seed", range(25))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    parent, nodes, gold, ranked, top = oracles.random_instance(rng, int(rng.integers(2, 101)))
    core = tree_of(parent)
    preds = filter_threshold(top, 0.3)
    assert edge_prf(preds, gold) == oracles.edge_f1(preds, gold)
    assert ancestor_prf(preds, gold, core) == pytest.approx(oracles.ancestor_micro(preds, gold, parent), abs=0)
    for k in (1, 2, 5, 10, 50):
        assert hit_at_k(ranked, gold, k) == oracles.hit_at_k(ranked, gold, k)
    assert neighbor_precision(preds, gold, core) == oracles.neighbor_precision(preds, gold, parent)
    rows = [(r.c, r.precision, r.recall, r.attached) for r in pr_tradeoff(top, gold, THRESHOLDS)]
    assert rows == oracles.pr_rows(top, gold, THRESHOLDS)


def test_edge_and_ancestor_by_hand():
    core = Taxonomy.from_edges([("r", "a"), ("a", "b"), ("r", "c")])
    gold = {"x": "b", "y": "c"}
    preds = {"x": "a", "y": "c"}
    assert edge_prf(preds, gold) == (0.5, 0.5, 0.5)
    # paths: x sys {a, r} gold {b, a, r}; y sys {c, r} gold {c, r}
    p, r, f = ancestor_prf(preds, gold, core)
    assert (p, r) == (4 / 4, 4 / 5)
    mp, mr, _ = ancestor_prf(preds, gold, core, average="macro")
    assert (mp, mr) == (1.0, (2 / 3 + 1) / 2)
    with pytest.raises(ValueError):
        ancestor_prf(preds, gold, core, average="weighted")


def test_neighbor_credit():
    core = Taxonomy.from_edges([("r", "a"), ("r", "b"), ("a", "a1"), ("a", "a2")])
    gold = {"t": "a2"}
    assert neighbor_precision({"t": "a1"}, gold, core) == 1.0
    assert neighbor_precision({"t": "b"}, {"t": "a"}, core) == 1.0
    assert neighbor_precision({"t": "b"}, gold, core) == 0.0
    assert neighbor_precision({}, gold, core) == 0.0


def test_unknown_prediction_term_rejected():
    with pytest.raises(KeyError):
        edge_prf({"zz": "a"}, {"t": "a"})
    with pytest.raises(ValueError):
        hit_at_k({}, {"t": "a"}, 0)


def test_empty_prediction_set():
    assert edge_prf({}, {"t": "a"}) == (0.0, 0.0, 0.0)
    assert edge_prf({}, {}) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_monotone_in_k_and_threshold(seed):
    rng = np.random.default_rng(100 + seed)
    parent, nodes, gold, ranked, top = oracles.random_instance(rng, int(rng.integers(2, 60)))
    hits = [hit_at_k(ranked, gold, k) for k in range(1, len(nodes) + 2)]
    assert all(a <= b for a, b in zip(hits, hits[1:]))
    rows = pr_tradeoff(top, gold, np.linspace(0, 1, 21))
    assert all(a.recall >= b.recall and a.attached >= b.attached for a, b in zip(rows, rows[1:]))


def test_threshold_zero_attaches_everything():
    top = {"a": ("x", 0.0), "b": ("y", 0.4)}
    assert filter_threshold(top, 0.0) == {"a": "x", "b": "y"}
    assert filter_threshold(top, 0.4) == {"b": "y"}
    assert filter_threshold(top, 0.41) == {}


def test_evaluate_report(tmp_path):
    core = Taxonomy.from_edges([("r", "a"), ("r", "b")])
    gold = {"t1": "a", "t2": "b"}
    top = {"t1": ("a", 0.9), "t2": ("a", 0.2)}
    ranked = {"t1": ["a", "r", "b"], "t2": ["a", "b", "r"]}
    rep = evaluate(top, gold, core, ranked, ks=(1, 2), thresholds=(0.0, 0.5), c=0.5)
    assert (rep.edge_p, rep.edge_r, rep.attached, rep.total) == (1.0, 0.5, 1, 2)
    assert rep.hit_at_k == {1: 0.5, 2: 1.0}
    assert [(r.c, r.attached) for r in rep.pr_curve] == [(0.0, 2), (0.5, 1)]
    rep.save(tmp_path / "r.json")
    save_pr_curve(rep.pr_curve, tmp_path / "pr.tsv")
    assert (tmp_path / "pr.tsv").read_text().splitlines()[1] == "0\t0.500000\t0.500000\t2"


CORE = Taxonomy.from_edges([("grocery", "coffee"), ("grocery", "tea"), ("coffee", "ground coffee")])


def test_substr_baseline():
    assert substr_parent("ground coffee beans", CORE) == "ground coffee"
    assert substr_parent("instant coffee", CORE) == "coffee"
    assert substr_parent("pasta", CORE) == "grocery"
    assert substr_attach(["green tea"], CORE) == {"green tea": "tea"}


def test_root_random_i2t_baselines():
    assert root_attach(["x", "y"], CORE) == {"x": "grocery", "y": "grocery"}
    r1 = random_attach(["x", "y", "z"], CORE, seed=1)
    assert r1 == random_attach(["x", "y", "z"], CORE, seed=1)
    assert set(r1.values()) <= set(CORE.nodes)
    items = [
        ItemProfile("1", ("acme", "green", "tea"), "tea"),
        ItemProfile("2", ("green", "tea", "bags"), "tea"),
        ItemProfile("3", ("green", "tea", "latte"), "coffee"),
        ItemProfile("4", ("mocha",), "coffee"),
        ItemProfile("5", ("mocha",), "tea"),
    ]
    assert i2t_attach(["green tea", "mocha", "soup"], CORE, items) == {
        "green tea": "tea",
        "mocha": "coffee",  # tie broken lexicographically
        "soup": "grocery",
    }


def test_spec_metric_examples():
    core = Taxonomy.from_edges([("root", "a"), ("a", "b"), ("a", "c")])
    p, r, f = ancestor_prf({"t": "c"}, {"t": "b"}, core)
    assert (p, r) == pytest.approx((2 / 3, 2 / 3))
    gold = {"t": "b", "u": "c"}
    assert ancestor_prf(root_attach(gold, core), gold, core)[0] == 1.0
    # root is never a gold parent here
    assert edge_prf(root_attach(gold, core), gold)[2] == 0.0
    assert edge_prf({"t": "b"}, gold) == pytest.approx((1.0, 0.5, 2 / 3))


@pytest.mark.parametrize("seed", range(10))
def test_hit_at_one_and_full_list(seed):
    rng = np.random.default_rng(300 + seed)
    parent, nodes, gold, ranked, top = oracles.random_instance(rng, int(rng.integers(2, 50)))
    if not gold:
        return
    argmax = {t: r[0] for t, r in ranked.items()}
    assert hit_at_k(ranked, gold, 1) == edge_prf(argmax, gold)[0]
    full = {t: list(nodes) for t in gold}
    assert hit_at_k(full, gold, len(nodes)) == 1.0


def test_pr_row_at_zero_matches_global():
    rng = np.random.default_rng(9)
    parent, nodes, gold, ranked, top = oracles.random_instance(rng, 40)
    core = tree_of(parent)
    rep = evaluate(top, gold, core, thresholds=(0.0, 0.5))
    row = rep.pr_curve[0]
    assert (row.precision, row.recall, row.attached) == (rep.edge_p, rep.edge_r, rep.attached)


def test_gold_as_predictions_scores_one():
    core = Taxonomy.from_edges([("r", "a"), ("r", "b"), ("a", "c")])
    gold = {"x": "a", "y": "c", "z": "r"}
    top = {t: (v, 1.0) for t, v in gold.items()}
    ranked = {t: [v] + [n for n in core.nodes if n != v] for t, v in gold.items()}
    rep = evaluate(top, gold, core, ranked, ks=(1, 5))
    for name in ("edge_p", "edge_r", "edge_f1", "ancestor_p", "ancestor_r", "ancestor_f1", "neighbor_precision"):
        assert getattr(rep, name) == 1.0
    assert rep.hit_at_k == {1: 1.0, 5: 1.0}
