import numpy as np
import pytest

from taxenrich import nn
from taxenrich.attach import (
    AttachConfig,
    AttachModel,
    AttachmentPrediction,
    GraphContext,
    PairFeaturizer,
    build_training_pairs,
    filter_predictions,
    load_predictions,
    predict,
    save_predictions,
    train_attach,
    training_anchors,
    with_flags,
)
from taxenrich.evaluation import edge_prf
from taxenrich.features import EmbeddingStore, head_similarity, lexical_features
from taxenrich.graph import build_graph
from taxenrich.synth import SynthConfig, gen_world
from taxenrich.taxonomy import LeafSplit, Taxonomy, ablate_leaves


@pytest.fixture(scope="module")
def tiny():
    world = gen_world(SynthConfig(seed=0, n_base=3, depth=3, dim=8))
    split = ablate_leaves(world.taxonomy, seed=0)
    graph = build_graph(split.core, split.new_terms, world.queries, world.items)
    return world, split, GraphContext.build(graph, world.store)


def small_context():
    core = Taxonomy.from_edges([("food", "tea"), ("food", "coffee"), ("tea", "green tea")])
    rng = np.random.default_rng(0)
    words = ["food", "tea", "coffee", "green", "black", "instant", "mocha"]
    store = EmbeddingStore({w: rng.normal(size=4) for w in words}, dim=4)
    graph = build_graph(core, ["black tea", "instant coffee", "mocha"])
    graph.r2.extend([(graph.index["tea"], graph.index["black tea"]), (graph.index["coffee"], graph.index["mocha"])])
    graph = graph.with_relations(graph.relations)
    return core, GraphContext.build(graph, store)


def test_full_objective_gradient():
    core, ctx = small_context()
    assert len(ctx.graph) <= 8
    cfg = AttachConfig(hidden=5, sample_size=None, seed=1)
    model = AttachModel(cfg, ctx.store.dim)
    pairs = [("tea", "black tea", 1), ("coffee", "black tea", 0), ("coffee", "mocha", 1), ("food", "mocha", 0),
             ("green tea", "instant coffee", 0)]
    idx = ctx.graph.index
    cand = np.array([idx[v] for v, _, _ in pairs])
    term = np.array([idx[t] for _, t, _ in pairs])
    y = np.array([lab for _, _, lab in pairs], dtype=float)
    H, ids = ctx.featurizer.batch([(v, t) for v, t, _ in pairs])
    adj = model.adjacency(ctx, None)

    def objective():
        g = model.structural(ctx, adj)
        probs = nn.sigmoid(model.logits(model.representation(ctx, g, cand, term, H, ids)))
        return nn.mean(nn.bce_loss(probs, y))

    assert nn.grad_check(objective, model.params) < 1e-4


def test_representation_layout():
    _, ctx = small_context()
    model = AttachModel(AttachConfig(hidden=4), ctx.store.dim)
    pairs = [("tea", "black tea")]
    H, ids = ctx.featurizer.batch(pairs)
    idx = ctx.graph.index
    cand, term = np.array([idx["tea"]]), np.array([idx["black tea"]])
    g = model.structural(ctx, model.adjacency(ctx, None))
    rep = model.representation(ctx, g, cand, term, H, ids).data[0]
    assert rep.shape == (model.rep_dim,) == (9 + 1 + 8 + 60,)
    assert rep[9] == pytest.approx(head_similarity("tea", "black tea", ctx.store))
    np.testing.assert_array_equal(rep[10:14], ctx.store.term_vector("tea"))
    np.testing.assert_array_equal(rep[14:18], ctx.store.term_vector("black tea"))
    bins = model.params["lexical.bins"].data
    expected = bins[model.bins.ids(lexical_features("tea", "black tea"))].reshape(-1)
    np.testing.assert_array_equal(rep[18:], expected)


def test_featurizer_batch_matches_scalar(tiny):
    world, split, ctx = tiny
    pf = PairFeaturizer(world.store)
    pairs = [(v, t) for t in split.new_terms[:5] for v in split.core.nodes]
    H, ids = pf.batch(pairs)
    for k, (v, t) in enumerate(pairs):
        assert H[k] == pytest.approx(head_similarity(v, t, world.store), abs=1e-12)
        assert list(ids[k]) == pf.bins.ids(lexical_features(v, t))


def test_training_pairs():
    core = Taxonomy.from_edges([("r", "a"), ("r", "b"), ("a", "c")])
    pairs = build_training_pairs(core, None, anchors="core")
    assert training_anchors(core, None, "core") == [("a", "r"), ("b", "r"), ("c", "a")]
    assert len(pairs) == 3 * 3
    assert pairs[:4] == [("r", "a", 1), ("b", "a", 0), ("c", "a", 0), ("r", "b", 1)]
    assert all(v != t for v, t, _ in pairs)
    assert sum(lab for *_, lab in pairs) == 3
    sub = build_training_pairs(core, None, negative_ratio=1, anchors="core", seed=4)
    assert len(sub) == 6
    assert sub == build_training_pairs(core, None, negative_ratio=1, anchors="core", seed=4)


def test_config_validation_and_codes():
    with pytest.raises(ValueError):
        AttachConfig(use_L=False, use_W=False, use_H=False, use_G=False)
    with pytest.raises(ValueError):
        AttachConfig(anchors="everything")
    cfg = with_flags(AttachConfig(), "L + H")
    assert cfg.code == "L + H"
    assert AttachConfig.from_dict(cfg.to_dict()) == cfg


def test_prediction_ranking_and_ties():
    _, ctx = small_context()
    model = AttachModel(AttachConfig(hidden=3, use_G=False, use_L=False, use_W=False), ctx.store.dim)
    # zero the scorer so every candidate ties; order must then be by name
    for name, t in model.params:
        t.data[...] = 0.0
    (pred,) = predict(model, ctx, ["mocha"])
    assert [v for v, _ in pred.ranked] == sorted(v for v in ctx.graph.nodes[: ctx.graph.n_core])
    assert all(p == pytest.approx(0.5) for _, p in pred.ranked)


def test_predictions_deterministic_and_round_trip(tiny, tmp_path):
    world, split, ctx = tiny
    model = AttachModel(AttachConfig(hidden=6, seed=2), world.store.dim)
    a = predict(model, ctx, split.new_terms)
    b = predict(model, ctx, split.new_terms)
    assert [p.ranked for p in a] == [p.ranked for p in b]
    save_predictions(a, tmp_path / "p.jsonl")
    again = load_predictions(tmp_path / "p.jsonl")
    assert [p.ranked for p in again] == [p.ranked for p in a]
    kept = filter_predictions(a, 0.5)
    assert all(p.best[1] >= 0.5 for p in kept)


def test_score_pairs_rejects_unknown_candidate():
    _, ctx = small_context()
    model = AttachModel(AttachConfig(hidden=3), ctx.store.dim)
    with pytest.raises(KeyError):
        model.score_pairs(ctx, [("nonexistent", "mocha")])
    with pytest.raises(KeyError):
        model.score_pairs(ctx, [("mocha", "black tea")])  # new terms are not candidates
    probs = model.score_pairs(ctx, [("tea", "mocha"), ("food", "mocha")]).data
    assert probs.shape == (2,) and np.all((probs > 0) & (probs < 1))


def test_training_learns_and_checkpoints(tiny, tmp_path):
    world, split, ctx = tiny
    cfg = AttachConfig(hidden=16, lr=1e-2, epochs=8, batch_size=64, seed=0)
    pairs = build_training_pairs(split.core, split, seed=0)
    res = train_attach(pairs, ctx, cfg, split.gold("dev"))
    losses = [h["loss"] for h in res.history]
    assert losses[-1] < losses[0]
    assert res.best_dev_f1 == max(h["dev_edge_f1"] for h in res.history)
    train_gold = dict(split.train)
    preds = predict(res.model, ctx, list(train_gold))
    assert edge_prf({p.term: p.best[0] for p in preds}, train_gold)[2] > 0.5
    res.model.save(tmp_path / "attach")
    loaded = AttachModel.load(tmp_path / "attach")
    again = predict(loaded, ctx, list(train_gold))
    assert [p.ranked for p in again] == [p.ranked for p in preds]
    # same seed, same run
    res2 = train_attach(pairs, ctx, cfg, split.gold("dev"))
    assert res2.history == res.history


def test_training_rejects_empty(tiny):
    _, _, ctx = tiny
    with pytest.raises(ValueError):
        train_attach([], ctx, AttachConfig())


def test_prediction_json():
    p = AttachmentPrediction("x", [("a", 0.9), ("b", 0.1)])
    assert AttachmentPrediction.from_json(p.to_json()) == p
    assert p.best == ("a", 0.9) and p.top_k(1) == ["a"]


def test_one_anchor_over_ten_core_nodes():
    core = Taxonomy.from_edges([("r", f"n{k}") for k in range(9)])
    assert len(core) == 10
    split = LeafSplit(core, [("leaf", "n3")], [], [])
    pairs = build_training_pairs(core, split, anchors="train")
    assert sum(lab for *_, lab in pairs) == 1
    assert len(pairs) == 10 and {v for v, _, _ in pairs} == set(core.nodes)
    five = build_training_pairs(core, split, negative_ratio=5, anchors="both", seed=1)
    by_anchor = {}
    for v, t, lab in five:
        by_anchor.setdefault(t, []).append(lab)
    assert all(labs.count(1) == 1 and labs.count(0) == 5 for labs in by_anchor.values())


def test_graph_only_model_has_no_lexical_or_word_blocks(tiny):
    world, split, ctx = tiny
    cfg = with_flags(AttachConfig(hidden=4, epochs=2, seed=0), "G")
    model = AttachModel(cfg, world.store.dim)
    assert "lexical.bins" not in dict(model.params) and model.rep_dim == 9
    res = train_attach(build_training_pairs(split.core, split, negative_ratio=3), ctx, cfg, split.gold("dev"))
    assert "lexical.bins" not in dict(res.model.params)
    assert len(res.history) >= 1


def test_structural_block_of_a_node_with_itself():
    _, ctx = small_context()
    model = AttachModel(with_flags(AttachConfig(hidden=3), "G"), ctx.store.dim)
    g = model.structural(ctx, model.adjacency(ctx, None))
    i = np.array([ctx.graph.index["tea"]])
    H, ids = ctx.featurizer.batch([("tea", "tea")])
    rep = model.representation(ctx, g, i, i, H, ids).data[0]
    # blocks s(g, g'), s(w, g'), s(g, w'), each (l1, l2, cos)
    assert rep[:3] == pytest.approx([0.0, 0.0, 1.0])
    np.testing.assert_allclose(rep[3:6], rep[6:9])


def test_top_threshold_of_one_attaches_nothing(tiny):
    world, split, ctx = tiny
    model = AttachModel(AttachConfig(hidden=6, seed=2), world.store.dim)
    # saturate the scorer so raw sigmoids round to exactly 1.0
    model.params["scorer.b1"].data[...] = 1e3
    preds = predict(model, ctx, split.new_terms)
    assert filter_predictions(preds, 1.0) == []
    assert len(filter_predictions(preds, 0.0)) == len(split.new_terms)


def test_identity_rgcn_makes_all_structural_blocks_agree():
    core = Taxonomy.from_edges([("food", "tea"), ("food", "coffee"), ("tea", "green tea")])
    rng = np.random.default_rng(6)
    words = ["food", "tea", "coffee", "green", "black"]
    store = EmbeddingStore({w: np.abs(rng.normal(size=4)) for w in words}, dim=4)
    ctx = GraphContext.build(build_graph(core, ["black tea"]), store)
    model = AttachModel(with_flags(AttachConfig(hidden=3), "G"), 4)
    for name, t in model.params:
        if name.startswith("rgcn."):
            t.data[...] = np.eye(4) if name.endswith(".r3") else 0.0
    g = model.structural(ctx, model.adjacency(ctx, None))
    # nonnegative inputs pass through the identity layers unchanged
    np.testing.assert_allclose(g.data, ctx.h0, atol=1e-15)
    pairs = [(v, t) for v in core.nodes for t in ("black tea", "tea")]
    idx = ctx.graph.index
    cand = np.array([idx[v] for v, _ in pairs])
    term = np.array([idx[t] for _, t in pairs])
    H, ids = ctx.featurizer.batch(pairs)
    rep = model.representation(ctx, g, cand, term, H, ids).data
    np.testing.assert_allclose(rep[:, 0:3], rep[:, 3:6], atol=1e-12)
    np.testing.assert_allclose(rep[:, 0:3], rep[:, 6:9], atol=1e-12)
    same = [k for k, (v, t) in enumerate(pairs) if v == t]
    np.testing.assert_allclose(rep[same, 2], 1.0, atol=1e-12)


def test_output_bias_shift_keeps_ranking(tiny):
    world, split, ctx = tiny
    model = AttachModel(AttachConfig(hidden=6, seed=3), world.store.dim)
    base = predict(model, ctx, split.new_terms)
    for shift in (-2.0, 0.5, 3.0):
        model.params["scorer.b1"].data[...] = shift
        moved = predict(model, ctx, split.new_terms)
        assert [p.top_k(len(p.ranked)) for p in moved] == [p.top_k(len(p.ranked)) for p in base]


def test_training_labels_match_edge_scan(tiny):
    _, split, _ = tiny
    pairs = build_training_pairs(split.core, split, anchors="both")
    edges = set(split.core.edges) | {(p, c) for c, p in split.train}
    anchors = {t for _, t, _ in pairs}
    for v, t, lab in pairs:
        assert lab == int((v, t) in edges)
    for t in anchors:
        cands = [v for v, tt, _ in pairs if tt == t]
        assert sorted(cands) == sorted(v for v in split.core.nodes if v != t)
