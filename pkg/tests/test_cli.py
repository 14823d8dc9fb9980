import json

import pytest

from taxenrich.attach import AttachmentPrediction, save_predictions
from taxenrich.cli import default_config, load_config, main
from taxenrich.taxonomy import load_split, load_taxonomy

SMALL = [
    "synth.n_base=4", "synth.depth=3", "synth.dim=16",
    "tagger.hidden=16", "tagger.epochs=4", "tagger.lr=0.01",
    "attach.epochs=3", "attach.hidden=16", "attach.lr=0.001",
    "extract.min_count=1",
]


def run(cmd, out, *sets, extra=()):
    argv = [cmd, "--out", str(out), *extra]
    for s in (*SMALL, *sets):
        argv += ["--set", s]
    return main(argv)


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    out = tmp_path_factory.mktemp("world")
    assert run("synth", out) == 0
    assert run("split-attach", out) == 0
    return out


def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config(None, ["attach.lr=0.01", "attach.relations=[\"r1\",\"r3\"]", "tagger.train_on=split"])
    assert cfg["attach"]["lr"] == 0.01 and cfg["attach"]["relations"] == ["r1", "r3"]
    assert cfg["tagger"]["train_on"] == "split"
    d = default_config()
    assert d["attach"]["lr"] == 1e-4 and d["attach"]["layers"] == 2 and d["attach"]["sample_size"] == 5
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"attach": {"hidden": 7}}))
    assert load_config(str(p), [])["attach"]["hidden"] == 7


def test_bad_config_exits_with_validation_code(tmp_path):
    assert run("synth", tmp_path, "attach.nonsense=1") == 2
    assert run("synth", tmp_path, "split.ratios=[0.5,0.5,0.5]") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["synth", "--out", str(tmp_path), "--config", str(bad)]) == 2


def test_missing_inputs_exit_with_validation_code(tmp_path):
    assert run("label", tmp_path) == 2
    assert run("train-attach", tmp_path) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_training_exits_with_numeric_code(world, tmp_path):
    out = tmp_path / "w"
    assert run("synth", out) == 0
    assert run("split-attach", out) == 0
    assert run("build-graph", out) == 0
    assert run("train-attach", out, "attach.lr=1e308") == 3


def test_evaluate_gold_as_predictions_scores_one(world):
    split = load_split(world / "attach_split.json")
    gold = split.gold("test")
    preds = [AttachmentPrediction(t, [(p, 1.0)] + [(v, 0.0) for v in split.core.nodes if v != p]) for t, p in gold.items()]
    save_predictions(preds, world / "gold_preds.jsonl")
    assert run("evaluate", world, extra=["--predictions", str(world / "gold_preds.jsonl")]) == 0
    rep = json.loads((world / "report.json").read_text())
    for key in ("edge_p", "edge_r", "edge_f1", "ancestor_p", "ancestor_r", "ancestor_f1", "neighbor_precision"):
        assert rep[key] == 1.0
    assert set(rep["hit_at_k"].values()) == {1.0}
    assert (world / "pr_curve.tsv").read_text().splitlines()[1].startswith("0\t1.000000\t1.000000")
    manifest = json.loads((world / "manifest.json").read_text())
    assert {"synth", "split-attach", "evaluate"} <= set(manifest)
    entry = manifest["evaluate"]
    assert entry["seed"] == 0 and len(entry["config_hash"]) == 64 and "timestamp" in entry
    assert "report.json" in entry["outputs"]


def test_staged_pipeline(tmp_path):
    out = tmp_path / "run"
    for cmd in ("synth", "label", "split-extract", "train-tagger", "extract", "split-attach",
                "build-graph", "train-attach", "attach", "evaluate"):
        assert run(cmd, out) == 0, cmd
    rows = [json.loads(line) for line in (out / "predictions.jsonl").read_text().splitlines()]
    split = load_split(out / "attach_split.json")
    assert [r["term"] for r in rows] == split.new_terms
    assert all(len(r["ranked"]) == len(split.core) for r in rows)
    assert (out / "extraction_report.json").exists() and (out / "bins.json").exists()


def enrich(out):
    assert run("synth", out) == 0
    assert run("enrich", out, "enrich.holdout_leaves=true", "enrich.c=0") == 0


def test_enrich_emits_valid_taxonomy(tmp_path):
    out = tmp_path / "e"
    enrich(out)
    tax = load_taxonomy(out / "enriched_taxonomy.tsv")
    core = load_split(out / "attach_split.json").core
    summary = json.loads((out / "enrich_summary.json").read_text())
    assert summary["attached"] >= 1
    assert len(tax) == len(core) + summary["attached"]
    children = [c for _, c in tax.edges]
    assert len(children) == len(set(children))
    extracted = [json.loads(line)["term"] for line in (out / "extracted.jsonl").read_text().splitlines()]
    for term in extracted:
        assert term in tax and term not in core
        assert children.count(term) == 1


def test_enrich_is_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    enrich(a)
    enrich(b)
    names = ["predictions.jsonl", "report.json", "pr_curve.tsv", "enrich_summary.json", "extracted.jsonl",
             "tagger.bin", "tagger.json", "attach.bin", "attach.json", "enriched_taxonomy.tsv", "graph.json"]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ma = json.loads((a / "manifest.json").read_text())["enrich"]
    mb = json.loads((b / "manifest.json").read_text())["enrich"]
    assert ma["outputs"] == mb["outputs"] and ma["config_hash"] == mb["config_hash"]
