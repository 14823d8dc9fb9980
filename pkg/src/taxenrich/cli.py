"""Command-line pipeline.

Every subcommand works inside one output directory: it reads the artifacts
earlier stages left there (or the input paths from the config) and writes
its own, then records a manifest entry with the config hash, seed, package
versions and the sha256 of each output. Timestamps live only in the manifest.

    taxenrich synth --out run
    taxenrich enrich --out run --set enrich.holdout_leaves=true
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, nn
from .attach import (
    AttachConfig,
    AttachmentPrediction,
    GraphContext,
    build_training_pairs,
    filter_predictions,
    load_predictions,
    predict,
    save_predictions,
    train_attach,
    with_flags,
)
from .baselines import i2t_attach, random_attach, root_attach, substr_attach
from .corpus import (
    TaggedSequence,
    build_extraction_split,
    decode_spans,
    label_rows,
    load_items,
    load_labels,
    load_queries,
    write_jsonl,
)
from .evaluation import ancestor_prf, edge_prf, evaluate, save_pr_curve
from .features import BinSpec, EmbeddingStore, save_bins
from .graph import build_graph, load_graph, save_graph
from .synth import SynthConfig, gen_world
from .tagger import extract_terms, load_tagger, save_tagger, train_tagger
from .taxonomy import Taxonomy, ablate_leaves, load_split, load_taxonomy, save_split

log = logging.getLogger("taxenrich")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

REPRESENTATION_GRID = ["W", "H", "W + H", "L", "L + W", "G", "L + W + G", "L + W + H", "L + W + H + G"]


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    synth = SynthConfig().to_dict()
    synth.pop("seed")
    attach = AttachConfig().to_dict()
    attach.pop("seed")
    return {
        "seed": 0,
        # external inputs; null means the file of that name inside --out
        "paths": {"taxonomy": None, "items": None, "queries": None, "vectors": None},
        "synth": synth,
        "tagger": {"hidden": 100, "lr": 1e-3, "epochs": 3, "constrained": True, "train_on": "labels"},
        "extract": {"ratio": 0.8, "min_count": 2},
        "split": {"ratios": [0.64, 0.16, 0.20]},
        "attach": attach,
        "eval": {"part": "test", "ks": [1, 5, 10, 50], "thresholds": [round(0.1 * k, 1) for k in range(11)], "c": 0.0},
        "ablate": {
            "representations": REPRESENTATION_GRID,
            "layers": [1, 2],
            "directions": ["C->P", "C<->P", "P->C"],
            "relation_sets": [["r1", "r3"], ["r1", "r2", "r3"]],
        },
        "enrich": {"holdout_leaves": False, "c": 0.5},
    }


def _merge(base: dict, over: dict, where: str = "") -> None:
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key: {where}{k}")
        if isinstance(base[k], dict) and k != "paths":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k} must be an object")
            _merge(base[k], v, f"{where}{k}.")
        elif isinstance(base[k], dict):
            unknown = set(v) - set(base[k])
            if unknown:
                raise ConfigError(f"unknown paths: {sorted(unknown)}")
            base[k].update(v)
        else:
            base[k] = v


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    node = cfg
    parts = key.strip().split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key: {key}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {key}")
    node[parts[-1]] = _parse_value(value)


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = default_config()
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        _merge(cfg, user)
    for o in overrides:
        apply_override(cfg, o)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    synth_config(cfg).validate()
    attach_config(cfg)
    t = cfg["tagger"]
    if t["epochs"] < 0 or t["hidden"] < 1 or t["lr"] <= 0:
        raise ConfigError("tagger needs epochs >= 0, hidden >= 1, lr > 0")
    if t["train_on"] not in ("labels", "split"):
        raise ConfigError("tagger.train_on must be 'labels' or 'split'")
    if not 0.0 < cfg["extract"]["ratio"] < 1.0:
        raise ConfigError("extract.ratio must be in (0, 1)")
    ratios = cfg["split"]["ratios"]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split.ratios must be three non-negative numbers summing to 1")
    e = cfg["eval"]
    if e["part"] not in ("train", "dev", "test"):
        raise ConfigError("eval.part must be train, dev or test")
    if any(int(k) < 1 for k in e["ks"]):
        raise ConfigError("eval.ks must be positive")
    for c in [*e["thresholds"], e["c"], cfg["enrich"]["c"]]:
        if not 0.0 <= c <= 1.0:
            raise ConfigError("thresholds must lie in [0, 1]")
    for code in cfg["ablate"]["representations"]:
        if not {p.strip() for p in code.split("+")} <= {"L", "W", "H", "G"}:
            raise ConfigError(f"bad representation code {code!r}")


def synth_config(cfg: dict) -> SynthConfig:
    d = dict(cfg["synth"])
    d["branching"] = tuple(d["branching"])
    try:
        return SynthConfig(seed=cfg["seed"], **d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def attach_config(cfg: dict) -> AttachConfig:
    return AttachConfig.from_dict({**cfg["attach"], "seed": cfg["seed"]})


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# -- workspace ----------------------------------------------------------------------------


class Workspace:
    def __init__(self, out: str | Path, cfg: dict):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def input(self, key: str, default: str) -> Path:
        p = Path(self.cfg["paths"][key]) if self.cfg["paths"][key] else self.path(default)
        if not p.exists():
            raise FileNotFoundError(f"missing input {key}: {p}")
        return p

    def need(self, name: str, hint: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise FileNotFoundError(f"missing {p}; run `{hint}` first")
        return p

    def wrote(self, *paths: Path) -> None:
        self.written.extend(Path(p) for p in paths)

    def taxonomy(self) -> Taxonomy:
        return load_taxonomy(self.input("taxonomy", "taxonomy.tsv"))

    def items(self):
        return load_items(self.input("items", "items.jsonl"))

    def queries(self):
        return load_queries(self.input("queries", "queries.jsonl"))

    def store(self) -> EmbeddingStore:
        return EmbeddingStore.load(self.input("vectors", "vectors.vec"), seed=self.cfg["seed"])

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        self.wrote(p)
        return p

    def record(self, command: str) -> None:
        """Add this command's entry to manifest.json."""
        mpath = self.path("manifest.json")
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
        outputs = {}
        for p in sorted(set(self.written)):
            outputs[str(p.relative_to(self.out))] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest[command] = {
            "config": self.cfg,
            "config_hash": config_hash(self.cfg),
            "seed": self.cfg["seed"],
            "versions": {"taxenrich": __version__, "numpy": np.__version__, "python": platform.python_version()},
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "outputs": outputs,
        }
        mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# -- stages --------------------------------------------------------------------------------


def cmd_synth(ws: Workspace) -> None:
    paths = gen_world(synth_config(ws.cfg)).write(ws.out)
    ws.wrote(*paths.values())


def _label(ws: Workspace, tax: Taxonomy, items) -> list[TaggedSequence]:
    rows = label_rows(items, tax.nodes[1:])
    write_jsonl(ws.path("labels.jsonl"), rows)
    ws.wrote(ws.path("labels.jsonl"))
    return [TaggedSequence(tuple(r["tokens"]), tuple(r["tags"])) for r in rows]


def cmd_label(ws: Workspace) -> None:
    _label(ws, ws.taxonomy(), ws.items())


def cmd_split_extract(ws: Workspace) -> None:
    tax, items = ws.taxonomy(), ws.items()
    split = build_extraction_split(items, tax.nodes[1:], ws.cfg["extract"]["ratio"], ws.cfg["seed"])
    ws.write_json("extract_split.json", split.to_json())
    p = ws.path("extract_train.jsonl")
    write_jsonl(p, ({"tokens": list(s.tokens), "tags": list(s.tags)} for s in split.train))
    ws.wrote(p)


def _train_tagger(ws: Workspace, labeled: list[TaggedSequence], store: EmbeddingStore):
    t = ws.cfg["tagger"]
    model, history = train_tagger(labeled, store, epochs=t["epochs"], lr=t["lr"], seed=ws.cfg["seed"], hidden=t["hidden"])
    if any(not np.isfinite(h) for h in history):
        raise nn.NonFiniteError("non-finite tagger loss")
    save_tagger(model, ws.path("tagger"))
    ws.wrote(ws.path("tagger.json"), ws.path("tagger.bin"))
    ws.write_json("tagger_history.json", {"mean_nll": history})
    return model


def cmd_train_tagger(ws: Workspace) -> None:
    if ws.cfg["tagger"]["train_on"] == "split":
        labeled = load_labels(ws.need("extract_train.jsonl", "split-extract"))
    else:
        labeled = load_labels(ws.need("labels.jsonl", "label"))
    _train_tagger(ws, labeled, ws.store())


def _extract(ws: Workspace, model, items, core: Taxonomy) -> list[tuple[str, int]]:
    constrained = ws.cfg["tagger"]["constrained"]
    spans = []
    for it in items:
        tags = model.predict(it.title_tokens, constrained)
        spans.append({"id": it.id, "tags": tags, "spans": decode_spans(tags, it.title_tokens)})
    write_jsonl(ws.path("spans.jsonl"), spans)
    terms = extract_terms(model, items, core.nodes, constrained)
    write_jsonl(ws.path("extracted.jsonl"), ({"term": t, "count": c} for t, c in terms))
    ws.wrote(ws.path("spans.jsonl"), ws.path("extracted.jsonl"))
    return terms


def cmd_extract(ws: Workspace) -> None:
    core = ws.taxonomy()
    model = load_tagger(ws.need("tagger.json", "train-tagger").with_suffix(""), ws.store())
    items = ws.items()
    terms = _extract(ws, model, items, core)
    split_path = ws.path("extract_split.json")
    if split_path.exists():
        # closed-world check: how many held-out terms come back, by rank
        test_terms = set(json.loads(split_path.read_text())["test_terms"])
        ranked = [t for t, _ in terms]
        ks = sorted(set(ws.cfg["eval"]["ks"]) | {len(ranked)})
        recall = {str(k): len(test_terms & set(ranked[:k])) / len(test_terms) for k in ks if k > 0}
        ws.write_json("extraction_report.json", {"test_terms": len(test_terms), "extracted": len(ranked), "recall_at_k": recall})


def cmd_split_attach(ws: Workspace) -> None:
    split = ablate_leaves(ws.taxonomy(), ws.cfg["split"]["ratios"], ws.cfg["seed"])
    save_split(split, ws.path("attach_split.json"))
    ws.wrote(ws.path("attach_split.json"))


def _graph(ws: Workspace, core: Taxonomy, terms: list[str], direction: str | None = None):
    a = ws.cfg["attach"]
    return build_graph(core, terms, ws.queries(), ws.items(), direction or a["r1_direction"], tuple(a["relations"]))


def cmd_build_graph(ws: Workspace) -> None:
    split = load_split(ws.need("attach_split.json", "split-attach"))
    save_graph(_graph(ws, split.core, split.new_terms), ws.path("graph.json"))
    ws.wrote(ws.path("graph.json"))
    save_bins(BinSpec(), ws.path("bins.json"))
    ws.wrote(ws.path("bins.json"))


def _fit(ws: Workspace, ctx: GraphContext, core: Taxonomy, split, cfg: AttachConfig, dev_gold):
    pairs = build_training_pairs(core, split, cfg.negative_ratio, cfg.anchors, cfg.seed)
    return train_attach(pairs, ctx, cfg, dev_gold)


def cmd_train_attach(ws: Workspace) -> None:
    split = load_split(ws.need("attach_split.json", "split-attach"))
    graph = load_graph(ws.need("graph.json", "build-graph"))
    ctx = GraphContext.build(graph, ws.store())
    res = _fit(ws, ctx, split.core, split, attach_config(ws.cfg), split.gold("dev"))
    res.model.save(ws.path("attach"), {"best_epoch": res.best_epoch})
    ws.wrote(ws.path("attach.json"), ws.path("attach.bin"))
    ws.write_json("attach_history.json", {"history": res.history, "best_epoch": res.best_epoch, "best_dev_edge_f1": res.best_dev_f1})


def cmd_attach(ws: Workspace) -> None:
    from .attach import AttachModel

    graph = load_graph(ws.need("graph.json", "build-graph"))
    model = AttachModel.load(ws.need("attach.json", "train-attach").with_suffix(""))
    ctx = GraphContext.build(graph, ws.store())
    save_predictions(predict(model, ctx, graph.new_terms), ws.path("predictions.jsonl"))
    ws.wrote(ws.path("predictions.jsonl"))


def _report(ws: Workspace, preds: list[AttachmentPrediction], gold: dict[str, str], core: Taxonomy, name: str = "report"):
    e = ws.cfg["eval"]
    preds = [p for p in preds if p.term in gold]
    top = {p.term: p.best for p in preds}
    ranked = {p.term: [v for v, _ in p.ranked] for p in preds}
    rep = evaluate(top, gold, core, ranked, ks=[int(k) for k in e["ks"]], thresholds=e["thresholds"], c=e["c"])
    rep.save(ws.path(f"{name}.json"))
    save_pr_curve(rep.pr_curve, ws.path("pr_curve.tsv" if name == "report" else f"{name}_pr_curve.tsv"))
    ws.wrote(ws.path(f"{name}.json"), ws.path("pr_curve.tsv" if name == "report" else f"{name}_pr_curve.tsv"))
    return rep


def _baseline_rows(ws: Workspace, split, part: str) -> dict[str, dict]:
    gold = split.gold(part)
    terms = list(gold)
    out = {}
    for name, preds in (
        ("Random", random_attach(terms, split.core, ws.cfg["seed"])),
        ("Root", root_attach(terms, split.core)),
        ("Substr", substr_attach(terms, split.core)),
        ("I2T", i2t_attach(terms, split.core, ws.items())),
    ):
        out[name] = {"edge_f1": edge_prf(preds, gold)[2], "ancestor_f1": ancestor_prf(preds, gold, split.core)[2]}
    return out


def cmd_evaluate(ws: Workspace, predictions: str | None = None) -> None:
    split = load_split(ws.need("attach_split.json", "split-attach"))
    part = ws.cfg["eval"]["part"]
    ppath = Path(predictions) if predictions else ws.need("predictions.jsonl", "attach")
    if not ppath.exists():
        raise FileNotFoundError(f"missing predictions: {ppath}")
    gold = split.gold(part)
    preds = load_predictions(ppath)
    missing = set(gold) - {p.term for p in preds}
    if missing:
        raise ValueError(f"{len(missing)} gold terms have no prediction, e.g. {sorted(missing)[0]!r}")
    _report(ws, preds, gold, split.core)
    ws.write_json("baselines.json", _baseline_rows(ws, split, part))


def cmd_ablate(ws: Workspace) -> None:
    split = load_split(ws.need("attach_split.json", "split-attach"))
    store = ws.store()
    base = attach_config(ws.cfg)
    grid = ws.cfg["ablate"]
    dev, test = split.gold("dev"), split.gold("test")
    contexts: dict[str, GraphContext] = {}

    def context(direction: str) -> GraphContext:
        if direction not in contexts:
            g = _graph(ws, split.core, split.new_terms, direction).with_relations(("r1", "r2", "r3"))
            shared = next(iter(contexts.values())).featurizer if contexts else None
            contexts[direction] = GraphContext.build(g, store, shared)
        return contexts[direction]

    variants = [("representation", code, with_flags(base, code)) for code in grid["representations"]]
    graph_base = with_flags(base, "L + W + H + G")
    for layers in grid["layers"]:
        variants.append(("graph", f"layers={layers}", replace(graph_base, layers=int(layers), relations=("r1", "r3"))))
    for d in grid["directions"]:
        variants.append(("graph", f"r1 {d}", replace(graph_base, r1_direction=d, relations=("r1", "r3"))))
    for rels in grid["relation_sets"]:
        variants.append(("graph", "{" + ",".join(rels) + "}", replace(graph_base, relations=tuple(rels))))

    rows = []
    for group, name, cfg in variants:
        ctx = context(cfg.r1_direction)
        res = _fit(ws, ctx, split.core, split, cfg, dev)
        row = {"group": group, "variant": name, "best_epoch": res.best_epoch}
        for part, gold in (("dev", dev), ("test", test)):
            preds = predict(res.model, ctx, list(gold))
            top = {p.term: p.best[0] for p in preds}
            row[f"{part}_edge_f1"] = edge_prf(top, gold)[2]
            row[f"{part}_ancestor_f1"] = ancestor_prf(top, gold, split.core)[2]
        log.info("ablate %-22s dev %.3f test %.3f", name, row["dev_edge_f1"], row["test_edge_f1"])
        rows.append(row)
    for name, r in _baseline_rows(ws, split, "test").items():
        rows.append({"group": "baseline", "variant": name, "best_epoch": 0, "dev_edge_f1": None,
                     "dev_ancestor_f1": None, "test_edge_f1": r["edge_f1"], "test_ancestor_f1": r["ancestor_f1"]})
    ws.write_json("ablation.json", rows)
    cols = ["group", "variant", "dev_edge_f1", "dev_ancestor_f1", "test_edge_f1", "test_ancestor_f1", "best_epoch"]
    fmt = lambda v: "-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))  # noqa: E731
    lines = ["\t".join(cols)] + ["\t".join(fmt(r[c]) for c in cols) for r in rows]
    ws.path("ablation.tsv").write_text("\n".join(lines) + "\n")
    ws.wrote(ws.path("ablation.tsv"))
    print("\n".join(lines))


def cmd_enrich(ws: Workspace) -> None:
    """Extract new terms, attach them, and emit the enriched taxonomy."""
    cfg = ws.cfg
    full = ws.taxonomy()
    items, store = ws.items(), ws.store()
    split = None
    if cfg["enrich"]["holdout_leaves"]:
        split = ablate_leaves(full, cfg["split"]["ratios"], cfg["seed"])
        save_split(split, ws.path("attach_split.json"))
        ws.wrote(ws.path("attach_split.json"))
    core = split.core if split else full

    labeled = _label(ws, core, items)
    tagger = _train_tagger(ws, labeled, store)
    terms = [t for t, c in _extract(ws, tagger, items, core) if c >= cfg["extract"]["min_count"]]
    if not terms:
        raise ValueError("no new terms were extracted")
    graph = _graph(ws, core, terms)
    save_graph(graph, ws.path("graph.json"))
    save_bins(BinSpec(), ws.path("bins.json"))
    ws.wrote(ws.path("graph.json"), ws.path("bins.json"))

    # self-supervision from the core only; without dev gold the lowest-loss epoch is kept
    acfg = replace(attach_config(cfg), anchors="core")
    ctx = GraphContext.build(graph, store)
    res = _fit(ws, ctx, core, None, acfg, None)
    res.model.save(ws.path("attach"), {"best_epoch": res.best_epoch})
    ws.wrote(ws.path("attach.json"), ws.path("attach.bin"))
    ws.write_json("attach_history.json", {"history": res.history, "best_epoch": res.best_epoch})

    preds = predict(res.model, ctx, graph.new_terms)
    save_predictions(preds, ws.path("predictions.jsonl"))
    ws.wrote(ws.path("predictions.jsonl"))
    enriched = core
    kept = filter_predictions(preds, cfg["enrich"]["c"])
    for p in kept:
        enriched = enriched.attach_term(p.best[0], p.term)
    enriched.save_tsv(ws.path("enriched_taxonomy.tsv"))
    ws.wrote(ws.path("enriched_taxonomy.tsv"))
    ws.write_json("enriched_taxonomy.json", enriched.to_json())
    summary = {"core_nodes": len(core), "extracted": len(terms), "attached": len(kept), "threshold": cfg["enrich"]["c"]}
    if split is not None:
        gold = split.gold()
        found = [p for p in preds if p.term in gold]
        summary["recovered_leaves"] = len(found)
        summary["held_out_leaves"] = len(gold)
        if found:
            _report(ws, found, {p.term: gold[p.term] for p in found}, core)
    ws.write_json("enrich_summary.json", summary)


# -- entry point ---------------------------------------------------------------------------

COMMANDS = {
    "synth": cmd_synth,
    "label": cmd_label,
    "split-extract": cmd_split_extract,
    "train-tagger": cmd_train_tagger,
    "extract": cmd_extract,
    "split-attach": cmd_split_attach,
    "build-graph": cmd_build_graph,
    "train-attach": cmd_train_attach,
    "attach": cmd_attach,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "enrich": cmd_enrich,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taxenrich", description="Taxonomy enrichment pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="working directory for inputs and artifacts")
        p.add_argument("--config", help="JSON config; missing keys take the defaults")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config field, e.g. attach.lr=1e-3")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--predictions", help="predictions.jsonl to score (default: the one in --out)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        ws = Workspace(args.out, copy.deepcopy(cfg))
        if args.command == "evaluate":
            cmd_evaluate(ws, args.predictions)
        else:
            COMMANDS[args.command](ws)
        ws.record(args.command)
    except FloatingPointError as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
