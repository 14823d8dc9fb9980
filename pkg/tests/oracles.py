"""Brute-force reference implementations of the attachment metrics and span matching.

The metric oracles work straight from a child -> parent dict, enumerating instead of
reusing any helper from the package.
"""

import numpy as np


def random_parent_map(rng, n):
    return {f"n{i}": f"n{int(rng.integers(i))}" for i in range(1, n)}


def chain(parent, node):
    out = [node]
    while out[-1] in parent:
        out.append(parent[out[-1]])
    return out


def edge_f1(preds, gold):
    tp = len([t for t in preds if preds[t] == gold[t]])
    p = tp / len(preds) if preds else 0.0
    r = tp / len(gold) if gold else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def ancestor_micro(preds, gold, parent):
    inter = n_sys = n_gold = 0
    for t in gold:
        g = chain(parent, gold[t])
        n_gold += len(g)
        if t in preds:
            s = chain(parent, preds[t])
            n_sys += len(s)
            inter += len([x for x in s if x in g])
    p = inter / n_sys if n_sys else 0.0
    r = inter / n_gold if n_gold else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def hit_at_k(ranked, gold, k):
    hits = 0
    for t, g in gold.items():
        lst = ranked.get(t, [])
        if g in lst and lst.index(g) < k:
            hits += 1
    return hits / len(gold) if gold else 0.0


def neighbor_precision(preds, gold, parent):
    nodes = set(parent) | set(parent.values())
    good = 0
    for t, v in preds.items():
        path = chain(parent, v)
        ok = False
        for x in nodes:
            on_path = x in path
            sibling = any(x != m and x in parent and parent.get(m) == parent[x] for m in path)
            if (on_path or sibling) and x == gold[t]:
                ok = True
        good += ok
    return good / len(preds) if preds else 0.0


def pr_rows(top, gold, thresholds):
    rows = []
    for c in sorted(thresholds):
        kept = {t: v for t, (v, prob) in top.items() if not prob < c}
        p, r, _ = edge_f1(kept, gold)
        rows.append((c, p, r, len(kept)))
    return rows


def random_instance(rng, n_nodes):
    """Random tree plus gold/predicted parents, rankings and probabilities for some new terms."""
    parent = random_parent_map(rng, n_nodes)
    nodes = ["n0"] + list(parent)
    n_terms = int(rng.integers(0, 30))
    gold = {f"t{k}": nodes[int(rng.integers(len(nodes)))] for k in range(n_terms)}
    ranked, top = {}, {}
    for t in gold:
        order = [nodes[i] for i in rng.permutation(len(nodes))]
        if rng.random() < 0.3:  # put gold near the front sometimes
            order.remove(gold[t])
            order.insert(int(rng.integers(0, 3)), gold[t])
        ranked[t] = order
        top[t] = (order[0], float(np.round(rng.random(), 2)))
    return parent, nodes, gold, ranked, top


def oracle_spans(tokens, vocab):
    """Scan positions; at each, take the longest vocabulary phrase starting there."""
    phrases = {tuple(v.split()) for v in vocab}
    out, i = [], 0
    while i < len(tokens):
        best = 0
        for j in range(len(tokens), i, -1):
            if tuple(tokens[i:j]) in phrases:
                best = j - i
                break
        if best:
            out.append((i, i + best))
            i += best
        else:
            i += 1
    return out
