"""Brute-force relational oracles used by the tests.

Relations here are plain ``(attrs, {row_tuple: embedding_vector})`` pairs and
every operator is a nested loop over Python dicts.
"""

from __future__ import annotations

import numpy as np


def natural_join(l_attrs, l_map, r_attrs, r_map):
    attrs = list(l_attrs) + [a for a in r_attrs if a not in l_attrs]
    out = {}
    for lr, le in l_map.items():
        for rr, re in r_map.items():
            ld, rd = dict(zip(l_attrs, lr)), dict(zip(r_attrs, rr))
            if all(ld[a] == rd[a] for a in l_attrs if a in rd):
                merged = {**rd, **ld}
                out[tuple(merged[a] for a in attrs)] = np.concatenate([le, re])
    return tuple(attrs), out


def projected_union(inputs, attrs, agg):
    bags: dict[tuple, list] = {}
    for in_attrs, m in inputs:
        for row, e in m.items():
            d = dict(zip(in_attrs, row))
            bags.setdefault(tuple(d[a] for a in attrs), []).append(np.asarray(e, dtype=float))
    out = {}
    for key, vecs in bags.items():
        stack = np.stack(vecs)
        if agg == "sum":
            out[key] = stack.sum(axis=0)
        elif agg == "mean":
            out[key] = stack.sum(axis=0) / len(vecs)
        else:
            out[key] = stack.max(axis=0)
    return tuple(attrs), out


def select(attrs, m, pred):
    return tuple(attrs), {r: e for r, e in m.items() if pred(dict(zip(attrs, r)))}


def difference(l_attrs, l_map, r_attrs, r_map):
    right = {tuple(dict(zip(r_attrs, r))[a] for a in l_attrs) for r in r_map}
    return tuple(l_attrs), {r: e for r, e in l_map.items() if r not in right}


def rename(attrs, m, mapping):
    return tuple(mapping.get(a, a) for a in attrs), dict(m)


def as_map(rel):
    return rel.attrs, {r: rel.emb.data[i] for i, r in enumerate(rel.rows)}


def same(rel, attrs, m, atol=0.0):
    """Compare an EmbeddedRelation with an oracle result (attribute order may differ)."""
    if sorted(rel.attrs) != sorted(attrs):
        return False
    perm = [list(attrs).index(a) for a in rel.attrs]
    got = {r: rel.emb.data[i] for i, r in enumerate(rel.rows)}
    want = {tuple(row[p] for p in perm): e for row, e in m.items()}
    if set(got) != set(want):
        return False
    return all(np.allclose(got[r], want[r], atol=atol, rtol=0) for r in got)
