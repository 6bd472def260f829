"""Small synthetic datasets behind the shipped example programs.

``python -m nrel.synthetic`` rewrites the CSV files of the examples that are
generated here (gcn, dhn_c3, gated_history).
"""

from __future__ import annotations

import argparse
import csv
import math
import os

import numpy as np


def write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])


# ----------------------------------------------------------------------------
# two-block stochastic block model for node classification
# ----------------------------------------------------------------------------


def sbm(n: int = 20, p_in: float = 0.9, p_out: float = 0.05, seed: int = 42):
    """Undirected two-block SBM; returns ``(edges, labels)`` with edges as (u, v), u < v."""
    rng = np.random.default_rng(seed)
    labels = [0 if i < n // 2 else 1 for i in range(n)]
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            p = p_in if labels[u] == labels[v] else p_out
            if rng.random() < p:
                edges.append((u, v))
    return edges, labels


def gcn_tables(n: int, edges, labels, train: list[int]):
    """Rows for the gcn example: symmetric-normalized edges with self loops,
    one-hot identity features, one-hot training labels."""
    nbrs = {u: {u} for u in range(n)}
    for u, v in edges:
        nbrs[u].add(v)
        nbrs[v].add(u)
    deg = {u: len(nbrs[u]) for u in range(n)}
    edge_rows = [(s, t, 1.0 / math.sqrt(deg[s] * deg[t])) for s in range(n) for t in sorted(nbrs[s])]
    feat_rows = [(u, *[1 if j == u else 0 for j in range(n)]) for u in range(n)]
    n_cls = max(labels) + 1
    train_rows = [(u, *[1 if labels[u] == c else 0 for c in range(n_cls)]) for u in train]
    return edge_rows, feat_rows, train_rows


def sbm_train_nodes(labels, per_block: int = 2) -> list[int]:
    out = []
    for c in sorted(set(labels)):
        out.extend([u for u, y in enumerate(labels) if y == c][:per_block])
    return out


def separable_points(n: int = 20, seed: int = 0, margin: float = 1.5):
    """Two Gaussian blobs on either side of the line x0 + x1 = 0.

    Returns ``(features, labels)`` rows: ``(i, x0, x1)`` and ``(i, y0, y1)``.
    """
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for i in range(n):
        c = i % 2
        centre = margin if c else -margin
        x = rng.normal(centre, 0.5, size=2)
        feats.append((i, float(x[0]), float(x[1])))
        labels.append((i, 1 - c, c))
    return feats, labels


# ----------------------------------------------------------------------------
# graphs for the cycle-counting example
# ----------------------------------------------------------------------------


def cycle_graph(n: int) -> list[tuple[int, int]]:
    """Directed edges in both directions around an ``n``-cycle."""
    out = []
    for i in range(n):
        j = (i + 1) % n
        out += [(i, j), (j, i)]
    return out


def random_digraph(n: int, p: float, rng: np.random.Generator, loops: bool = False):
    return [(u, v) for u in range(n) for v in range(n) if (loops or u != v) and rng.random() < p]


def dhn_tables(graphs):
    """``graphs`` is a list of (edge list, node count, label); returns Edge, Node, GraphLabel rows."""
    edge_rows, node_rows, label_rows = [], [], []
    for g, (edges, n, label) in enumerate(graphs):
        edge_rows += [(g, u, v) for u, v in edges]
        node_rows += [(g, u, 1.0) for u in range(n)]
        label_rows.append((g, *[1 if label == c else 0 for c in range(2)]))
    return edge_rows, node_rows, label_rows


def dhn_example_graphs():
    """Triangles glued into small graphs (class 1) against hexagons (class 0)."""
    graphs = []
    for k in range(3):
        graphs.append((cycle_graph(3), 3, 1))
        graphs.append((cycle_graph(6), 6, 0))
    # two triangles sharing a vertex
    bowtie = cycle_graph(3) + [(0, 3), (3, 0), (3, 4), (4, 3), (4, 0), (0, 4)]
    graphs.append((bowtie, 5, 1))
    graphs.append((cycle_graph(4), 4, 0))
    return graphs[:8]


# ----------------------------------------------------------------------------
# a toy results history for the gated-history example
# ----------------------------------------------------------------------------


def history_tables(seed: int = 0, n_drivers: int = 6, n_races: int = 4, n_cons: int = 3):
    rng = np.random.default_rng(seed)
    drivers = [(d, round(float(rng.normal()), 3), round(float(rng.normal()), 3)) for d in range(n_drivers)]
    cons = [(c, round(float(rng.normal()), 3)) for c in range(n_cons)]
    races = [(r, round(float(rng.normal()), 3), round(float(rng.normal()), 3)) for r in range(n_races)]
    results, eid = [], 0
    for d in range(n_drivers):
        for r in range(n_races):
            if rng.random() < 0.75:
                c = d % n_cons
                results.append((eid, d, r, c, round(float(rng.normal()), 3), round(float(rng.uniform(0, 1)), 3)))
                eid += 1
    target = [(d, round(float(np.mean([row[5] for row in results if row[1] == d] or [0.0])), 3))
              for d in range(n_drivers)]
    return drivers, cons, races, results, target


def regenerate(root: str) -> None:
    edges, labels = sbm(seed=42)
    e_rows, f_rows, t_rows = gcn_tables(20, edges, labels, sbm_train_nodes(labels))
    gcn = os.path.join(root, "gcn")
    write_csv(os.path.join(gcn, "edges.csv"), ["s", "t", "w"], e_rows)
    write_csv(os.path.join(gcn, "features.csv"), ["n"] + [f"x{j}" for j in range(20)], f_rows)
    write_csv(os.path.join(gcn, "train.csv"), ["n", "y0", "y1"], t_rows)
    write_csv(os.path.join(gcn, "blocks.csv"), ["n", "block"], list(enumerate(labels)))

    e_rows, n_rows, l_rows = dhn_tables(dhn_example_graphs())
    dhn = os.path.join(root, "dhn_c3")
    write_csv(os.path.join(dhn, "edges.csv"), ["g", "u", "v"], e_rows)
    write_csv(os.path.join(dhn, "nodes.csv"), ["g", "u", "x"], n_rows)
    write_csv(os.path.join(dhn, "labels.csv"), ["g", "y0", "y1"], l_rows)

    drivers, cons, races, results, target = history_tables()
    gh = os.path.join(root, "gated_history")
    write_csv(os.path.join(gh, "drivers.csv"), ["did", "age", "exp"], drivers)
    write_csv(os.path.join(gh, "constructors.csv"), ["cid", "budget"], cons)
    write_csv(os.path.join(gh, "races.csv"), ["rid", "laps", "temp"], races)
    write_csv(os.path.join(gh, "results.csv"), ["eid", "did", "rid", "cid", "grid", "points"], results)
    write_csv(os.path.join(gh, "target.csv"), ["did", "y"], target)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="Regenerate the synthetic example datasets.")
    ap.add_argument("root", nargs="?", default=os.path.join(os.path.dirname(__file__), "programs"))
    args = ap.parse_args(argv)
    regenerate(args.root)


if __name__ == "__main__":
    main()
