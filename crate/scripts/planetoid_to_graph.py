#!/usr/bin/env python3
"""Convert raw Planetoid files (ind.<name>.{tx,ty,allx,ally,graph,test.index})
into the s2fgl graph text format.

    python3 scripts/planetoid_to_graph.py data/planetoid cora cora.graph

Needs numpy and scipy. Nodes keep the usual Planetoid order (allx rows, then
test rows sorted by index). Every node with a one-hot label row is labeled;
Citeseer's missing test nodes get zero features and label -1. Edges are
symmetrized, deduplicated and stripped of self-loops.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load(root: Path, name: str, part: str):
    with open(root / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(root: Path, name: str):
    tx, allx = load(root, name, "tx"), load(root, name, "allx")
    ty, ally = load(root, name, "ty"), load(root, name, "ally")
    graph = load(root, name, "graph")
    test_idx = [int(line) for line in (root / f"ind.{name}.test.index").read_text().split()]

    reorder = test_idx
    ordered = sorted(test_idx)
    lo, hi = ordered[0], ordered[-1]
    if hi - lo + 1 > tx.shape[0]:
        rows = np.array(ordered) - lo
        padded_x = sp.lil_matrix((hi - lo + 1, tx.shape[1]))
        padded_x[rows, :] = tx
        padded_y = np.zeros((hi - lo + 1, ty.shape[1]))
        padded_y[rows, :] = ty
        tx, ty = padded_x, padded_y

    features = sp.vstack((sp.lil_matrix(allx), sp.lil_matrix(tx))).tolil()
    onehot = np.vstack((ally, ty))
    features[reorder, :] = features[ordered, :]
    onehot[reorder, :] = onehot[ordered, :]

    n = features.shape[0]
    labels = [int(np.argmax(row)) if row.sum() > 0 else -1 for row in onehot]
    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    return features.toarray(), labels, onehot.shape[1], sorted(edges)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", type=Path, help="directory holding the ind.<name>.* files")
    ap.add_argument("name", help="cora, citeseer or pubmed")
    ap.add_argument("output", type=Path)
    args = ap.parse_args()

    feats, labels, classes, edges = convert(args.root, args.name)
    n, d = feats.shape
    with open(args.output, "w") as out:
        out.write(f"{n} {d} {classes}\n")
        for label, row in zip(labels, feats):
            out.write(" ".join([str(label)] + [f"{v:g}" for v in row]) + "\n")
        out.write("EDGES\n")
        out.writelines(f"{u} {v}\n" for u, v in edges)
    print(f"{args.output}: {n} nodes, {d} features, {classes} classes, {len(edges)} edges", file=sys.stderr)


if __name__ == "__main__":
    main()
