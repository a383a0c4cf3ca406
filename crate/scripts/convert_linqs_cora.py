#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) into a graph bundle.

Class ids follow the Planetoid ordering used by most GNN libraries:
0 Theory, 1 Reinforcement_Learning, 2 Genetic_Algorithms, 3 Neural_Networks,
4 Probabilistic_Methods, 5 Case_Based, 6 Rule_Learning.

Nodes are numbered in the order they appear in cora.content.

usage: convert_linqs_cora.py <linqs_dir> <out_bundle_dir>
"""
import os
import sys

CLASSES = [
    "Theory",
    "Reinforcement_Learning",
    "Genetic_Algorithms",
    "Neural_Networks",
    "Probabilistic_Methods",
    "Case_Based",
    "Rule_Learning",
]


def main(src, dst):
    os.makedirs(dst, exist_ok=True)
    index = {}
    feats = []
    labels = []
    with open(os.path.join(src, "cora.content")) as f:
        for line in f:
            parts = line.split()
            index[parts[0]] = len(index)
            feats.append(parts[1:-1])
            labels.append(CLASSES.index(parts[-1]))
    edges = set()
    with open(os.path.join(src, "cora.cites")) as f:
        for line in f:
            a, b = line.split()
            u, v = index[a], index[b]
            if u == v:
                continue
            edges.add((min(u, v), max(u, v)))
    with open(os.path.join(dst, "features.csv"), "w", newline="\n") as f:
        for row in feats:
            f.write(",".join(row) + "\n")
    with open(os.path.join(dst, "labels.tsv"), "w", newline="\n") as f:
        for y in labels:
            f.write(f"{y}\n")
    with open(os.path.join(dst, "edges.tsv"), "w", newline="\n") as f:
        for u, v in sorted(edges):
            f.write(f"{u}\t{v}\n")
    print(f"nodes={len(labels)} undirected_edges={len(edges)} features={len(feats[0])}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
