#!/usr/bin/env python3
"""Extract the hypernym subgraph needed by erratlas from a WordNet 3.0 data.noun file.

The subgraph holds every ancestor of the label-space classes plus every direct
child of a class's parents (the sibling sets queried by the OOV stage).

usage: build_wordnet_subgraph.py DATA_NOUN LABELS_JSON OUT_DIR [--regroup]

--regroup rewrites the "group" field of LABELS_JSON from WordNet ancestry
(organism n00004475, artifact n00021939, everything else "other").
"""
import argparse
import csv
import json
import os

ORGANISM = "n00004475"
ARTIFACT = "n00021939"


def read_data_noun(path):
    parents, names = {}, {}
    with open(path, encoding="latin-1") as f:
        for line in f:
            if line.startswith("  "):
                continue
            fields = line.split(" ")
            word_count = int(fields[3], 16)
            lemmas = [fields[4 + 2 * i] for i in range(word_count)]
            i = 4 + 2 * word_count
            ptr_count = int(fields[i])
            i += 1
            hypernyms = []
            for _ in range(ptr_count):
                symbol, offset, pos, _ = fields[i:i + 4]
                i += 4
                if symbol in ("@", "@i") and pos == "n":
                    hypernyms.append("n" + offset)
            sid = "n" + fields[0]
            parents[sid] = hypernyms
            names[sid] = lemmas[0].replace("_", " ")
    return parents, names


def ancestors(sid, parents):
    seen, stack = set(), [sid]
    while stack:
        for p in parents[stack.pop()]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("data_noun")
    ap.add_argument("labels_json")
    ap.add_argument("out_dir")
    ap.add_argument("--regroup", action="store_true")
    args = ap.parse_args()

    parents, names = read_data_noun(args.data_noun)
    with open(args.labels_json) as f:
        labels = json.load(f)
    classes = [entry["id"] for entry in labels]

    children = {}
    for child, ps in parents.items():
        for p in ps:
            children.setdefault(p, []).append(child)

    nodes = set(classes)
    for c in classes:
        nodes |= ancestors(c, parents)
        for p in parents[c]:
            nodes.update(children[p])
    for n in list(nodes):
        nodes |= ancestors(n, parents)

    edges = sorted((c, p) for c in nodes for p in parents[c])
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "hypernyms.csv"), "w", newline="\n") as f:
        for c, p in edges:
            f.write(f"{c},{p}\n")
    with open(os.path.join(args.out_dir, "synset_names.csv"), "w", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        for n in sorted(nodes):
            w.writerow([n, names[n]])

    if args.regroup:
        for entry in labels:
            anc = ancestors(entry["id"], parents) | {entry["id"]}
            entry["group"] = ("organism" if ORGANISM in anc
                              else "artifact" if ARTIFACT in anc else "other")
        with open(args.labels_json, "w") as f:
            json.dump(labels, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    main()
