"""Writes hetionet_sample.tsv: a synthetic stand-in with HetioNet node ids and
metaedges, sized like a 1% edge sample (16,907 lines), and prints its counts."""

import random

METAEDGES = {
    "CbG": ("Compound", "Gene"), "CdG": ("Compound", "Gene"), "CuG": ("Compound", "Gene"),
    "CtD": ("Compound", "Disease"), "CpD": ("Compound", "Disease"), "CcSE": ("Compound", "Side Effect"),
    "CrC": ("Compound", "Compound"), "DaG": ("Disease", "Gene"), "DdG": ("Disease", "Gene"),
    "DuG": ("Disease", "Gene"), "DlA": ("Disease", "Anatomy"), "DpS": ("Disease", "Symptom"),
    "DrD": ("Disease", "Disease"), "AdG": ("Anatomy", "Gene"), "AeG": ("Anatomy", "Gene"),
    "AuG": ("Anatomy", "Gene"), "GcG": ("Gene", "Gene"), "GiG": ("Gene", "Gene"),
    "GpBP": ("Gene", "Biological Process"), "GpCC": ("Gene", "Cellular Component"),
    "GpMF": ("Gene", "Molecular Function"), "GpPW": ("Gene", "Pathway"), "Gr>G": ("Gene", "Gene"),
}
POOL = {
    "Compound": 1552, "Gene": 20945, "Disease": 137, "Side Effect": 5734, "Anatomy": 402,
    "Symptom": 438, "Biological Process": 11381, "Cellular Component": 1391,
    "Molecular Function": 2884, "Pathway": 1822,
}


def node(kind, i):
    if kind == "Compound":
        return f"Compound::DB{i:05d}"
    if kind == "Gene":
        return f"Gene::{i + 1}"
    prefix = {"Disease": "DOID", "Side Effect": "C", "Anatomy": "UBERON", "Symptom": "D",
              "Biological Process": "GO", "Cellular Component": "GO", "Molecular Function": "GO",
              "Pathway": "PC7"}[kind]
    return f"{kind}::{prefix}:{i:07d}"


def main():
    rng = random.Random(20240601)
    names = sorted(METAEDGES)
    lines = []
    while len(lines) < 16907:
        if lines and rng.random() < 0.004:
            lines.append(rng.choice(lines))
            continue
        rel = rng.choice(names)
        a, b = METAEDGES[rel]
        head = node(a, rng.randrange(POOL[a]))
        tail = node(b, rng.randrange(POOL[b]))
        lines.append(f"{head}\t{rel}\t{tail}")
    with open("hetionet_sample.tsv", "w") as f:
        f.write("# source\tmetaedge\ttarget\n")
        f.write("\n".join(lines) + "\n")
    triples = set(tuple(l.split("\t")) for l in lines)
    entities = {t[0] for t in triples} | {t[2] for t in triples}
    relations = {t[1] for t in triples}
    print(f"lines {len(lines)} triples {len(triples)} entities {len(entities)} relations {len(relations)}")


if __name__ == "__main__":
    main()
