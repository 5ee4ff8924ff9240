#!/usr/bin/env python3
"""Generate the small deterministic SMILES corpus used for desk-scale runs.

Molecules are trees of ring units joined by short linkers, decorated with
common substituents, plus some acyclic chains. Output: one SMILES per line.

    python3 scripts/gen_desk_corpus.py > data/desk.smi
"""

import random
import re
import sys

SEED = 20240501
TARGET = 1200
MIN_ATOMS, MAX_ATOMS = 3, 38

# (tokens, attachable positions). "{a}"/"{b}" are ring-closure digits.
RINGS = [
    (["c{a}", "c", "c", "c", "c", "c{a}"], [0, 1, 2, 3, 4, 5]),
    (["c{a}", "c", "c", "n", "c", "c{a}"], [0, 1, 2, 4, 5]),
    (["c{a}", "c", "n", "c", "n", "c{a}"], [0, 1, 3, 5]),
    (["c{a}", "c", "c", "s", "c{a}"], [0, 1, 2, 4]),
    (["c{a}", "c", "c", "o", "c{a}"], [0, 1, 2, 4]),
    (["c{a}", "c", "c", "[nH]", "c{a}"], [0, 1, 2, 4]),
    (["c{a}", "c", "s", "c", "n{a}"], [0, 1, 3]),
    (["c{a}", "c", "[nH]", "c", "n{a}"], [0, 1, 3]),
    (["c{a}", "c", "o", "c", "n{a}"], [0, 1, 3]),
    (["c{a}", "c", "c", "[se]", "c{a}"], [0, 1, 2, 4]),
    (["C{a}", "C", "C", "C", "C", "C{a}"], [0, 1, 2, 3, 4, 5]),
    (["C{a}", "C", "C", "C", "C{a}"], [0, 1, 2, 3, 4]),
    (["N{a}", "C", "C", "C", "C", "C{a}"], [0, 1, 2, 3, 4, 5]),
    (["N{a}", "C", "C", "O", "C", "C{a}"], [0, 1, 2, 4, 5]),
    (["N{a}", "C", "C", "N", "C", "C{a}"], [0, 1, 2, 3, 4, 5]),
    (["C{a}", "C", "C", "O", "C{a}"], [0, 1, 2, 4]),
    (["C{a}", "C", "C{a}"], [0, 1, 2]),
    (["c{a}", "c", "c", "c{b}", "c", "c", "c", "c", "c{b}", "c{a}"], [0, 1, 2, 4, 5, 6, 7, 9]),
    (["c{a}", "c", "c", "c{b}", "[nH]", "c", "c", "c{b}", "c{a}"], [0, 1, 2, 5, 6, 8]),
    (["c{a}", "c", "c", "c{b}", "s", "c", "c", "c{b}", "c{a}"], [0, 1, 2, 5, 6, 8]),
    (["c{a}", "c", "c", "c{b}", "o", "c", "c", "c{b}", "c{a}"], [0, 1, 2, 5, 6, 8]),
]
RING_WEIGHTS = [10, 5, 3, 5, 3, 2, 2, 2, 1, 2, 3, 2, 3, 3, 2, 1, 1, 3, 2, 2, 1]

SUBSTITUENTS = [
    "F", "Cl", "Br", "I", "C", "CC", "OC", "C#N", "C(=O)O", "C(=O)OC",
    "C(F)(F)F", "[N+](=O)[O-]", "N", "N(C)C", "O", "S(=O)(=O)C", "C=O",
    "SC", "B(O)O", "[Si](C)(C)C", "C(C)C", "OCC", "C(=O)N", "[Se]C",
]
SUB_WEIGHTS = [6, 5, 3, 1, 8, 3, 5, 3, 3, 2, 3, 2, 3, 2, 3, 1, 2, 1, 1, 1, 2, 2, 2, 1]

LINKERS = [
    "", "C", "CC", "O", "N", "S", "C(=O)", "C(=O)N", "NC(=O)", "C=C",
    "C#C", "OC", "[Si](C)(C)", "[Se]", "S(=O)(=O)", "CO", "N=N", "[Ge](C)(C)",
]
LINK_WEIGHTS = [10, 6, 3, 4, 3, 2, 3, 3, 2, 2, 1, 2, 1, 1, 1, 2, 1, 1]

CHAINS = ["C", "CC", "CCC", "CC(C)C", "CCOC", "CC=C", "CCN", "CC(=O)O", "CCS", "C#CC", "CC(C)(C)C", "CCCCC"]

ATOM = re.compile(r"\[[^\]]+\]|Br|Cl|[BCNOPSFI]|[cnosp]")


def atom_count(smi):
    return len(ATOM.findall(smi))


class Digits:
    def __init__(self):
        self.next = 1

    def take(self):
        d = self.next
        self.next += 1
        return str(d) if d < 10 else "%" + str(d)


def ring_unit(rng, digits, depth):
    """Ring with optional substituents and one optional child ring. Child
    rings are entered through their first atom, which is kept free."""
    tokens, slots = rng.choices(RINGS, weights=RING_WEIGHTS)[0]
    a, b = digits.take(), None
    if any("{b}" in t for t in tokens):
        b = digits.take()
    toks = [t.format(a=a, b=b) for t in tokens]
    branches = {i: [] for i in range(len(toks))}
    free = [p for p in slots if depth == 0 or p != 0]
    rng.shuffle(free)
    n_sub = rng.choice([0, 0, 1, 1, 1, 2, 2, 3])
    for _ in range(min(n_sub, len(free))):
        pos = free.pop()
        branches[pos].append(rng.choices(SUBSTITUENTS, weights=SUB_WEIGHTS)[0])
    if depth < 2 and free and rng.random() < (0.55 if depth == 0 else 0.3):
        pos = free.pop()
        linker = rng.choices(LINKERS, weights=LINK_WEIGHTS)[0]
        child = ring_unit(rng, digits, depth + 1)
        branches[pos].append(linker + child)
    out = []
    for i, t in enumerate(toks):
        out.append(t)
        for br in branches[i]:
            out.append("(" + br + ")")
    return "".join(out)


def chain_molecule(rng):
    base = rng.choice(CHAINS)
    subs = [rng.choices(SUBSTITUENTS, weights=SUB_WEIGHTS)[0] for _ in range(rng.choice([1, 2]))]
    return base + "".join("(" + s + ")" for s in subs[:-1]) + subs[-1]


def main():
    rng = random.Random(SEED)
    seen = set()
    out = []
    while len(out) < TARGET:
        if rng.random() < 0.1:
            smi = chain_molecule(rng)
        else:
            smi = ring_unit(rng, Digits(), 0)
        n = atom_count(smi)
        if n < MIN_ATOMS or n > MAX_ATOMS or smi in seen:
            continue
        seen.add(smi)
        out.append(smi)
    sys.stdout.write("# desk corpus, generated by scripts/gen_desk_corpus.py\n")
    for smi in out:
        sys.stdout.write(smi + "\n")


if __name__ == "__main__":
    main()
