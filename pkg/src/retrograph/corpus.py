"""Deterministic toy reaction corpus with consistent atom maps.

Five disconnection families are assembled from small fragment graphs:
amide coupling, ester formation from an acyl chloride, biaryl coupling,
ether formation from an alkyl bromide and Boc deprotection.  Product atoms
carry map numbers 1..n; leaving-group atoms stay unmapped.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from importlib import resources

from retrograph.reactions import ReactionRecord
from retrograph.smiles import Atom, Bond, BondOrder, MolGraph, parse, write

DEFAULT_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1}
_BOND_WEIGHT = {BondOrder.SINGLE: 1.0, BondOrder.DOUBLE: 2.0, BondOrder.TRIPLE: 3.0, BondOrder.AROMATIC: 1.5}

ACYL = ["C", "CC", "CCC", "CC(C)", "C1CC1", "c1ccccc1", "c1ccncc1", "c1ccc(F)cc1", "COC", "C1CCOC1"]
AMINE = ["C", "CC", "CCO", "C1CCCC1", "c1ccccc1", "Cc1ccccc1", "CC(C)C", "c1ccc(Cl)cc1"]
ALCOHOL = ["C", "CC", "CC(C)", "c1ccccc1", "CCc1ccccc1", "C1CCCCC1"]
ARYL = ["c1ccccc1", "c1ccc(C)cc1", "c1ccncc1", "c1ccc(F)cc1", "c1cccs1", "c1ccc(OC)cc1", "c1cncnc1"]
ALKYL = ["C", "CC", "c1ccccc1", "C=C", "C#N", "CC(=O)OC"]
PHENOL = ["c1ccccc1", "c1ccc(C)cc1", "c1ccc(Br)cc1", "C", "CC", "c1ccc(C#N)cc1"]
BOC_AMINE = ["CC", "C1CCNCC1", "c1ccccc1", "Cc1ccccc1", "CC(C)", "CCCC", "C1CC1"]

FAMILIES = ("amide", "ester", "biaryl", "ether", "deprotection")


@dataclass
class _Builder:
    """Accumulates one molecule; atoms may be tagged with a product-atom id."""

    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)
    tags: list[int | None] = field(default_factory=list)

    def add_fragment(self, smiles: str, tagger) -> int:
        graph, _ = parse(smiles)
        offset = len(self.atoms)
        for atom in graph.atoms:
            self.atoms.append(atom)
            self.tags.append(tagger())
        for b in graph.bonds:
            self.bonds.append(Bond(b.a + offset, b.b + offset, b.order))
        return offset

    def bond(self, a: int, b: int, order: BondOrder = BondOrder.SINGLE) -> None:
        self.bonds.append(Bond(a, b, order))


class _Counter:
    def __init__(self):
        self.n = 0

    def __call__(self) -> int:
        self.n += 1
        return self.n - 1


def _none():
    return None


def _hydrogens(graph: MolGraph) -> list[int]:
    used = [0.0] * len(graph.atoms)
    for b in graph.bonds:
        used[b.a] += _BOND_WEIGHT[b.order]
        used[b.b] += _BOND_WEIGHT[b.order]
    out = []
    for atom, u in zip(graph.atoms, used):
        valence = DEFAULT_VALENCE.get(atom.symbol, 0)
        out.append(max(0, int(valence - u + 1e-9)))
    return out


def _finish(builder: _Builder, product_map: dict[int, int]) -> str:
    graph = MolGraph(tuple(builder.atoms), tuple(builder.bonds))
    hs = _hydrogens(graph)
    atoms = []
    for atom, tag, h in zip(graph.atoms, builder.tags, hs):
        if tag is None:
            atoms.append(atom)
        else:
            atoms.append(replace(atom, map_number=product_map[tag], explicit_h=h, bracket=True))
    return write(MolGraph(tuple(atoms), graph.bonds), 0)


def _product(reactants: list[_Builder], new_bonds, n_tagged: int) -> _Builder:
    """Product = tagged atoms of all reactants plus the newly formed bonds."""
    prod = _Builder()
    slot: dict[int, int] = {}
    atom_by_tag: dict[int, Atom] = {}
    for r in reactants:
        for atom, tag in zip(r.atoms, r.tags):
            if tag is not None:
                atom_by_tag[tag] = atom
    for tag in range(n_tagged):
        slot[tag] = len(prod.atoms)
        prod.atoms.append(atom_by_tag[tag])
        prod.tags.append(tag)
    for r in reactants:
        for b in r.bonds:
            ta, tb = r.tags[b.a], r.tags[b.b]
            if ta is not None and tb is not None:
                prod.bond(slot[ta], slot[tb], b.order)
    for ta, tb, order in new_bonds:
        prod.bond(slot[ta], slot[tb], order)
    return prod


def make_reaction(family: str, rng: random.Random) -> tuple[str, str]:
    """One mapped (product, reactants) pair from ``family``."""
    tag = _Counter()
    new_bonds = []
    if family in ("amide", "ester"):
        acid = _Builder()
        r1 = acid.add_fragment(rng.choice(ACYL), tag)
        carbonyl = acid.add_fragment("C", tag)
        acid.bond(r1, carbonyl)
        oxo = acid.add_fragment("O", tag)
        acid.bond(carbonyl, oxo, BondOrder.DOUBLE)
        leave = acid.add_fragment("O" if family == "amide" else "Cl", _none)
        acid.bond(carbonyl, leave)
        other = _Builder()
        het = other.add_fragment("N" if family == "amide" else "O", tag)
        r2 = other.add_fragment(rng.choice(AMINE if family == "amide" else ALCOHOL), tag)
        other.bond(het, r2)
        new_bonds.append((acid.tags[carbonyl], other.tags[het], BondOrder.SINGLE))
        reactants = [acid, other]
    elif family == "biaryl":
        a = _Builder()
        ar1 = a.add_fragment(rng.choice(ARYL), tag)
        br = a.add_fragment("Br", _none)
        a.bond(ar1, br)
        b = _Builder()
        ar2 = b.add_fragment(rng.choice(ARYL), tag)
        boron = b.add_fragment("B(O)O", _none)
        b.bond(ar2, boron)
        new_bonds.append((a.tags[ar1], b.tags[ar2], BondOrder.SINGLE))
        reactants = [a, b]
    elif family == "ether":
        a = _Builder()
        r1 = a.add_fragment(rng.choice(PHENOL), tag)
        o = a.add_fragment("O", tag)
        a.bond(r1, o)
        b = _Builder()
        ch2 = b.add_fragment("C", tag)
        r2 = b.add_fragment(rng.choice(ALKYL), tag)
        b.bond(ch2, r2)
        br = b.add_fragment("Br", _none)
        b.bond(ch2, br)
        new_bonds.append((a.tags[o], b.tags[ch2], BondOrder.SINGLE))
        reactants = [b, a]
    elif family == "deprotection":
        a = _Builder()
        n = a.add_fragment("N", tag)
        r = a.add_fragment(rng.choice(BOC_AMINE), tag)
        a.bond(n, r)
        boc = a.add_fragment("C(=O)OC(C)(C)C", _none)
        a.bond(n, boc)
        reactants = [a]
    else:
        raise ValueError(f"unknown family {family!r}")

    prod = _product(reactants, new_bonds, tag.n)
    order = list(range(tag.n))
    rng.shuffle(order)
    product_map = {t: order[t] + 1 for t in range(tag.n)}
    product = _finish(prod, product_map)
    reactant_text = ".".join(_finish(r, product_map) for r in reactants)
    return product, reactant_text


def toy_corpus(n: int = 32, seed: int = 0) -> list[ReactionRecord]:
    """``n`` distinct toy reactions, families taken round-robin."""
    rng = random.Random(seed)
    records: list[ReactionRecord] = []
    seen: set[str] = set()
    attempts = 0
    while len(records) < n:
        attempts += 1
        if attempts > 100 * n:
            raise RuntimeError("fragment library too small for the requested corpus size")
        k = len(records) % len(FAMILIES)
        product, reactants = make_reaction(FAMILIES[k], rng)
        key = re.sub(r":\d+\]", "]", product)
        if key in seen:
            continue
        seen.add(key)
        records.append(ReactionRecord(product, reactants, f"toy{len(records):03d}", k + 1))
    return records


def bundled_corpus_path():
    return resources.files("retrograph") / "data" / "toy_reactions.txt"
