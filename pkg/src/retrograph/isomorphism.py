"""Labeled graph isomorphism for molecule comparison.

Small graphs (up to ``exact_limit`` atoms) are matched exactly by
backtracking; larger ones are compared through colour-refinement invariants,
which can in principle collide for non-isomorphic graphs.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from typing import Callable, Hashable

from retrograph.smiles import Atom, MolGraph

log = logging.getLogger(__name__)

EXACT_LIMIT = 12

LabelFn = Callable[[Atom], Hashable]


def full_label(atom: Atom) -> Hashable:
    return (atom.symbol, atom.aromatic, atom.charge, atom.map_number, atom.explicit_h, atom.isotope)


def chem_label(atom: Atom) -> Hashable:
    """Label used for prediction matching: map numbers and H counts ignored."""
    return (atom.symbol, atom.aromatic, atom.charge, atom.isotope)


def _edge_multiset(g: MolGraph, labels) -> Counter:
    return Counter(
        (tuple(sorted((labels[b.a], labels[b.b]), key=repr)), int(b.order)) for b in g.bonds
    )


def invariants(g: MolGraph, label: LabelFn = full_label, rounds: int = 4):
    """Order-independent summary: label/degree/edge multisets plus WL colours."""
    labels = [label(a) for a in g.atoms]
    adj = g.adjacency
    colours = [repr((labels[i], len(adj[i]))) for i in range(len(labels))]
    for _ in range(rounds):
        colours = [
            hashlib.blake2b(
                repr((colours[i], sorted((int(o), colours[j]) for j, o in adj[i].items()))).encode(),
                digest_size=12,
            ).hexdigest()
            for i in range(len(colours))
        ]
    return (
        sorted(map(repr, Counter(zip(map(repr, labels), (len(a) for a in adj))).items())),
        sorted(map(repr, _edge_multiset(g, labels).items())),
        sorted(colours),
    )


def _exact(g1: MolGraph, g2: MolGraph, label: LabelFn) -> bool:
    n = len(g1.atoms)
    l1 = [label(a) for a in g1.atoms]
    l2 = [label(a) for a in g2.atoms]
    adj1, adj2 = g1.adjacency, g2.adjacency

    # match in BFS order so every new atom is anchored to a mapped neighbour
    order: list[int] = []
    seen: set[int] = set()
    for start in sorted(range(n), key=lambda i: -len(adj1[i])):
        if start in seen:
            continue
        seen.add(start)
        queue = [start]
        while queue:
            u = queue.pop(0)
            order.append(u)
            for v in sorted(adj1[u]):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)

    mapping: dict[int, int] = {}
    used: set[int] = set()

    def feasible(u: int, w: int) -> bool:
        if l1[u] != l2[w] or len(adj1[u]) != len(adj2[w]):
            return False
        for v, order_uv in adj1[u].items():
            if v in mapping:
                if adj2[w].get(mapping[v]) != order_uv:
                    return False
        # mapped neighbours of w must be images of neighbours of u
        mapped_nbrs_w = sum(1 for x in adj2[w] if x in used)
        mapped_nbrs_u = sum(1 for v in adj1[u] if v in mapping)
        return mapped_nbrs_w == mapped_nbrs_u

    def extend(k: int) -> bool:
        if k == n:
            return True
        u = order[k]
        anchor = next((v for v in adj1[u] if v in mapping), None)
        pool = adj2[mapping[anchor]] if anchor is not None else range(n)
        for w in pool:
            if w in used or not feasible(u, w):
                continue
            mapping[u] = w
            used.add(w)
            if extend(k + 1):
                return True
            del mapping[u]
            used.discard(w)
        return False

    return extend(0)


def isomorphic(
    g1: MolGraph, g2: MolGraph, label: LabelFn = full_label, exact_limit: int = EXACT_LIMIT
) -> bool:
    if len(g1.atoms) != len(g2.atoms) or len(g1.bonds) != len(g2.bonds):
        return False
    if sorted(map(repr, (label(a) for a in g1.atoms))) != sorted(
        map(repr, (label(a) for a in g2.atoms))
    ):
        return False
    if len(g1.atoms) <= exact_limit:
        return _exact(g1, g2, label)
    return invariants(g1, label) == invariants(g2, label)


def molecules(g: MolGraph) -> list[MolGraph]:
    return [g.subgraph(comp) for comp in g.components]


def same_molecule_multiset(
    g1: MolGraph, g2: MolGraph, label: LabelFn = full_label, exact_limit: int = EXACT_LIMIT
) -> bool:
    """True iff both graphs hold the same molecules up to isomorphism, any order."""
    m1, m2 = molecules(g1), molecules(g2)
    if len(m1) != len(m2):
        return False
    unused = list(m2)
    for mol in m1:
        for k, other in enumerate(unused):
            if isomorphic(mol, other, label, exact_limit):
                del unused[k]
                break
        else:
            return False
    return True
