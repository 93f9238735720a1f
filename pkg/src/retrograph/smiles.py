"""SMILES tokenization, parsing and re-serialization.

The supported language is the subset that shows up in USPTO-style reaction
files: organic-subset atoms, bracket atoms (isotope, chirality, H count,
charge, atom-map class), the bond symbols ``- = # : / \\``, branches, ring
closures ``1``-``9`` and ``%10``-``%99`` and ``.``-separated components.

Stereo markers are kept in the token stream but carry no graph meaning.
Nothing here checks valence or perceives aromaticity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property

# fmt: off
ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs
Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl
Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh
Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og
""".split())
# fmt: on
ORGANIC = frozenset({"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})
AROMATIC_ORGANIC = frozenset({"b", "c", "n", "o", "p", "s"})
AROMATIC_BRACKET = frozenset({"b", "c", "n", "o", "p", "s", "se", "as", "te"})

_SYMBOL_ALT = "|".join(sorted(ELEMENTS | AROMATIC_BRACKET, key=lambda s: (-len(s), s)))
_BRACKET_RE = re.compile(
    r"\[(?P<isotope>\d+)?"
    rf"(?P<symbol>{_SYMBOL_ALT})"
    r"(?P<chiral>@(?:@|TH[12]|AL[12]|SP[1-3]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>[+-](?:\d+|\+*|-*))?"
    r"(?::(?P<map>\d+))?\]"
)
_MAP_SUFFIX_RE = re.compile(r":\d+\]$")


class SmilesError(ValueError):
    """Base class for everything the tokenizer and parser reject."""

    @property
    def reason(self) -> str:
        return type(self).__name__


class EmptySmiles(SmilesError):
    pass


class UnbalancedBracket(SmilesError):
    pass


class IllegalCharacter(SmilesError):
    pass


class InvalidAtom(SmilesError):
    pass


class UnmatchedRingClosure(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class DanglingBond(SmilesError):
    pass


class EmptyComponent(SmilesError):
    pass


class DuplicateBond(SmilesError):
    pass


class EmptyGraph(SmilesError):
    pass


class TokenKind(Enum):
    ATOM = "Atom"
    BRACKET_ATOM = "BracketAtom"
    BOND = "Bond"
    BRANCH_OPEN = "BranchOpen"
    BRANCH_CLOSE = "BranchClose"
    RING_CLOSURE = "RingClosure"
    DOT = "Dot"


ATOM_KINDS = frozenset({TokenKind.ATOM, TokenKind.BRACKET_ATOM})


@dataclass(frozen=True)
class Token:
    text: str
    kind: TokenKind
    atom_index: int | None = None

    @property
    def is_atom(self) -> bool:
        return self.kind in ATOM_KINDS


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]
    source: str

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def atom_positions(self) -> list[int]:
        """Token position of every atom, indexed by atom index."""
        pos = [0] * self.atom_count
        for i, tok in enumerate(self.tokens):
            if tok.atom_index is not None:
                pos[tok.atom_index] = i
        return pos

    @property
    def atom_count(self) -> int:
        return sum(1 for t in self.tokens if t.atom_index is not None)


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    map_number: int | None = None
    explicit_h: int | None = None
    isotope: int | None = None
    bracket: bool = False

    @property
    def symbol(self) -> str:
        """Element symbol with the aromatic lowercase folded away."""
        return self.element.capitalize()


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    components: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n) or bond.a == bond.b:
                raise ValueError(f"bad bond endpoints {bond.a}-{bond.b}")
            key = frozenset((bond.a, bond.b))
            if key in seen:
                raise DuplicateBond(f"two bonds between atoms {bond.a} and {bond.b}")
            seen.add(key)
        if not self.components and n:
            object.__setattr__(self, "components", _connected_components(n, self.bonds))

    @cached_property
    def adjacency(self) -> list[dict[int, BondOrder]]:
        adj: list[dict[int, BondOrder]] = [{} for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a][bond.b] = bond.order
            adj[bond.b][bond.a] = bond.order
        return adj

    def component_of(self, atom: int) -> int:
        for ci, comp in enumerate(self.components):
            if atom in comp:
                return ci
        raise IndexError(atom)

    def subgraph(self, atoms) -> MolGraph:
        """Induced subgraph on ``atoms``, renumbered in the given order."""
        atoms = list(atoms)
        remap = {old: new for new, old in enumerate(atoms)}
        bonds = tuple(
            Bond(remap[b.a], remap[b.b], b.order)
            for b in self.bonds
            if b.a in remap and b.b in remap
        )
        return MolGraph(tuple(self.atoms[i] for i in atoms), bonds)


def _connected_components(n: int, bonds) -> tuple[tuple[int, ...], ...]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for bond in bonds:
        parent[find(bond.a)] = find(bond.b)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return tuple(tuple(g) for g in sorted(groups.values()))


# --------------------------------------------------------------------------
# tokenization


def tokenize(smiles: str) -> TokenSequence:
    if not smiles:
        raise EmptySmiles("empty SMILES string")
    tokens: list[Token] = []
    n_atoms = 0
    i, n = 0, len(smiles)
    while i < n:
        ch = smiles[i]
        if ch == "[":
            j = smiles.find("]", i + 1)
            nxt = smiles.find("[", i + 1)
            if j < 0 or (0 <= nxt < j):
                raise UnbalancedBracket(f"unclosed '[' at position {i}")
            tokens.append(Token(smiles[i : j + 1], TokenKind.BRACKET_ATOM, n_atoms))
            n_atoms += 1
            i = j + 1
            continue
        if ch == "]":
            raise UnbalancedBracket(f"stray ']' at position {i}")
        two = smiles[i : i + 2]
        if two in ("Cl", "Br"):
            tokens.append(Token(two, TokenKind.ATOM, n_atoms))
            n_atoms += 1
            i += 2
            continue
        if ch in ORGANIC or ch in AROMATIC_ORGANIC:
            tokens.append(Token(ch, TokenKind.ATOM, n_atoms))
            n_atoms += 1
        elif ch in _BOND_SYMBOLS:
            tokens.append(Token(ch, TokenKind.BOND))
        elif ch == "(":
            tokens.append(Token(ch, TokenKind.BRANCH_OPEN))
        elif ch == ")":
            tokens.append(Token(ch, TokenKind.BRANCH_CLOSE))
        elif ch.isdigit() and ch.isascii():
            tokens.append(Token(ch, TokenKind.RING_CLOSURE))
        elif ch == "%":
            label = smiles[i + 1 : i + 3]
            if len(label) != 2 or not (label.isascii() and label.isdigit()):
                raise IllegalCharacter(f"'%' must be followed by two digits (position {i})")
            tokens.append(Token(smiles[i : i + 3], TokenKind.RING_CLOSURE))
            i += 3
            continue
        elif ch == ".":
            tokens.append(Token(ch, TokenKind.DOT))
        else:
            raise IllegalCharacter(f"illegal character {ch!r} at position {i}")
        i += 1
    return TokenSequence(tuple(tokens), smiles)


def detokenize(seq) -> str:
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    return "".join(t.text for t in tokens)


def strip_map_numbers(seq: TokenSequence) -> TokenSequence:
    """Drop ``:n`` atom-map classes from bracket tokens, keeping token positions."""
    tokens = tuple(
        Token(_MAP_SUFFIX_RE.sub("]", t.text), t.kind, t.atom_index)
        if t.kind is TokenKind.BRACKET_ATOM
        else t
        for t in seq.tokens
    )
    return TokenSequence(tokens, detokenize(tokens))


def parse_bracket_atom(text: str) -> Atom:
    m = _BRACKET_RE.fullmatch(text)
    if m is None:
        raise InvalidAtom(f"cannot parse bracket atom {text!r}")
    symbol = m["symbol"]
    hcount = m["hcount"]
    charge_txt = m["charge"]
    charge = 0
    if charge_txt:
        sign = 1 if charge_txt[0] == "+" else -1
        rest = charge_txt[1:]
        charge = sign * (int(rest) if rest.isdigit() else len(charge_txt))
    map_number = int(m["map"]) if m["map"] else None
    if map_number == 0:
        map_number = None
    return Atom(
        element=symbol,
        aromatic=symbol.islower(),
        charge=charge,
        map_number=map_number,
        explicit_h=(int(hcount[1:]) if len(hcount) > 1 else 1) if hcount else 0,
        isotope=int(m["isotope"]) if m["isotope"] else None,
        bracket=True,
    )


# --------------------------------------------------------------------------
# parsing


def _implicit_order(a: Atom, b: Atom) -> BondOrder:
    return BondOrder.AROMATIC if a.aromatic and b.aromatic else BondOrder.SINGLE


def parse(smiles: str) -> tuple[MolGraph, TokenSequence]:
    seq = tokenize(smiles)
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    bonded: set[frozenset] = set()
    components: list[list[int]] = [[]]

    prev: int | None = None
    pending: BondOrder | None = None
    branches: list[int] = []
    rings: dict[str, tuple[int, BondOrder | None]] = {}
    last_kind: TokenKind | None = None

    def add_bond(a: int, b: int, order: BondOrder) -> None:
        key = frozenset((a, b))
        if a == b:
            raise UnmatchedRingClosure(f"ring closure bonds atom {a} to itself")
        if key in bonded:
            raise DuplicateBond(f"second bond between atoms {a} and {b}")
        bonded.add(key)
        bonds.append(Bond(a, b, order))

    for tok in seq.tokens:
        kind = tok.kind
        if kind in ATOM_KINDS:
            if kind is TokenKind.BRACKET_ATOM:
                atom = parse_bracket_atom(tok.text)
            else:
                atom = Atom(element=tok.text, aromatic=tok.text.islower())
            idx = len(atoms)
            atoms.append(atom)
            components[-1].append(idx)
            if prev is not None:
                add_bond(prev, idx, pending or _implicit_order(atoms[prev], atom))
            elif pending is not None:
                raise DanglingBond(f"bond symbol before the first atom in {smiles!r}")
            prev, pending = idx, None
        elif kind is TokenKind.BOND:
            if prev is None or pending is not None:
                raise DanglingBond(f"bond {tok.text!r} has no preceding atom in {smiles!r}")
            pending = _BOND_SYMBOLS[tok.text]
        elif kind is TokenKind.BRANCH_OPEN:
            if prev is None:
                raise UnbalancedParenthesis(f"branch opened before any atom in {smiles!r}")
            if pending is not None:
                raise DanglingBond(f"bond symbol before '(' in {smiles!r}")
            branches.append(prev)
        elif kind is TokenKind.BRANCH_CLOSE:
            if not branches:
                raise UnbalancedParenthesis(f"unmatched ')' in {smiles!r}")
            if last_kind is TokenKind.BRANCH_OPEN:
                raise UnbalancedParenthesis(f"empty branch in {smiles!r}")
            if pending is not None:
                raise DanglingBond(f"bond symbol before ')' in {smiles!r}")
            prev = branches.pop()
        elif kind is TokenKind.RING_CLOSURE:
            if prev is None:
                raise UnmatchedRingClosure(f"ring label {tok.text!r} before any atom")
            label = tok.text.lstrip("%")
            if label in rings:
                other, order0 = rings.pop(label)
                if pending is not None and order0 is not None and pending != order0:
                    raise UnmatchedRingClosure(f"conflicting bond orders on ring {label}")
                order = pending or order0 or _implicit_order(atoms[other], atoms[prev])
                add_bond(other, prev, order)
            else:
                rings[label] = (prev, pending)
            pending = None
        else:  # DOT
            if pending is not None:
                raise DanglingBond(f"bond symbol before '.' in {smiles!r}")
            if branches:
                raise UnbalancedParenthesis(f"'.' inside a branch in {smiles!r}")
            if rings:
                raise UnmatchedRingClosure(f"ring(s) {sorted(rings)} left open at '.'")
            if prev is None:
                raise EmptyComponent(f"empty component in {smiles!r}")
            prev = None
            components.append([])
        last_kind = kind

    if pending is not None:
        raise DanglingBond(f"trailing bond symbol in {smiles!r}")
    if branches:
        raise UnbalancedParenthesis(f"unclosed '(' in {smiles!r}")
    if rings:
        raise UnmatchedRingClosure(f"ring(s) {sorted(rings)} never closed in {smiles!r}")
    if prev is None:
        raise EmptyComponent(f"trailing '.' in {smiles!r}")

    graph = MolGraph(tuple(atoms), tuple(bonds), tuple(tuple(c) for c in components))
    return graph, seq


def split_molecules(smiles: str) -> list[str]:
    """Split a dot-joined string into its molecules (parse-checked)."""
    parse(smiles)
    return smiles.split(".")


# --------------------------------------------------------------------------
# writing


def atom_text(atom: Atom) -> str:
    needs_bracket = (
        atom.bracket
        or atom.charge
        or atom.map_number is not None
        or atom.isotope is not None
        or atom.explicit_h is not None
        or not (atom.element in ORGANIC or atom.element in AROMATIC_ORGANIC)
    )
    if not needs_bracket:
        return atom.element
    parts = ["["]
    if atom.isotope is not None:
        parts.append(str(atom.isotope))
    parts.append(atom.element)
    if atom.explicit_h:
        parts.append("H" if atom.explicit_h == 1 else f"H{atom.explicit_h}")
    if atom.charge:
        sign = "+" if atom.charge > 0 else "-"
        parts.append(sign if abs(atom.charge) == 1 else f"{sign}{abs(atom.charge)}")
    if atom.map_number is not None:
        parts.append(f":{atom.map_number}")
    parts.append("]")
    return "".join(parts)


def bond_text(order: BondOrder, a: Atom, b: Atom) -> str:
    both_aromatic = a.aromatic and b.aromatic
    if order is BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if order is BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return "=" if order is BondOrder.DOUBLE else "#"


def _ring_label(n: int) -> str:
    return str(n) if n < 10 else f"%{n}"


def _dfs(graph: MolGraph, root: int):
    """Iterative DFS; returns preorder, tree children and ring-closure pairs."""
    adj = graph.adjacency
    order = [root]
    seen = {root}
    children: dict[int, list[int]] = {root: []}
    rings: list[tuple[int, int]] = []
    ring_keys: set[frozenset] = set()
    parent = {root: None}

    def sorted_neighbors(u):
        return iter(sorted(adj[u], key=lambda v: (int(adj[u][v]), v)))

    stack = [(root, sorted_neighbors(root))]
    while stack:
        u, it = stack[-1]
        for v in it:
            if v == parent[u]:
                continue
            if v in seen:
                key = frozenset((u, v))
                if key not in ring_keys:
                    ring_keys.add(key)
                    rings.append((v, u))  # v was discovered first
                continue
            seen.add(v)
            parent[v] = u
            order.append(v)
            children[u].append(v)
            children[v] = []
            stack.append((v, sorted_neighbors(v)))
            break
        else:
            stack.pop()
    return order, children, rings


def _write_component(graph: MolGraph, root: int) -> str:
    atoms = graph.atoms
    adj = graph.adjacency
    order, children, rings = _dfs(graph, root)
    rank = {a: i for i, a in enumerate(order)}
    opens: dict[int, list[int]] = {}
    closes: dict[int, list[int]] = {}
    for first, second in rings:
        opens.setdefault(first, []).append(second)
        closes.setdefault(second, []).append(first)

    in_use: set[int] = set()
    label_of: dict[frozenset, int] = {}

    def ring_text(u: int) -> str:
        out = []
        closing = sorted(closes.get(u, ()), key=rank.__getitem__)
        for v in closing:
            out.append(_ring_label(label_of[frozenset((u, v))]))
        for v in sorted(opens.get(u, ()), key=rank.__getitem__):
            label = next(d for d in range(1, 100) if d not in in_use)
            in_use.add(label)
            label_of[frozenset((u, v))] = label
            out.append(bond_text(adj[u][v], atoms[u], atoms[v]) + _ring_label(label))
        for v in closing:
            in_use.discard(label_of[frozenset((u, v))])
        return "".join(out)

    pieces: list[str] = []
    stack: list = [root]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            pieces.append(item)
            continue
        u = item
        pieces.append(atom_text(atoms[u]))
        pieces.append(ring_text(u))
        kids = children[u]
        todo: list = []
        for k, v in enumerate(kids):
            bond = bond_text(adj[u][v], atoms[u], atoms[v])
            if k < len(kids) - 1:
                todo.extend(["(", bond, v, ")"])
            else:
                todo.extend([bond, v])
        stack.extend(reversed(todo))
    return "".join(pieces)


def write(graph: MolGraph, root: int = 0) -> str:
    """Serialize ``graph`` by depth-first traversal starting at ``root``.

    The component holding ``root`` is written first; the remaining components
    follow in their original order, each rooted at its lowest atom index.
    Neighbours are visited in ascending (bond order, atom index) order, and
    ring-closure labels reuse the smallest free digit.
    """
    if not graph.atoms:
        raise EmptyGraph("cannot write a graph with no atoms")
    if not 0 <= root < len(graph.atoms):
        raise IndexError(f"root {root} out of range for {len(graph.atoms)} atoms")
    first = graph.component_of(root)
    parts = [_write_component(graph, root)]
    for ci, comp in enumerate(graph.components):
        if ci != first:
            parts.append(_write_component(graph, min(comp)))
    return ".".join(parts)
