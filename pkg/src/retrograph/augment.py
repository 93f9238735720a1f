"""Paired root-enumeration augmentation of product/reactant SMILES."""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from retrograph.reactions import ReactionRecord
from retrograph.smiles import SmilesError, parse, write

log = logging.getLogger(__name__)

RETRY_LIMIT = 8


class ParseFailure(ValueError):
    pass


class MappingIncomplete(ValueError):
    pass


class SplitViolation(ValueError):
    pass


@dataclass(frozen=True)
class AugmentedPair:
    product_variant: str
    reactants_variant: str
    origin_id: str
    variant_index: int
    warnings: tuple[str, ...] = ()

    def to_line(self) -> str:
        return f"{self.reactants_variant}>>{self.product_variant}\t{self.variant_index}\t{self.origin_id}"


def record_seed(global_seed: int, record_id: str) -> int:
    digest = hashlib.blake2b(record_id.encode("utf-8"), digest_size=8).digest()
    return global_seed ^ int.from_bytes(digest, "little")


def _check_mapping(product_graph, reactant_mols) -> None:
    product_maps = [a.map_number for a in product_graph.atoms]
    if any(m is None for m in product_maps):
        raise MappingIncomplete("product has unmapped atoms")
    counts: dict[int, int] = {}
    for graph in reactant_mols:
        for a in graph.atoms:
            if a.map_number is not None:
                counts[a.map_number] = counts.get(a.map_number, 0) + 1
    missing = [m for m in product_maps if counts.get(m) != 1]
    if missing:
        raise MappingIncomplete(f"product map numbers {missing} not found exactly once in reactants")


def reorder_reactants(product_variant: str, reactants: str) -> str:
    """Order and re-root reactants to follow a re-rooted product.

    The reactant holding the product root's map number goes first; the rest
    keep their relative order.  Every reactant sharing atoms with the
    product is re-rooted at its atom mapped to the earliest product position;
    reactants with no mapped atoms are left untouched.
    """
    prod_graph, _ = parse(product_variant)
    mol_strings = reactants.split(".")
    mols = [parse(s)[0] for s in mol_strings]
    _check_mapping(prod_graph, mols)
    position = {a.map_number: i for i, a in enumerate(prod_graph.atoms)}
    root_map = prod_graph.atoms[0].map_number

    out: list[tuple[int, str]] = []
    for k, (text, graph) in enumerate(zip(mol_strings, mols)):
        mapped = [
            (position[a.map_number], i)
            for i, a in enumerate(graph.atoms)
            if a.map_number in position
        ]
        if not mapped:
            out.append((k, text))
            continue
        root = min(mapped)[1]
        out.append((k, write(graph, root)))
    first = next(
        k for k, graph in enumerate(mols) if any(a.map_number == root_map for a in graph.atoms)
    )
    ordered = [out[first]] + [item for item in out if item[0] != first]
    return ".".join(text for _, text in ordered)


def enumerate_pair(rec: ReactionRecord, n: int, rng_seed: int) -> list[AugmentedPair]:
    """``n`` variants of one record; variant 0 is the record itself."""
    if n < 1:
        raise ValueError("need at least one variant")
    try:
        prod_graph, _ = parse(rec.product)
        parse(rec.reactants)
    except SmilesError as e:
        raise ParseFailure(f"{rec.id}: {e}") from e

    warnings: tuple[str, ...] = ()
    try:
        _check_mapping(prod_graph, [parse(s)[0] for s in rec.reactants.split(".")])
        reorder = True
    except MappingIncomplete as e:
        log.warning("%s: %s; re-rooting the product only", rec.id, e)
        warnings = (f"MappingIncomplete: {e}",)
        reorder = False

    rng = random.Random(rng_seed)
    pairs = [AugmentedPair(rec.product, rec.reactants, rec.id, 0, warnings)]
    seen = {(rec.product, rec.reactants)}
    n_atoms = len(prod_graph.atoms)
    for index in range(1, n):
        for _attempt in range(RETRY_LIMIT + 1):
            root = rng.randrange(n_atoms)
            product = write(prod_graph, root)
            reactants = reorder_reactants(product, rec.reactants) if reorder else rec.reactants
            if (product, reactants) not in seen:
                break
        seen.add((product, reactants))
        pairs.append(AugmentedPair(product, reactants, rec.id, index, warnings))
    return pairs


def augment_dataset(
    records: Iterable[ReactionRecord], factor: int, rng_seed: int
) -> Iterator[AugmentedPair]:
    """``factor`` pairs per training record, original first."""
    if factor < 1:
        raise ValueError("augmentation factor must be >= 1")
    for rec in records:
        if rec.split in ("valid", "test"):
            raise SplitViolation(f"record {rec.id} belongs to the {rec.split} split")
        yield from enumerate_pair(rec, factor, record_seed(rng_seed, rec.id))


def write_augmented(path, pairs: Iterable[AugmentedPair]) -> int:
    path = Path(path)
    lines = [p.to_line() for p in pairs]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    tmp.replace(path)
    return len(lines)


def read_augmented(path) -> list[AugmentedPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            rxn, index, origin = line.rstrip("\n").split("\t")
            reactants, _, product = rxn.split(">")
            pairs.append(AugmentedPair(product, reactants, origin, int(index)))
    return pairs
