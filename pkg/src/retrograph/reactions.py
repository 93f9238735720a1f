"""Reaction records and the line-oriented reaction file format.

One reaction per line: ``reactants>>product``, optionally followed by
tab-separated ``id`` and ``class`` columns.  A ``reactants>agents>product``
line is accepted and the agents are dropped.  Lines starting with ``#`` and
blank lines are skipped.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from retrograph.priors import DuplicateMapNumber
from retrograph.smiles import SmilesError, parse

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class MalformedLine(ValueError):
    pass


class MissingSplit(ValueError):
    pass


class EmptyAfterRejects(ValueError):
    pass


@dataclass(frozen=True)
class ReactionRecord:
    product: str
    reactants: str
    id: str
    class_label: int | None = None
    split: str | None = None

    def to_line(self) -> str:
        cols = [f"{self.reactants}>>{self.product}", self.id]
        if self.class_label is not None:
            cols.append(str(self.class_label))
        return "\t".join(cols)


@dataclass(frozen=True)
class Reject:
    line_no: int
    reason: str
    detail: str
    text: str


def check_maps(product: str, reactants: str) -> None:
    """Parse both sides and reject map numbers repeated within one side."""
    for side in (product, reactants):
        graph, _ = parse(side)
        maps = [a.map_number for a in graph.atoms if a.map_number is not None]
        if len(maps) != len(set(maps)):
            raise DuplicateMapNumber(f"repeated atom-map number in {side!r}")


def parse_line(line: str, line_no: int) -> ReactionRecord:
    cols = line.rstrip("\n").split("\t")
    rxn = cols[0].strip()
    parts = rxn.split(">")
    if len(parts) != 3 or not parts[0] or not parts[2]:
        raise MalformedLine(f"expected 'reactants>>product', got {rxn!r}")
    reactants, product = parts[0].strip(), parts[2].strip()
    rec_id = cols[1].strip() if len(cols) > 1 and cols[1].strip() else f"L{line_no}"
    label = None
    if len(cols) > 2 and cols[2].strip():
        try:
            label = int(cols[2])
        except ValueError as e:
            raise MalformedLine(f"class column {cols[2]!r} is not an integer") from e
    check_maps(product, reactants)
    return ReactionRecord(product, reactants, rec_id, label)


def read_reactions(path) -> tuple[list[ReactionRecord], list[Reject]]:
    records, rejects = [], []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                rec = parse_line(line, line_no)
                if rec.id in seen_ids:
                    raise MalformedLine(f"duplicate record id {rec.id!r}")
            except (SmilesError, MalformedLine, DuplicateMapNumber) as e:
                rejects.append(Reject(line_no, type(e).__name__, str(e), text))
                continue
            seen_ids.add(rec.id)
            records.append(rec)
    return records, rejects


def write_reactions(path, records: Iterable[ReactionRecord]) -> None:
    lines = [r.to_line() for r in records]
    _atomic_write(Path(path), "\n".join(lines) + ("\n" if lines else ""))


def write_rejects(path, rejects: Sequence[Reject]) -> None:
    body = "".join(f"{r.line_no}\t{r.reason}\t{r.detail}\n" for r in rejects)
    _atomic_write(Path(path), body)


def ratio_split(ids: Sequence[str], ratio=(80, 10, 10), seed: int = 0) -> dict[str, str]:
    """Seeded shuffle, then exact floor-sized train/valid blocks; test takes the rest."""
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise ValueError(f"bad split ratio {ratio}")
    order = sorted(ids)
    random.Random(seed).shuffle(order)
    total = sum(ratio)
    n_train = len(order) * ratio[0] // total
    n_valid = len(order) * ratio[1] // total
    out = {}
    for i, rid in enumerate(order):
        out[rid] = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
    return out


def read_split_file(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                rid, tag = line.rstrip("\n").split("\t")
            except ValueError as e:
                raise MalformedLine(f"{path}:{n}: expected 'id<TAB>split'") from e
            if tag not in SPLITS:
                raise MalformedLine(f"{path}:{n}: unknown split {tag!r}")
            out[rid] = tag
    return out


def parse_ratio(text: str) -> tuple[int, int, int]:
    parts = text.split("/")
    if len(parts) != 3:
        raise ValueError(f"split ratio must look like 80/10/10, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def ingest(
    path,
    split_path=None,
    split_ratio=None,
    split_seed: int = 0,
    rejects_path=None,
) -> list[ReactionRecord]:
    """Read a reaction file, attach split tags and record per-line rejects.

    Split tags come from ``split_path``, else a companion ``<path>.split``
    file, else ``split_ratio``; with none of these records stay untagged.
    """
    path = Path(path)
    records, rejects = read_reactions(path)
    companion = path.with_name(path.name + ".split")
    if split_path is None and split_ratio is None and companion.exists():
        split_path = companion
    if split_path is not None:
        tags = read_split_file(split_path)
        tagged = []
        for rec in records:
            if rec.id not in tags:
                rejects.append(Reject(0, "MissingSplit", f"id {rec.id} not in {split_path}", rec.id))
                continue
            tagged.append(replace(rec, split=tags[rec.id]))
        records = tagged
    elif split_ratio is not None:
        tags = ratio_split([r.id for r in records], split_ratio, split_seed)
        records = [replace(r, split=tags[r.id]) for r in records]
    if rejects:
        log.warning("%s: %d line(s) rejected", path, len(rejects))
    if rejects_path is not None:
        write_rejects(rejects_path, rejects)
    if not records:
        raise EmptyAfterRejects(f"no usable reactions in {path}")
    return records


def by_split(records: Iterable[ReactionRecord], split: str) -> list[ReactionRecord]:
    return [r for r in records if r.split == split]


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
