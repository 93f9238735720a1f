"""Regenerate tests/data/smiles_corpus.txt from hand-written molecules and toy reactions.

Each toy product and reactant set is added along with re-rooted variants, so
the corpus exercises maps, branches, ring closures and multi-component input.
"""

import argparse
import random
from pathlib import Path

from retrograph.corpus import toy_corpus
from retrograph.smiles import parse, write

TESTS = Path(__file__).resolve().parents[1] / "tests" / "data"


def variants(smiles: str, rng: random.Random, k: int) -> list[str]:
    graph, _ = parse(smiles)
    roots = rng.sample(range(len(graph.atoms)), min(k, len(graph.atoms)))
    return [write(graph, r) for r in roots]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--hand", type=Path, default=TESTS / "hand_molecules.txt")
    ap.add_argument("--output", type=Path, default=TESTS / "smiles_corpus.txt")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    hand = [ln.strip() for ln in args.hand.read_text().splitlines() if ln.strip()]
    out = list(hand)
    for s in hand:
        out += variants(s, rng, 1)
    records = [r for s in (7, 8, 9) for r in toy_corpus(32, seed=s)]
    for rec in records:
        for side in (rec.product, rec.reactants):
            out.append(side)
            out += variants(side, rng, 1)
    seen, uniq = set(), []
    for s in out:
        if s not in seen:
            seen.add(s)
            uniq.append(s)
    args.output.write_text("\n".join(uniq) + "\n")
    print(f"wrote {len(uniq)} strings to {args.output}")


if __name__ == "__main__":
    main()
