"""Regenerate the bundled toy reaction corpus."""

import argparse
from pathlib import Path

from retrograph.corpus import toy_corpus
from retrograph.reactions import write_reactions

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "retrograph" / "data" / "toy_reactions.txt"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    records = toy_corpus(args.n, args.seed)
    write_reactions(args.output, records)
    print(f"wrote {len(records)} reactions to {args.output}")


if __name__ == "__main__":
    main()
