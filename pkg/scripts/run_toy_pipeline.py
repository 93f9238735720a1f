"""Run augment -> train -> predict -> eval on the bundled toy corpus through the CLI.

Outputs (and their manifests) land in --workdir.
"""

import argparse
import sys
from pathlib import Path

from retrograph.cli import main as cli
from retrograph.corpus import bundled_corpus_path

ROOT = Path(__file__).resolve().parents[1]


def run(argv):
    print("$ retrograph " + " ".join(argv), flush=True)
    code = cli(argv)
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, default=Path("toy_run"))
    ap.add_argument("--factor", type=int, default=5)
    ap.add_argument("--max-steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "toy.conf")
    args = ap.parse_args()
    wd = args.workdir
    wd.mkdir(parents=True, exist_ok=True)
    data = str(bundled_corpus_path())
    split = ["--split-ratio", "80/10/10", "--split-seed", str(args.seed)]
    seed = ["--seed", str(args.seed)]

    run(["augment", data, "--factor", str(args.factor), "--output", str(wd / "augmented.txt"), *split, *seed])
    run(["-v", "train", "--data", data, "--augmented", str(wd / "augmented.txt"), "--config", str(args.config),
         "--out", str(wd / "model"), "--max-steps", str(args.max_steps), *split, *seed])
    products = wd / "products.txt"
    products.write_text("".join(line.split("\t")[0].split(">>")[1] + "\n"
                                for line in Path(data).read_text().splitlines()))
    run(["predict", "--checkpoint", str(wd / "model" / "best.ckpt"), "--input", str(products),
         "--beam", "10", "--topk", "5", "--max-len", "80", "--output", str(wd / "predictions.txt"), *seed])
    run(["eval", "--checkpoint", str(wd / "model" / "best.ckpt"), "--data", data, "--subset", "test",
         "--beam", "10", "--max-len", "80", "--output", str(wd / "report_test.txt"), *split, *seed])
    run(["eval", "--checkpoint", str(wd / "model" / "best.ckpt"), "--data", data, "--subset", "train",
         "--beam", "10", "--max-len", "80", "--output", str(wd / "report_train.txt"), *split, *seed])
    print((wd / "report_test.txt").read_text())


if __name__ == "__main__":
    main()
