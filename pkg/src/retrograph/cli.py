"""Command-line entry point: tokenize, emit-priors, augment, train, predict, eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from retrograph import __version__
from retrograph.augment import SplitViolation, augment_dataset, read_augmented, write_augmented
from retrograph.config import ConfigError, load_config, resolved
from retrograph.corpus import bundled_corpus_path, toy_corpus
from retrograph.decoding import EmptyTestSet, ModelPredictor, evaluate
from retrograph.features import featurize, model_tokens
from retrograph.model import ModelConfig, load_checkpoint
from retrograph.priors import (
    HOPS,
    BiasMode,
    DuplicateMapNumber,
    IntraBiasConfig,
    all_pairs_distance,
    cross_alignment,
    hop_masks,
    intra_bias,
)
from retrograph.reactions import (
    EmptyAfterRejects,
    MalformedLine,
    ReactionRecord,
    by_split,
    ingest,
    parse_line,
    parse_ratio,
    write_reactions,
)
from retrograph.smiles import SmilesError, parse, tokenize
from retrograph.training import EmptyDataset, TrainConfig, train
from retrograph.vocab import Vocab

log = logging.getLogger("retrograph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
DATA_ERRORS = (
    SmilesError, MalformedLine, EmptyAfterRejects, EmptyTestSet, EmptyDataset,
    SplitViolation, DuplicateMapNumber, ConfigError, FileNotFoundError, IsADirectoryError, PermissionError,
    UnicodeDecodeError,
)


class UsageError(Exception):
    pass


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# --------------------------------------------------------------------------
# manifests


def _sha256(path) -> str | None:
    p = Path(path)
    if not p.is_file():
        return None
    return hashlib.sha256(p.read_bytes()).hexdigest()


def write_manifest(output, command: str, argv: list[str], config: dict, inputs: list,
                   seed, started: float) -> Path:
    out = Path(output)
    path = out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p},
        "outputs": [str(out)],
        "seed": seed,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def _emit(text: str, output) -> None:
    if output:
        path = Path(output)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
    else:
        sys.stdout.write(text)


def _ingest(args, path) -> list[ReactionRecord]:
    try:
        ratio = parse_ratio(args.split_ratio) if args.split_ratio else None
    except ValueError as e:
        raise UsageError(str(e)) from e
    rejects = getattr(args, "rejects", None)
    return ingest(path, args.split, ratio, args.split_seed, rejects)


# --------------------------------------------------------------------------
# subcommands


def cmd_tokenize(args, argv, started) -> int:
    lines = list(args.smiles)
    if args.input:
        lines += [ln.strip() for ln in Path(args.input).read_text(encoding="utf-8").splitlines()
                  if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise UsageError("tokenize: give SMILES arguments or --input")
    out = []
    for s in lines:
        seq = tokenize(s)
        if args.atoms:
            out.append(" ".join(
                f"{t.text}/{t.atom_index}" if t.atom_index is not None else t.text for t in seq
            ))
        else:
            out.append(" ".join(seq.texts))
    _emit("\n".join(out) + "\n", args.output)
    if args.output:
        write_manifest(args.output, "tokenize", argv, {"atoms": args.atoms}, [args.input], args.seed, started)
    return EXIT_OK


def _matrix_block(name: str, m: np.ndarray, integer: bool = False) -> str:
    rows = [f"{m.shape[0]} {m.shape[1]} {name}"]
    for row in m:
        if integer:
            rows.append(" ".join("inf" if not np.isfinite(v) else str(int(v)) for v in row))
        else:
            rows.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(rows) + "\n"


def prior_bundle(rec: ReactionRecord, cfg: IntraBiasConfig) -> str:
    p_graph, p_seq = parse(rec.product)
    r = parse(rec.reactants)
    dist = all_pairs_distance(p_graph)
    masks = hop_masks(dist)
    parts = [_matrix_block("D", dist.d, integer=True)]
    parts += [_matrix_block(f"m{h}", masks[h], integer=True) for h in HOPS]
    parts.append(_matrix_block("B_intra", intra_bias(p_seq, dist, cfg).b))
    parts.append(_matrix_block("B_cross", cross_alignment((p_graph, p_seq), r).b))
    return "".join(parts)


def cmd_emit_priors(args, argv, started) -> int:
    if bool(args.reaction) == bool(args.input):
        raise UsageError("emit-priors: give exactly one of --reaction or --input")
    if args.reaction:
        rec = parse_line(args.reaction, 1)
    else:
        records = ingest(args.input)
        matches = [r for r in records if args.id is None or r.id == args.id]
        if not matches:
            raise MalformedLine(f"no record with id {args.id!r}")
        rec = matches[0]
    try:
        weights = tuple(float(w) for w in args.weights.split(","))
        cfg = IntraBiasConfig(BiasMode(args.mode), weights, args.sigma, args.lambda_intra)
    except ValueError as e:
        raise UsageError(f"emit-priors: {e}") from e
    _emit(prior_bundle(rec, cfg), args.output)
    if args.output:
        conf = {"mode": args.mode, "sigma": args.sigma, "weights": weights, "id": rec.id}
        write_manifest(args.output, "emit-priors", argv, conf, [args.input], args.seed, started)
    return EXIT_OK


def cmd_augment(args, argv, started) -> int:
    records = _ingest(args, args.input)
    train_records = [r for r in records if r.split in (None, "train")]
    n = write_augmented(args.output, augment_dataset(train_records, args.factor, args.seed))
    log.info("wrote %d pairs from %d training records", n, len(train_records))
    conf = {"factor": args.factor, "split_ratio": args.split_ratio, "split_seed": args.split_seed}
    write_manifest(args.output, "augment", argv, conf, [args.input, args.split], args.seed, started)
    return EXIT_OK


def cmd_train(args, argv, started) -> int:
    model_over, train_over = load_config(args.config) if args.config else ({}, {})
    train_over.setdefault("seed", args.seed)
    if args.max_steps is not None:
        train_over["max_steps"] = args.max_steps
    tcfg = TrainConfig(**train_over)
    records = _ingest(args, args.data)
    tagged = any(r.split for r in records)
    train_recs = by_split(records, "train") if tagged else records
    valid_recs = by_split(records, "valid") if tagged else []
    if not train_recs:
        raise EmptyDataset("no training records")
    if args.augmented:
        pairs = [(p.product_variant, p.reactants_variant) for p in read_augmented(args.augmented)]
    else:
        pairs = [(p.product_variant, p.reactants_variant)
                 for p in augment_dataset(train_recs, tcfg.augment_factor, tcfg.seed)]
    vocab = Vocab.build(model_tokens(s) for pair in pairs for s in pair)
    mcfg = ModelConfig(vocab_size=len(vocab), **model_over)
    train_ex = [featurize(p, r, vocab, mcfg) for p, r in pairs]
    valid_ex = [featurize(r.product, r.reactants, vocab, mcfg) for r in valid_recs]
    result = train(tcfg, mcfg, train_ex, valid_ex, args.out, vocab, log_fn=log.info)
    log.info("best checkpoint: %s", result.checkpoint)
    write_manifest(args.out, "train", argv, resolved(mcfg, tcfg),
                   [args.data, args.split, args.augmented, args.config], tcfg.seed, started)
    return EXIT_OK


def _predictor(args):
    model, tokens = load_checkpoint(args.checkpoint)
    return ModelPredictor(model, Vocab(tokens), args.beam, args.max_len, args.alpha)


def cmd_predict(args, argv, started) -> int:
    predictor = _predictor(args)
    out = []
    text = Path(args.input).read_text(encoding="utf-8")
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("\t")[0].strip()
        if not line or line.startswith("#"):
            continue
        product = line.split(">")[-1] if ">" in line else line
        out.append(f"# {n}\t{product}")
        for rank, cand in enumerate(predictor(product)[: args.topk], start=1):
            out.append(f"{rank}\t{cand.score:.6f}\t{cand.smiles}")
    _emit("\n".join(out) + "\n", args.output)
    if args.output:
        conf = {"beam": args.beam, "topk": args.topk, "max_len": args.max_len, "alpha": args.alpha}
        write_manifest(args.output, "predict", argv, conf, [args.checkpoint, args.input], args.seed, started)
    return EXIT_OK


def cmd_eval(args, argv, started) -> int:
    records = _ingest(args, args.data)
    if any(r.split for r in records):
        records = by_split(records, args.subset)
    if not records:
        raise EmptyTestSet(f"no {args.subset} records in {args.data}")
    report = evaluate(_predictor(args), records)
    _emit(report.to_text(), args.output)
    if args.output:
        conf = {"beam": args.beam, "max_len": args.max_len, "alpha": args.alpha, "subset": args.subset}
        write_manifest(args.output, "eval", argv, conf, [args.checkpoint, args.data, args.split],
                       args.seed, started)
    return EXIT_OK


def cmd_make_corpus(args, argv, started) -> int:
    write_reactions(args.output, toy_corpus(args.n, args.seed))
    write_manifest(args.output, "make-corpus", argv, {"n": args.n}, [], args.seed, started)
    return EXIT_OK


def cmd_replay(args, argv, started) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    return main(manifest["argv"])


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retrograph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    def split_opts(p):
        p.add_argument("--split", help="companion file of 'id<TAB>train|valid|test' lines")
        p.add_argument("--split-ratio", help="e.g. 80/10/10")
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--rejects", help="write rejected lines here")

    p = add("tokenize", cmd_tokenize, "split SMILES into tokens")
    p.add_argument("smiles", nargs="*")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--atoms", action="store_true", help="annotate atom tokens with their atom index")

    p = add("emit-priors", cmd_emit_priors, "write distance, hop-mask and bias matrices for a reaction")
    p.add_argument("--reaction", help="'reactants>>product' line")
    p.add_argument("--input", help="reaction file")
    p.add_argument("--id", help="record id within --input (default: first record)")
    p.add_argument("--mode", choices=[m.value for m in BiasMode], default="gaussian")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--weights", default="1,0.5,0.25,0.125")
    p.add_argument("--lambda-intra", type=float, default=1.0)
    p.add_argument("--output")

    p = add("augment", cmd_augment, "root-enumeration augmentation of the training split")
    p.add_argument("input")
    p.add_argument("--factor", type=_positive, default=20)
    p.add_argument("--output", required=True)
    split_opts(p)

    p = add("train", cmd_train, "train a model")
    p.add_argument("--data", required=True, help="reaction file")
    p.add_argument("--augmented", help="pre-augmented training pairs (from 'augment')")
    p.add_argument("--config", help="'key = value' config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-steps", type=int)
    split_opts(p)

    for name, func, text in (("predict", cmd_predict, "beam-search reactant candidates"),
                             ("eval", cmd_eval, "top-K accuracy on a reaction file")):
        p = add(name, func, text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--beam", type=_positive, default=10)
        p.add_argument("--max-len", type=_positive, default=200)
        p.add_argument("--alpha", type=float, default=0.6)
        p.add_argument("--output")
        if name == "predict":
            p.add_argument("--input", required=True, help="one product SMILES (or reaction) per line")
            p.add_argument("--topk", type=_positive, default=10)
        else:
            p.add_argument("--data", required=True)
            p.add_argument("--subset", choices=["train", "valid", "test"], default="test")
            split_opts(p)

    p = add("make-corpus", cmd_make_corpus, "generate the synthetic toy reaction corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--n", type=_positive, default=32)

    p = add("replay", cmd_replay, "re-run the command recorded in a manifest")
    p.add_argument("manifest")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_help())
    except UsageError as e:
        sys.stderr.write(str(e) + ("" if str(e).endswith("\n") else "\n"))
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        return args.func(args, argv, started)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except DATA_ERRORS as e:
        sys.stderr.write(f"data error: {type(e).__name__}: {e}\n")
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        sys.stderr.write(f"runtime failure: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
