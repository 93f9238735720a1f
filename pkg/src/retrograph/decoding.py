"""Greedy and beam-search generation, candidate matching and top-K accuracy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from retrograph import tensor as T
from retrograph.features import encode_product
from retrograph.isomorphism import chem_label, same_molecule_multiset
from retrograph.model import AttentionBiasBundle, Transformer
from retrograph.smiles import SmilesError, parse
from retrograph.tensor import log_softmax_np
from retrograph.vocab import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Vocab

log = logging.getLogger(__name__)

TOP_KS = (1, 3, 5, 10)
NEVER_GENERATED = (PAD_ID, BOS_ID, UNK_ID)


class EmptyTestSet(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    tokens: tuple[int, ...]
    logprob: float
    score: float
    finished: bool
    smiles: str = ""


@dataclass
class Beam:
    """Live hypotheses as (generated ids, cumulative log-prob), best first."""

    width: int
    hypotheses: list[tuple[tuple[int, ...], float]] = field(default_factory=lambda: [((), 0.0)])

    def prefixes(self) -> np.ndarray:
        return np.array([(BOS_ID,) + toks for toks, _ in self.hypotheses], dtype=np.int64)


def _encode_one(model: Transformer, src: np.ndarray, enc_bias: np.ndarray | None):
    src = np.asarray(src, dtype=np.int64)[None, :]
    bundle = AttentionBiasBundle(
        src_pad=src == PAD_ID,
        enc_self_bias=None if enc_bias is None else model.config.lambda_intra * enc_bias[None],
    )
    with T.no_grad():
        memory = model.encode(src, bundle)
    return memory, bundle.src_pad


def length_penalty(n_tokens: int, alpha: float) -> float:
    return float(n_tokens) ** alpha if alpha else 1.0


def beam_search(
    model: Transformer,
    src: np.ndarray,
    enc_bias: np.ndarray | None = None,
    width: int = 10,
    max_len: int = 200,
    alpha: float = 0.6,
    vocab: Vocab | None = None,
) -> list[Candidate]:
    """Beam search over ``decode_step`` log-probabilities.

    Each step keeps the ``width`` best extensions by cumulative log-prob;
    extensions that pick EOS leave the beam as finished hypotheses.  The
    finished set is ranked by ``logprob / len**alpha`` (EOS included in the
    length), exact-string duplicates keep their best score, and ties go to
    the lexicographically smaller id sequence.  If nothing finishes within
    ``max_len`` steps the surviving hypotheses are returned with
    ``finished=False``.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    memory, src_pad = _encode_one(model, src, enc_bias)
    beam = Beam(width)
    finished: list[tuple[tuple[int, ...], float]] = []
    allowed = np.array([v for v in range(model.config.vocab_size) if v not in NEVER_GENERATED])

    for _ in range(max_len):
        if not beam.hypotheses:
            break
        n = len(beam.hypotheses)
        mem = T.Tensor(np.repeat(memory.data, n, axis=0))
        logits = model.decode_step(mem, beam.prefixes(), np.repeat(src_pad, n, axis=0))
        logp = log_softmax_np(logits)
        expansions = [
            (lp + logp[h, v], toks + (int(v),))
            for h, (toks, lp) in enumerate(beam.hypotheses)
            for v in allowed
        ]
        expansions.sort(key=lambda e: (-e[0], e[1]))
        live = []
        for lp, toks in expansions[:width]:
            if toks[-1] == EOS_ID:
                finished.append((toks[:-1], lp))
            else:
                live.append((toks, lp))
        beam.hypotheses = live

    if finished:
        pool = [(toks, lp, True) for toks, lp in finished]
        lengths = [len(t) + 1 for t, _, _ in pool]
    else:
        log.debug("no hypothesis reached EOS within %d steps", max_len)
        pool = [(toks, lp, False) for toks, lp in beam.hypotheses]
        lengths = [len(t) for t, _, _ in pool]
    ranked = sorted(
        (
            Candidate(toks, float(lp), float(lp) / length_penalty(n, alpha), done,
                      "".join(vocab.decode(toks)) if vocab else "")
            for (toks, lp, done), n in zip(pool, lengths)
        ),
        key=lambda c: (-c.score, c.tokens),
    )
    out: list[Candidate] = []
    seen: set = set()
    for cand in ranked:
        key = cand.smiles if vocab else cand.tokens
        if key in seen:
            continue
        seen.add(key)
        out.append(cand)
        if len(out) == width:
            break
    return out


def greedy_decode(
    model: Transformer, src: np.ndarray, enc_bias: np.ndarray | None, max_len: int
) -> list[list[int]]:
    """Batched argmax decoding; returns generated ids (no BOS/EOS) per row."""
    src = np.asarray(src, dtype=np.int64)
    bundle = AttentionBiasBundle(
        src_pad=src == PAD_ID,
        enc_self_bias=None if enc_bias is None else model.config.lambda_intra * enc_bias,
    )
    banned = np.array(NEVER_GENERATED)
    with T.no_grad():
        memory = model.encode(src, bundle)
    n = src.shape[0]
    prefix = np.full((n, 1), BOS_ID, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    for _ in range(max_len):
        logits = model.decode_step(memory, prefix, bundle.src_pad)
        logits[:, banned] = -np.inf
        nxt = np.where(done, PAD_ID, logits.argmax(axis=-1))
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        done |= nxt == EOS_ID
        if done.all():
            break
    out = []
    for row in prefix[:, 1:]:
        ids = []
        for i in row:
            if i in (EOS_ID, PAD_ID):
                break
            ids.append(int(i))
        out.append(ids)
    return out


# --------------------------------------------------------------------------
# matching and metrics


def is_valid(smiles: str) -> bool:
    try:
        parse(smiles)
    except SmilesError:
        return False
    return True


def match(candidate: str, truth: str) -> bool:
    """Same multiset of molecules, up to isomorphism, ignoring atom maps."""
    truth_graph, _ = parse(truth)
    try:
        cand_graph, _ = parse(candidate)
    except SmilesError:
        return False
    return same_molecule_multiset(cand_graph, truth_graph, label=chem_label)


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    hits: dict[int, int]
    n_records: int
    n_candidates: int
    n_invalid: int

    def accuracy(self, k: int) -> float:
        return self.hits[k] / self.n_records if self.n_records else 0.0

    @property
    def invalid_rate(self) -> float:
        return self.n_invalid / self.n_candidates if self.n_candidates else 0.0

    def to_kv(self) -> dict[str, str]:
        kv = {"records": str(self.n_records)}
        for k in self.ks:
            kv[f"top{k}_hits"] = str(self.hits[k])
            kv[f"top{k}_acc"] = f"{self.accuracy(k):.6f}"
        kv["candidates"] = str(self.n_candidates)
        kv["invalid"] = str(self.n_invalid)
        kv["invalid_rate"] = f"{self.invalid_rate:.6f}"
        return kv

    def to_text(self) -> str:
        lines = [f"{'K':>6}  {'hits':>6}  {'accuracy':>9}"]
        for k in self.ks:
            lines.append(f"{k:>6}  {self.hits[k]:>6}  {100 * self.accuracy(k):>8.2f}%")
        lines.append(f"records={self.n_records} invalid_rate={100 * self.invalid_rate:.2f}%")
        lines.append("")
        lines.extend(f"{k}={v}" for k, v in self.to_kv().items())
        return "\n".join(lines) + "\n"


def first_hit(candidates: Iterable, truth: str) -> tuple[int | None, int, int]:
    """Rank (0-based) of the first matching candidate, plus candidate/invalid counts."""
    seen: set[str] = set()
    rank = 0
    hit = None
    n_invalid = 0
    for cand in candidates:
        smiles = cand.smiles if isinstance(cand, Candidate) else cand
        if smiles in seen:
            continue
        seen.add(smiles)
        usable = (cand.finished if isinstance(cand, Candidate) else True) and is_valid(smiles)
        if not usable:
            n_invalid += 1
        elif hit is None and match(smiles, truth):
            hit = rank
        rank += 1
    return hit, rank, n_invalid


def evaluate(
    predictor: Callable[[str], Sequence], records: Sequence, ks: Sequence[int] = TOP_KS
) -> EvalReport:
    """Top-K accuracy of ``predictor`` over un-augmented ``records``."""
    if not records:
        raise EmptyTestSet("no records to evaluate")
    ks = tuple(sorted(ks))
    hits = {k: 0 for k in ks}
    n_cand = n_invalid = 0
    for rec in records:
        rank, count, invalid = first_hit(predictor(rec.product), rec.reactants)
        n_cand += count
        n_invalid += invalid
        for k in ks:
            if rank is not None and rank < k:
                hits[k] += 1
    return EvalReport(ks, hits, len(records), n_cand, n_invalid)


class ModelPredictor:
    """Callable product SMILES -> ranked beam candidates."""

    def __init__(self, model: Transformer, vocab: Vocab, width: int = 10,
                 max_len: int = 200, alpha: float = 0.6):
        self.model = model
        self.vocab = vocab
        self.width = width
        self.max_len = max_len
        self.alpha = alpha

    def __call__(self, product: str) -> list[Candidate]:
        src, bias = encode_product(product, self.vocab, self.model.config)
        return beam_search(self.model, src, bias, self.width, self.max_len, self.alpha, self.vocab)
