"""Turn reaction pairs into padded id arrays plus attention priors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from retrograph.model import AttentionBiasBundle, ModelConfig
from retrograph.priors import BiasMode, all_pairs_distance, cross_alignment, intra_bias
from retrograph.smiles import parse, strip_map_numbers
from retrograph.vocab import BOS_ID, EOS_ID, PAD_ID, Vocab


@dataclass(frozen=True)
class Example:
    src: np.ndarray
    tgt: np.ndarray
    intra: np.ndarray | None
    cross: np.ndarray | None


@dataclass
class Batch:
    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    bundle: AttentionBiasBundle

    def __len__(self) -> int:
        return self.src.shape[0]


def model_tokens(smiles: str) -> list[str]:
    """Token texts the network sees: atom-map classes removed."""
    _, seq = parse(smiles)
    return strip_map_numbers(seq).texts


def encode_product(smiles: str, vocab: Vocab, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray | None]:
    graph, seq = parse(smiles)
    ids = np.asarray(vocab.encode(strip_map_numbers(seq).texts), dtype=np.int64)
    if BiasMode(cfg.bias_mode) is BiasMode.OFF:
        return ids, None
    return ids, intra_bias(seq, all_pairs_distance(graph), cfg.intra_config()).b


def featurize(product: str, reactants: str, vocab: Vocab, cfg: ModelConfig) -> Example:
    src, intra = encode_product(product, vocab, cfg)
    p = parse(product)
    r = parse(reactants)
    tgt = np.asarray(vocab.encode(strip_map_numbers(r[1]).texts), dtype=np.int64)
    cross = cross_alignment(p, r).b
    return Example(src, tgt, intra, cross)


def decoder_cross_rows(cross: np.ndarray) -> np.ndarray:
    """Reorient a (Tx, Ty) alignment to decoder-input rows (Ty + 1, Tx).

    Decoder input t is BOS for t = 0 and target token t - 1 otherwise, so
    row t carries the alignment of the token already fed in, never of the
    token being predicted.
    """
    tx, ty = cross.shape
    rows = np.zeros((ty + 1, tx))
    rows[1:] = cross.T
    return rows


def pad_sources(examples: Sequence[Example], cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray | None]:
    """Padded source ids and the matching unscaled intra bias (None when off)."""
    tx = max(len(e.src) for e in examples)
    src = np.full((len(examples), tx), PAD_ID, dtype=np.int64)
    with_intra = BiasMode(cfg.bias_mode) is not BiasMode.OFF
    intra = np.zeros((len(examples), tx, tx)) if with_intra else None
    for i, e in enumerate(examples):
        src[i, : len(e.src)] = e.src
        if with_intra and e.intra is not None:
            intra[i, : len(e.src), : len(e.src)] = e.intra
    return src, intra


def collate(examples: Sequence[Example], cfg: ModelConfig, use_cross: bool = True) -> Batch:
    n = len(examples)
    src, intra = pad_sources(examples, cfg)
    tx = src.shape[1]
    ty = max(len(e.tgt) for e in examples) + 1
    tgt_in = np.full((n, ty), PAD_ID, dtype=np.int64)
    tgt_out = np.full((n, ty), PAD_ID, dtype=np.int64)
    cross = np.zeros((n, ty, tx)) if use_cross else None
    for i, e in enumerate(examples):
        ls, lt = len(e.src), len(e.tgt)
        tgt_in[i, 0] = BOS_ID
        tgt_in[i, 1 : lt + 1] = e.tgt
        tgt_out[i, :lt] = e.tgt
        tgt_out[i, lt] = EOS_ID
        if use_cross and e.cross is not None:
            cross[i, : lt + 1, :ls] = decoder_cross_rows(e.cross)
    bundle = AttentionBiasBundle(
        src_pad=src == PAD_ID,
        tgt_pad=tgt_in == PAD_ID,
        enc_self_bias=None if intra is None else cfg.lambda_intra * intra,
        cross_bias=None if cross is None else cfg.lambda_cross * cross,
    )
    return Batch(src, tgt_in, tgt_out, bundle)
