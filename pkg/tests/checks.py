"""Reusable numerical checks shared by unit and acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np

from retrograph import tensor as T
from retrograph.decoding import NEVER_GENERATED
from retrograph.features import Batch
from retrograph.model import AttentionBiasBundle, ModelConfig, Transformer
from retrograph.vocab import BOS_ID, EOS_ID, PAD_ID

from conftest import randomize


def random_batch(cfg: ModelConfig, rng: np.random.Generator, b=2, tx=5, ty=4, with_bias=True) -> Batch:
    """Padded random batch whose rows have different lengths."""
    lo = len(NEVER_GENERATED) + 1
    src = rng.integers(lo, cfg.vocab_size, size=(b, tx))
    tgt = rng.integers(lo, cfg.vocab_size, size=(b, ty))
    src[1:, tx - 1] = PAD_ID
    tgt[1:, ty - 1] = PAD_ID
    tgt_in = np.concatenate([np.full((b, 1), BOS_ID), tgt], axis=1)
    tgt_out = np.concatenate([tgt, np.full((b, 1), PAD_ID)], axis=1)
    for i in range(b):
        n = int((tgt[i] != PAD_ID).sum())
        tgt_out[i, n] = EOS_ID
    intra = cross = None
    if with_bias:
        intra = cfg.lambda_intra * rng.uniform(0, 1, size=(b, tx, tx))
        cross = cfg.lambda_cross * (rng.uniform(size=(b, ty + 1, tx)) < 0.3)
    bundle = AttentionBiasBundle(src == PAD_ID, tgt_in == PAD_ID, intra, cross)
    return Batch(src, tgt_in, tgt_out, bundle)


def gradient_check(model: Transformer, batch: Batch, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error over every parameter entry, analytic vs central differences."""
    model.zero_grad()
    model.loss(batch).backward()
    worst = 0.0
    for p in model.params.values():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with T.no_grad():
                flat[i] = orig + h
                up = model.loss(batch).item()
                flat[i] = orig - h
                down = model.loss(batch).item()
            flat[i] = orig
            num = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst


def vanilla_twins(vocab_size: int, seed: int, **kw) -> tuple[Transformer, Transformer]:
    """A biased model with lambdas 0 and zero relative embeddings, plus a bias-free build sharing its weights."""
    base = dict(vocab_size=vocab_size, layers_enc=2, layers_dec=2, heads=2, d_model=8, d_ff=16, dropout=0.0)
    base.update(kw)
    biased = randomize(Transformer(ModelConfig(**base, lambda_intra=0.0, lambda_cross=0.0), seed), seed)
    for name, p in biased.params.items():
        if name.endswith(".rel"):
            p.data = np.zeros_like(p.data)
    plain = Transformer(ModelConfig(**base, bias_mode="off", relative_positions=False), seed + 1)
    for name in plain.params:
        plain.params[name].data = biased.params[name].data.copy()
    return biased, plain


def vanilla_outputs_equal(biased: Transformer, plain: Transformer, rng: np.random.Generator) -> bool:
    raw = random_batch(biased.config, rng, b=3, tx=int(rng.integers(2, 8)), ty=int(rng.integers(2, 6)))
    # what the lambda-scaled priors would carry with lambda = 0
    bundle = AttentionBiasBundle(
        raw.bundle.src_pad, raw.bundle.tgt_pad,
        biased.config.lambda_intra * rng.uniform(0, 1, raw.bundle.enc_self_bias.shape),
        biased.config.lambda_cross * raw.bundle.cross_bias,
    )
    bare = AttentionBiasBundle(raw.bundle.src_pad, raw.bundle.tgt_pad)
    with T.no_grad():
        m1 = biased.encode(raw.src, bundle)
        m2 = plain.encode(raw.src, bare)
        d1 = biased.decode(m1, raw.tgt_in, bundle)
        d2 = plain.decode(m2, raw.tgt_in, bare)
    return np.array_equal(m1.data, m2.data) and np.array_equal(d1.data, d2.data)


def causality_trial(model: Transformer, rng: np.random.Generator) -> bool:
    """Logits for position t must not move when tokens after t are changed."""
    cfg = model.config
    tx, ty = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    src = rng.integers(4, cfg.vocab_size, size=(1, tx))
    with T.no_grad():
        memory = model.encode(src, AttentionBiasBundle(src == PAD_ID))
    seq = np.concatenate([[BOS_ID], rng.integers(4, cfg.vocab_size, size=ty)])[None, :]
    t = int(rng.integers(1, ty + 1))
    before = model.decode_step(memory, seq[:, :t], src == PAD_ID)
    other = seq.copy()
    other[0, t:] = rng.integers(4, cfg.vocab_size, size=ty + 1 - t)
    full1 = model.decode(memory, seq, AttentionBiasBundle(src == PAD_ID))
    full2 = model.decode(memory, other, AttentionBiasBundle(src == PAD_ID))
    return (np.array_equal(full1.data[:, : t], full2.data[:, : t])
            and np.array_equal(before, model.decode_step(memory, other[:, :t], src == PAD_ID)))


def brute_force_ranking(model: Transformer, src: np.ndarray, max_len: int):
    """Every finished sequence of at most ``max_len`` generated tokens, by teacher-forced log-prob."""
    generable = [v for v in range(model.config.vocab_size) if v not in NEVER_GENERATED and v != EOS_ID]
    src = np.asarray(src)[None, :]
    bundle = AttentionBiasBundle(src == PAD_ID)
    with T.no_grad():
        memory = model.encode(src, bundle)
    out = []
    for n in range(max_len):
        for body in itertools.product(generable, repeat=n):
            seq = np.array([[BOS_ID, *body]])
            logits = model.decode(memory, seq, bundle).data[0]
            logp = logits - logits.max(axis=-1, keepdims=True)
            logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
            targets = [*body, EOS_ID]
            out.append((tuple(body), float(sum(logp[i, tok] for i, tok in enumerate(targets)))))
    out.sort(key=lambda e: (-e[1], e[0]))
    return out
