"""Teacher-forced training with Adam, a warmup schedule and early stopping."""

from __future__ import annotations

import dataclasses
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from retrograph import tensor as T
from retrograph.decoding import greedy_decode
from retrograph.features import Example, collate, pad_sources
from retrograph.model import ModelConfig, Transformer, save_checkpoint
from retrograph.vocab import Vocab

log = logging.getLogger(__name__)


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class CheckpointWriteFailure(OSError):
    pass


@dataclass
class TrainConfig:
    batch_tokens: int = 4096
    schedule_factor: float = 2.0
    warmup_steps: int = 4000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.998
    adam_eps: float = 1e-9
    label_smoothing: float = 0.0
    validate_every: int = 1000
    patience: int = 40
    max_steps: int = 100_000
    seed: int = 0
    augment_factor: int = 1
    max_decode_len: int = 200
    target_accuracy: float | None = None

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.batch_tokens < 1 or self.validate_every < 1 or self.patience < 1:
            raise ValueError("batch_tokens, validate_every and patience must be positive")


def noam_lr(step: int, factor: float, d_model: int, warmup: int) -> float:
    step = max(step, 1)
    return factor * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


class Adam:
    def __init__(self, params: Sequence[T.Tensor], beta1=0.9, beta2=0.998, eps=1e-9):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    step: int = 0
    best_valid_loss: float = math.inf
    best_valid_acc: float = -1.0
    validations_since_improvement: int = 0
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    checkpoint: Path
    state: TrainState
    model: Transformer
    stopped_early: bool


def make_batches(examples: Sequence[Example], batch_tokens: int, rng: random.Random) -> list[list[int]]:
    """Length-bucketed batches whose padded size stays within ``batch_tokens``."""
    order = list(range(len(examples)))
    rng.shuffle(order)
    order.sort(key=lambda i: len(examples[i].src) + len(examples[i].tgt))
    batches: list[list[int]] = []
    cur: list[int] = []
    width = 0
    for i in order:
        w = max(len(examples[i].src), len(examples[i].tgt) + 1)
        if cur and max(width, w) * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur, width = [], 0
        cur.append(i)
        width = max(width, w)
    if cur:
        batches.append(cur)
    rng.shuffle(batches)
    return batches


def exact_match_accuracy(model: Transformer, examples: Sequence[Example], max_len: int,
                         batch_size: int = 64) -> float:
    if not examples:
        return 0.0
    hits = 0
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        src, intra = pad_sources(chunk, model.config)
        preds = greedy_decode(model, src, intra, max_len)
        hits += sum(list(e.tgt) == p for e, p in zip(chunk, preds))
    return hits / len(examples)


def evaluate_loss(model: Transformer, examples: Sequence[Example], batch_tokens: int,
                  label_smoothing: float = 0.0) -> float:
    """Token-weighted mean loss in eval mode (no dropout)."""
    total, count = 0.0, 0
    batches = make_batches(examples, batch_tokens, random.Random(0))
    with T.no_grad():
        for idx in batches:
            batch = collate([examples[i] for i in idx], model.config)
            n = int((batch.tgt_out != 0).sum())
            total += model.loss(batch, label_smoothing).item() * n
            count += n
    return total / max(count, 1)


def train(
    config: TrainConfig,
    model_config: ModelConfig,
    train_examples: Sequence[Example],
    valid_examples: Sequence[Example],
    out_dir,
    vocab: Vocab,
    log_fn: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run training; the best checkpoint by validation loss is written to ``out_dir``.

    Stops after ``patience`` validations in a row that improve neither
    validation loss nor exact-match accuracy, at ``max_steps``, or (when set)
    once validation accuracy reaches ``target_accuracy``.
    """
    if not train_examples:
        raise EmptyDataset("no training examples")
    valid_examples = list(valid_examples) or list(train_examples)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CheckpointWriteFailure(str(e)) from e
    ckpt = out_dir / "best.ckpt"
    metrics_path = out_dir / "metrics.tsv"
    metrics = open(metrics_path, "w", encoding="utf-8")
    metrics.write("step\ttrain_loss\tvalid_loss\tvalid_acc\n")

    model = Transformer(model_config, seed=config.seed)
    opt = Adam(model.parameters(), config.adam_beta1, config.adam_beta2, config.adam_eps)
    state = TrainState()
    rng = random.Random(config.seed)
    batches: list[list[int]] = []
    window: list[float] = []
    stopped_early = False
    t0 = time.time()

    try:
        while state.step < config.max_steps:
            if not batches:
                batches = make_batches(train_examples, config.batch_tokens, rng)
            idx = batches.pop()
            batch = collate([train_examples[i] for i in idx], model_config)
            model.zero_grad()
            loss = model.loss(batch, config.label_smoothing, training=True)
            if not math.isfinite(loss.item()):
                raise NonFiniteLoss(f"loss {loss.item()} at step {state.step + 1}")
            loss.backward()
            state.step += 1
            opt.step(noam_lr(state.step, config.schedule_factor, model_config.d_model, config.warmup_steps))
            state.train_losses.append(loss.item())
            window.append(loss.item())

            if state.step % config.validate_every == 0 or state.step == config.max_steps:
                v_loss = evaluate_loss(model, valid_examples, config.batch_tokens)
                v_acc = exact_match_accuracy(model, valid_examples, config.max_decode_len)
                tr_loss = float(np.mean(window))
                window = []
                state.history.append((state.step, tr_loss, v_loss, v_acc))
                metrics.write(f"{state.step}\t{tr_loss:.6f}\t{v_loss:.6f}\t{v_acc:.6f}\n")
                metrics.flush()
                if log_fn:
                    log_fn(f"step {state.step} train {tr_loss:.4f} valid {v_loss:.4f} "
                           f"acc {v_acc:.4f} ({time.time() - t0:.0f}s)")
                improved = False
                if v_loss < state.best_valid_loss:
                    state.best_valid_loss = v_loss
                    improved = True
                    try:
                        save_checkpoint(ckpt, model, vocab.tokens)
                    except OSError as e:
                        raise CheckpointWriteFailure(str(e)) from e
                if v_acc > state.best_valid_acc:
                    state.best_valid_acc = v_acc
                    improved = True
                state.validations_since_improvement = 0 if improved else state.validations_since_improvement + 1
                if state.validations_since_improvement >= config.patience:
                    stopped_early = True
                    break
                if config.target_accuracy is not None and v_acc >= config.target_accuracy:
                    break
    finally:
        metrics.close()
    if not ckpt.exists():
        save_checkpoint(ckpt, model, vocab.tokens)
    return TrainResult(ckpt, state, model, stopped_early)


def config_fields(cls) -> dict[str, str]:
    return {f.name: str(f.type) for f in dataclasses.fields(cls)}
