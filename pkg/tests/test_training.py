import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from retrograph import tensor as T
from retrograph.features import featurize, model_tokens
from retrograph.model import load_checkpoint
from retrograph.training import (
    Adam,
    EmptyDataset,
    TrainConfig,
    exact_match_accuracy,
    make_batches,
    noam_lr,
    train,
)
from retrograph.vocab import Vocab

from conftest import tiny_config


def small_problem(records, n=6):
    pairs = [(r.product, r.reactants) for r in records[:n]]
    vocab = Vocab.build(model_tokens(s) for pair in pairs for s in pair)
    cfg = tiny_config(vocab_size=len(vocab), d_model=16, heads=2, d_ff=32)
    return vocab, cfg, [featurize(p, r, vocab, cfg) for p, r in pairs]


def test_noam_peak_at_warmup():
    lrs = [noam_lr(s, 2.0, 256, 4000) for s in range(1, 12000, 50)]
    peak = int(np.argmax(lrs)) * 50 + 1
    assert abs(peak - 4000) <= 50
    assert noam_lr(4000, 2.0, 256, 4000) == pytest.approx(2.0 * 256**-0.5 * 4000**-0.5)
    assert noam_lr(0, 1.0, 16, 10) == noam_lr(1, 1.0, 16, 10)


def test_adam_minimizes_quadratic():
    x = T.Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], 0.9, 0.998, 1e-9)
    for _ in range(500):
        x.grad = None
        T.backward(T.sum_all(T.mul(x, x)))
        opt.step(0.05)
    assert np.abs(x.data).max() < 1e-2


def test_adam_first_step_size():
    x = T.Tensor(np.array([1.0]), requires_grad=True)
    x.grad = np.array([123.0])
    Adam([x]).step(0.1)
    assert x.data[0] == pytest.approx(0.9)


@given(st.lists(st.tuples(st.integers(1, 30), st.integers(1, 30)), min_size=1, max_size=40),
       st.integers(31, 400), st.integers(0, 5))
def test_batches_cover_everything_within_budget(lengths, budget, seed):
    from retrograph.features import Example
    examples = [Example(np.ones(a, dtype=np.int64), np.ones(b, dtype=np.int64), None, None) for a, b in lengths]
    batches = make_batches(examples, budget, random.Random(seed))
    assert sorted(i for b in batches for i in b) == list(range(len(examples)))
    for b in batches:
        width = max(max(len(examples[i].src), len(examples[i].tgt) + 1) for i in b)
        assert len(b) == 1 or width * len(b) <= budget


def test_train_writes_outputs_and_is_reproducible(tmp_path, toy_records):
    vocab, cfg, ex = small_problem(toy_records)
    tcfg = TrainConfig(warmup_steps=20, validate_every=5, max_steps=10, batch_tokens=200, seed=3, max_decode_len=30)
    cfg_drop = tiny_config(vocab_size=len(vocab), d_model=16, heads=2, d_ff=32, dropout=0.2)
    r1 = train(tcfg, cfg_drop, ex, ex[:2], tmp_path / "a", vocab)
    r2 = train(tcfg, cfg_drop, ex, ex[:2], tmp_path / "b", vocab)
    assert r1.state.train_losses == r2.state.train_losses
    assert (tmp_path / "a" / "best.ckpt").read_bytes() == (tmp_path / "b" / "best.ckpt").read_bytes()
    rows = (tmp_path / "a" / "metrics.tsv").read_text().splitlines()
    assert rows[0] == "step\ttrain_loss\tvalid_loss\tvalid_acc"
    assert [int(r.split("\t")[0]) for r in rows[1:]] == [5, 10]
    model, tokens = load_checkpoint(r1.checkpoint)
    assert tokens == vocab.tokens and model.config == cfg_drop


def test_loss_decreases(tmp_path, toy_records):
    vocab, cfg, ex = small_problem(toy_records)
    tcfg = TrainConfig(warmup_steps=30, validate_every=60, max_steps=60, batch_tokens=4096)
    result = train(tcfg, cfg, ex, ex, tmp_path, vocab)
    losses = result.state.train_losses
    assert np.mean(losses[-5:]) < 0.5 * np.mean(losses[:5])


def test_patience_stops_but_never_early(tmp_path, toy_records):
    vocab, cfg, ex = small_problem(toy_records, 3)
    # lr so small nothing improves after the first validation
    tcfg = TrainConfig(schedule_factor=1e-12, warmup_steps=1, validate_every=1, patience=3, max_steps=50,
                       max_decode_len=5)
    result = train(tcfg, cfg, ex, ex, tmp_path, vocab)
    assert len(result.state.history) >= tcfg.patience
    assert result.stopped_early or result.state.step == tcfg.max_steps


def test_target_accuracy_stops(tmp_path, toy_records):
    vocab, cfg, ex = small_problem(toy_records, 2)
    tcfg = TrainConfig(validate_every=1, max_steps=20, target_accuracy=0.0, max_decode_len=5)
    result = train(tcfg, cfg, ex, ex, tmp_path, vocab)
    assert result.state.step == 1 and not result.stopped_early


def test_empty_dataset(tmp_path, toy_records):
    vocab, cfg, _ = small_problem(toy_records, 1)
    with pytest.raises(EmptyDataset):
        train(TrainConfig(), cfg, [], [], tmp_path, vocab)


def test_exact_match_on_empty():
    assert exact_match_accuracy(None, [], 10) == 0.0


@pytest.mark.parametrize("kw", [dict(warmup_steps=0), dict(label_smoothing=1.0), dict(patience=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_noam_is_finite_everywhere():
    assert all(math.isfinite(noam_lr(s, 2.0, 8, 1)) for s in range(0, 100))


# -- worked examples -----------------------------------------------------------

def test_untrained_loss_near_uniform():
    from checks import random_batch
    from retrograph.model import Transformer
    cfg = tiny_config()
    batch = random_batch(cfg, np.random.default_rng(0), b=4, tx=6, ty=5)
    assert abs(Transformer(cfg, 0).loss(batch).item() - math.log(20)) < 0.3


def test_confident_logits_loss():
    onehot = T.Tensor(np.array([[[0.0, 60.0, 0.0]]]))
    assert T.cross_entropy(onehot, np.array([[1]])).item() < 1e-20
    eps = 0.1
    smoothed = T.cross_entropy(onehot, np.array([[1]]), label_smoothing=eps).item()
    # q = (eps/3, 1 - 2eps/3, eps/3) against log p = (-60, ~0, -60)
    assert smoothed == pytest.approx(2 * eps / 3 * 60, rel=1e-9)
    assert smoothed > 0


def test_identical_curves_without_dropout(tmp_path, toy_records):
    vocab, cfg, ex = small_problem(toy_records, 4)
    tcfg = TrainConfig(warmup_steps=10, validate_every=8, max_steps=8, batch_tokens=100, seed=2, max_decode_len=10)
    a = train(tcfg, cfg, ex, ex, tmp_path / "a", vocab).state.train_losses
    b = train(tcfg, cfg, ex, ex, tmp_path / "b", vocab).state.train_losses
    assert a == b
