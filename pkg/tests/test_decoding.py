import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from retrograph import tensor as T
from retrograph.decoding import (
    TOP_KS,
    Candidate,
    EmptyTestSet,
    EvalReport,
    beam_search,
    evaluate,
    first_hit,
    greedy_decode,
    is_valid,
    match,
)
from retrograph.model import Transformer
from retrograph.reactions import ReactionRecord
from retrograph.vocab import BOS_ID, EOS_ID, Vocab

from checks import brute_force_ranking
from conftest import randomize, tiny_config


class ScriptedModel:
    """Decoder whose next-token logits are a fixed function of the prefix."""

    def __init__(self, table, vocab_size):
        self.table = table
        self.config = tiny_config(vocab_size=vocab_size)

    def encode(self, src, bundle, training=False, vanilla=False):
        return T.Tensor(np.zeros((src.shape[0], src.shape[1], 8)))

    def decode_step(self, memory, prefix, src_pad, cross_bias=None):
        return np.stack([self.table(tuple(int(t) for t in row[1:])) for row in prefix])


def peaked(target, vocab_size, margin=20.0):
    def table(prefix):
        logits = np.zeros(vocab_size)
        nxt = target[len(prefix)] if len(prefix) < len(target) else EOS_ID
        logits[nxt] = margin
        return logits
    return ScriptedModel(table, vocab_size)


# -- match -------------------------------------------------------------------

@pytest.mark.parametrize("cand,truth,expected", [
    ("CCO.Br", "Br.CCO", True),
    ("OCC", "CCO", True),
    ("C(C", "CCO", False),
    ("[CH3:1][CH2:2][OH:3]", "CCO", True),
    ("[CH3][CH2][OH]", "OCC", True),
    ("CCN", "CCO", False),
    ("CCO", "CCO.CCO", False),
])
def test_match(cand, truth, expected):
    assert match(cand, truth) is expected


def test_invalid_candidate():
    assert not is_valid("C(C") and is_valid("CCO")


@given(st.sampled_from(["CCO", "c1ccccc1Br", "CC(=O)Cl", "NCC"]),
       st.sampled_from(["O", "Br", "CN(C)C"]), st.integers(0, 10))
def test_match_order_and_root_invariant(a, b, root):
    from retrograph.smiles import parse, write
    g, _ = parse(a)
    rerooted = write(g, root % len(g.atoms))
    assert match(f"{a}.{b}", f"{b}.{rerooted}")
    assert match(f"{b}.{rerooted}", f"{a}.{b}")


# -- evaluation --------------------------------------------------------------

def test_two_record_example():
    records = [ReactionRecord("CC", "CCO", "r1"), ReactionRecord("CC", "CCN", "r2")]
    ranked = {"r1": ["CCO", "C", "N", "O"], "r2": ["C", "N", "O", "CCN"]}
    it = iter(records)
    report = evaluate(lambda product: ranked[next(it).id], records)
    assert report.accuracy(1) == 0.5
    assert report.accuracy(3) == 0.5
    assert report.accuracy(5) == 1.0
    assert report.accuracy(10) == 1.0


def test_all_invalid():
    records = [ReactionRecord("CC", "CCO", "r1")]
    report = evaluate(lambda p: ["C(", "C1C", "[X"], records)
    assert all(report.accuracy(k) == 0 for k in TOP_KS)
    assert report.invalid_rate == 1.0


def test_oracle_model():
    records = [ReactionRecord("CC", "CCO", f"r{i}") for i in range(3)]
    assert evaluate(lambda p: ["OCC", "C"], records).accuracy(1) == 1.0


def test_unfinished_candidates_count_invalid():
    cands = [Candidate((5,), -1.0, -1.0, False, "CCO")]
    assert first_hit(cands, "CCO") == (None, 1, 1)


def test_duplicates_do_not_take_ranks():
    assert first_hit(["C", "C", "C", "CCO"], "CCO")[0] == 1


def test_empty_test_set():
    with pytest.raises(EmptyTestSet):
        evaluate(lambda p: [], [])


@given(st.lists(st.one_of(st.none(), st.integers(0, 12)), min_size=1, max_size=30))
def test_accuracy_monotone(ranks):
    pool = ["C", "N", "O", "S", "F", "Cl", "Br", "I", "CC", "CN", "CO", "CS"]
    records = [ReactionRecord("CC", "CCCCCC", str(i)) for i in range(len(ranks))]
    lists = {str(i): pool[:r] + ["CCCCCC"] if r is not None else pool for i, r in enumerate(ranks)}
    it = iter(records)
    report = evaluate(lambda p: lists[next(it).id], records)
    accs = [report.accuracy(k) for k in TOP_KS]
    assert accs == sorted(accs)
    assert all(0 <= a <= 1 for a in accs) and 0 <= report.invalid_rate <= 1


def test_report_text():
    report = EvalReport(TOP_KS, {1: 1, 3: 2, 5: 2, 10: 2}, 2, 10, 1)
    text = report.to_text()
    assert "top1_acc=0.500000" in text and "top5_acc=1.000000" in text and "invalid_rate=0.100000" in text
    assert text.splitlines()[0].split() == ["K", "hits", "accuracy"]


# -- beam search -------------------------------------------------------------

def test_peaked_model_top1_regardless_of_width():
    model = peaked([5, 6, 5], 8)
    for width in (1, 2, 5, 20):
        best = beam_search(model, np.array([5]), None, width, 10, alpha=0.6)[0]
        assert best.tokens == (5, 6, 5) and best.finished


def test_special_tokens_never_generated():
    def table(prefix):
        logits = np.zeros(7)
        logits[[0, BOS_ID, 3]] = 50.0  # PAD, BOS, UNK are most likely
        logits[EOS_ID] = 1.0 if len(prefix) >= 2 else -5.0
        return logits
    cands = beam_search(ScriptedModel(table, 7), np.array([5]), None, 4, 5, alpha=0.0)
    for c in cands:
        assert not set(c.tokens) & {0, BOS_ID, 3}


def test_no_eos_returns_unfinished():
    def table(prefix):
        logits = np.zeros(6)
        logits[EOS_ID] = -1e9
        return logits
    cands = beam_search(ScriptedModel(table, 6), np.array([4]), None, 2, 3)
    assert cands and not any(c.finished for c in cands)
    assert all(len(c.tokens) == 3 for c in cands)


def test_string_duplicates_removed():
    vocab = Vocab.build([["C", "CC"]])  # "C"+"C" and "CC" both spell CC
    c_id, cc_id = vocab.encode(["C", "CC"])

    def table(prefix):
        logits = np.full(6, -3.0)
        if prefix in ((), (c_id,)):
            logits[[c_id, cc_id]] = 0.0
        else:
            logits[EOS_ID] = 0.0
        return logits
    cands = beam_search(ScriptedModel(table, 6), np.array([4]), None, 10, 3, alpha=0.0, vocab=vocab)
    smiles = [c.smiles for c in cands]
    assert len(smiles) == len(set(smiles))
    assert [c.score for c in cands] == sorted((c.score for c in cands), reverse=True)


def test_width_one_is_greedy():
    cfg = tiny_config(vocab_size=9)
    for seed in range(5):
        model = randomize(Transformer(cfg, seed), seed, scale=1.0)
        src = np.array([4, 5, 6, 7])
        greedy = greedy_decode(model, src[None], None, 6)[0]
        best = beam_search(model, src, None, 1, 6, alpha=0.0)[0]
        assert list(best.tokens) == greedy


@pytest.mark.parametrize("seed", range(3))
def test_wide_beam_equals_enumeration(seed):
    model = randomize(Transformer(tiny_config(vocab_size=6), seed), seed, scale=1.0)
    src = np.array([4, 5, 4])
    oracle = brute_force_ranking(model, src, 3)
    cands = beam_search(model, src, None, 27, 3, alpha=0.0)
    assert [c.tokens for c in cands] == [o[0] for o in oracle]
    assert np.allclose([c.logprob for c in cands], [o[1] for o in oracle], atol=1e-10)


@settings(max_examples=200)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(0, 4))
def test_wider_beam_top1_not_worse(seed, width, extra):
    model = randomize(Transformer(tiny_config(vocab_size=7), seed), seed, scale=1.0)
    src = np.array([4, 5, 6])
    narrow = beam_search(model, src, None, width, 4, alpha=0.0)[0]
    assume(narrow.finished)
    wide = beam_search(model, src, None, width + extra, 4, alpha=0.0)[0]
    assert wide.score >= narrow.score - 1e-12
