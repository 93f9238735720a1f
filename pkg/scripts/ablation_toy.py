"""Compare attention-prior settings on the toy corpus.

Trains one small model per setting (no graph priors, hop-weight priors,
Gaussian priors, Gaussian without the cross-attention alignment) and prints
the best validation loss and exact-match accuracy of each.  Numbers on a
32-reaction corpus are noisy; this is a smoke-scale comparison only.
"""

import argparse
import tempfile

from retrograph.augment import augment_dataset
from retrograph.corpus import toy_corpus
from retrograph.features import featurize, model_tokens
from retrograph.model import ModelConfig
from retrograph.reactions import ratio_split
from retrograph.training import TrainConfig, train
from retrograph.vocab import Vocab

SETTINGS = {
    "vanilla": dict(bias_mode="off", relative_positions=False, lambda_cross=0.0),
    "hard": dict(bias_mode="hard"),
    "gaussian": dict(bias_mode="gaussian"),
    "gaussian-no-cross": dict(bias_mode="gaussian", lambda_cross=0.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--factor", type=int, default=5)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    records = toy_corpus(args.n, args.seed)
    tags = ratio_split([r.id for r in records], (80, 20, 0), args.seed)
    train_recs = [r for r in records if tags[r.id] == "train"]
    valid_recs = [r for r in records if tags[r.id] == "valid"]
    pairs = [(p.product_variant, p.reactants_variant) for p in augment_dataset(train_recs, args.factor, args.seed)]
    vocab = Vocab.build(model_tokens(s) for r in records for s in (r.product, r.reactants))
    tcfg = TrainConfig(warmup_steps=200, validate_every=100, max_steps=args.steps, max_decode_len=80,
                       seed=args.seed)

    print(f"{'setting':<20}{'valid loss':>12}{'valid acc':>12}")
    for name, overrides in SETTINGS.items():
        cfg = ModelConfig(vocab_size=len(vocab), layers_enc=2, layers_dec=2, heads=4, d_model=64, d_ff=128,
                          dropout=0.1, **overrides)
        train_ex = [featurize(p, r, vocab, cfg) for p, r in pairs]
        valid_ex = [featurize(r.product, r.reactants, vocab, cfg) for r in valid_recs]
        with tempfile.TemporaryDirectory() as out:
            state = train(tcfg, cfg, train_ex, valid_ex, out, vocab).state
        print(f"{name:<20}{state.best_valid_loss:>12.4f}{state.best_valid_acc:>12.2%}", flush=True)


if __name__ == "__main__":
    main()
