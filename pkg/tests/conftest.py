from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from retrograph.corpus import toy_corpus
from retrograph.model import ModelConfig, Transformer

settings.register_profile("ci", deadline=None, max_examples=60)
settings.load_profile("ci")

DATA = Path(__file__).parent / "data"


def tiny_config(vocab_size=20, **kw) -> ModelConfig:
    base = dict(vocab_size=vocab_size, layers_enc=2, layers_dec=2, heads=2, d_model=8, d_ff=16,
                dropout=0.0, max_relative_distance=2)
    base.update(kw)
    return ModelConfig(**base)


def randomize(model: Transformer, seed: int, scale: float = 0.3) -> Transformer:
    """Perturb every parameter so norms and biases are not at their init values."""
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.data = p.data + scale * rng.standard_normal(p.data.shape)
    return model


@pytest.fixture(scope="session")
def toy_records():
    return toy_corpus(32, 0)


@pytest.fixture(scope="session")
def corpus_strings():
    return [ln for ln in (DATA / "smiles_corpus.txt").read_text().splitlines() if ln]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
