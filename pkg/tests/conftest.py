import numpy as np
import pytest

from fuselab import domains
from fuselab import transducer as td


@pytest.fixture(scope="session")
def vocab():
    return domains.make_vocab()


@pytest.fixture
def tiny_vocab():
    # blank + two letters + separator
    return td.Vocab(tokens=("<blank>", "a", "b", "_"), blank_id=0, word_sep_id=3)


def small_model(vocab, seed=0, feat_dim=3, hidden=3, joint_hidden=3):
    return td.init_model(vocab, feat_dim, hidden, joint_hidden, seed=seed)


@pytest.fixture
def model(vocab):
    return small_model(vocab)


def random_utterance(vocab, rng, T, U, feat_dim=3):
    labels = [y for y in range(vocab.size) if y != vocab.blank_id]
    ys = tuple(int(rng.choice(labels)) for _ in range(U))
    feats = rng.normal(size=(T, feat_dim))
    return td.Utterance(id=f"t{T}u{U}", features=feats, reference=ys)
