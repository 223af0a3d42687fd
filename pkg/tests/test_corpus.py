import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuselab import corpus as cp
from fuselab import domains as dom


@pytest.fixture(scope="module")
def specs():
    return dom.builtin_domain_specs(noise_sigma=0.3, frames_per_token=2,
                                    seed=17)


def test_tokenize_examples(vocab):
    ids = cp.tokenize("hi there", vocab)
    assert vocab.word_sep_id in ids
    assert cp.detokenize(ids, vocab) == "hi there"
    with pytest.raises(ValueError):
        cp.tokenize("xyz", vocab)  # letters outside the alphabet
    with pytest.raises(ValueError):
        cp.detokenize((vocab.blank_id,), vocab)


words = st.lists(
    st.text(alphabet=list(dom.ALPHABET), min_size=1, max_size=6),
    min_size=1, max_size=5)


@given(words)
@settings(max_examples=100, deadline=None)
def test_tokenize_roundtrip(ws):
    vocab = dom.make_vocab()
    text = " ".join(ws)
    assert cp.detokenize(cp.tokenize(text, vocab), vocab) == text


def test_all_builtin_vocab_words_tokenize(specs, vocab):
    for spec in specs.values():
        for word in spec.word_list:
            cp.tokenize(word, vocab)  # must not raise


def test_sample_sentence_deterministic(specs):
    a = [cp.sample_sentence(specs["call"], np.random.default_rng(3))
         for _ in range(5)]
    b = [cp.sample_sentence(specs["call"], np.random.default_rng(3))
         for _ in range(5)]
    assert a == b
    for s in a:
        assert s.strip() == s and "  " not in s


def test_generate_domain_deterministic(specs, vocab):
    c1 = cp.generate_domain(specs["search"], vocab, feat_dim=4, n_utts=20)
    c2 = cp.generate_domain(specs["search"], vocab, feat_dim=4, n_utts=20)
    assert [u.id for u in c1.utterances] == [u.id for u in c2.utterances]
    for u1, u2 in zip(c1.utterances, c2.utterances):
        assert u1.reference == u2.reference
        assert np.array_equal(u1.features, u2.features)
    assert c1.splits == c2.splits


def test_split_partition(specs, vocab):
    c = cp.generate_domain(specs["email"], vocab, feat_dim=4, n_utts=20)
    n = sum(len(c.split(s)) for s in ("train", "dev", "test"))
    assert n == 20
    assert len(c.split("train")) == 12  # 0.6 ratio


def test_feature_shape_contract(specs, vocab):
    spec = specs["call"]
    c = cp.generate_domain(spec, vocab, feat_dim=5, n_utts=4)
    for u in c.utterances:
        assert u.features.shape == (len(u.reference) * spec.frames_per_token, 5)


def test_zero_noise_features_identify_tokens(vocab):
    """With no noise, nearest-embedding classification of each frame must
    recover the reference token sequence exactly."""
    spec = dom.builtin_domain_specs(0.0, 2, seed=5)["keyboard"]
    c = cp.generate_domain(spec, vocab, feat_dim=6, n_utts=6)
    table = np.stack([cp.token_embedding(t, 6, spec.embedding_seed)
                      for t in range(vocab.size)])
    for u in c.utterances:
        for i, frame in enumerate(u.features):
            tok = u.reference[i // spec.frames_per_token]
            d = np.linalg.norm(table - frame, axis=1)
            assert int(np.argmin(d)) == tok


def test_domains_are_shifted(specs, vocab):
    """Word distributions differ across domains: the unigram KL between
    any in-domain pair is substantial, and the held-out domain uses words
    the in-domain text never produced."""
    texts = {
        name: cp.generate_domain(specs[name], vocab, 4, 40).texts("train",
                                                                  vocab)
        for name in dom.IN_DOMAIN + (dom.HELD_OUT,)
    }
    for a in dom.IN_DOMAIN:
        for b in dom.IN_DOMAIN:
            if a < b:
                assert cp.unigram_kl(texts[a], texts[b]) > 0.5, (a, b)
    in_words = {w for n in dom.IN_DOMAIN for t in texts[n] for w in t.split()}
    held_words = {w for t in texts[dom.HELD_OUT] for w in t.split()}
    assert len(held_words - in_words) > 0


def test_unigram_kl_properties():
    a = ["a b a", "b c"]
    assert cp.unigram_kl(a, a) == pytest.approx(0.0, abs=1e-12)
    assert cp.unigram_kl(a, ["c c c"]) > 0.0


def test_save_load_roundtrip(tmp_path, specs, vocab):
    c = cp.generate_domain(specs["common"], vocab, feat_dim=3, n_utts=8)
    cp.save_corpus(tmp_path / "common", c, vocab)
    back = cp.load_corpus(tmp_path / "common", vocab)
    assert [u.id for u in back.utterances] == [u.id for u in c.utterances]
    for u1, u2 in zip(c.utterances, back.utterances):
        assert u1.reference == u2.reference
        assert np.array_equal(u1.features, u2.features)
    assert back.splits == c.splits


def test_make_spec_validation():
    with pytest.raises(ValueError):
        cp.make_spec("x", {"S": [(1.0, ("S",))]})  # no terminals
    with pytest.raises(ValueError):
        cp.make_spec("x", {"S": [(1.0, ("hi",))]}, noise_sigma=-1.0)
