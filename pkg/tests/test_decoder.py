import numpy as np
import pytest

from fuselab import transducer as td
from fuselab.decoder import (FusionConfig, beam_search, dump_nbest_tsv,
                             exhaustive_decode, fused_score)
from fuselab.extlm import lm_log_prob, train_ngram

from conftest import small_model


def make_lm(tiny_vocab, k=0.3):
    return train_ngram([(1, 3, 2), (1, 3, 1), (2,), (1, 2)], order=2, k=k,
                       vocab=tiny_vocab)


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(mode="deep")
    with pytest.raises(ValueError):
        FusionConfig(lambda_t=-0.1)
    with pytest.raises(ValueError):
        FusionConfig(beam=2, nbest=3)
    with pytest.raises(ValueError):
        FusionConfig(max_symbols_per_frame=0)


def test_fused_score_arithmetic():
    e2e, lm, ilm = -1.0, -2.0, -3.0
    assert fused_score(e2e, lm, ilm, FusionConfig(mode="none")) == -1.0
    assert fused_score(e2e, lm, ilm,
                       FusionConfig(mode="shallow", lambda_t=0.5)) == -2.0
    cfg = FusionConfig(mode="ilme", lambda_t=0.25, lambda_s=0.05)
    assert fused_score(e2e, lm, ilm, cfg) == pytest.approx(-1.35)


def test_zero_weight_fusion_reduces_to_plain(tiny_vocab):
    model = small_model(tiny_vocab, seed=3, feat_dim=2)
    feats = np.random.default_rng(0).normal(size=(3, 2))
    lm = make_lm(tiny_vocab)
    cfg0 = FusionConfig(mode="none", beam=4, nbest=3)
    cfg_sf = FusionConfig(mode="shallow", lambda_t=0.0, beam=4, nbest=3)
    nb0 = beam_search(model, None, feats, cfg0)
    nb_sf = beam_search(model, lm, feats, cfg_sf)
    assert nb0.token_seqs() == nb_sf.token_seqs()
    for a, b in zip(nb0.hypotheses, nb_sf.hypotheses):
        assert a.fused_score == pytest.approx(b.fused_score, abs=1e-12)
        assert a.log_p_e2e == pytest.approx(b.log_p_e2e, abs=1e-12)


def test_shallow_equals_ilme_with_zero_internal_weight(tiny_vocab):
    model = small_model(tiny_vocab, seed=4, feat_dim=2)
    feats = np.random.default_rng(1).normal(size=(3, 2))
    lm = make_lm(tiny_vocab)
    cfg_sf = FusionConfig(mode="shallow", lambda_t=0.3, beam=4, nbest=4)
    cfg_ilme = FusionConfig(mode="ilme", lambda_t=0.3, lambda_s=0.0,
                            beam=4, nbest=4)
    nb_sf = beam_search(model, lm, feats, cfg_sf)
    nb_ilme = beam_search(model, lm, feats, cfg_ilme)
    assert nb_sf.token_seqs() == nb_ilme.token_seqs()
    for a, b in zip(nb_sf.hypotheses, nb_ilme.hypotheses):
        assert a.fused_score == pytest.approx(b.fused_score, abs=1e-12)


def test_component_scores_are_exact(tiny_vocab):
    model = small_model(tiny_vocab, seed=5, feat_dim=2)
    feats = np.random.default_rng(2).normal(size=(3, 2))
    lm = make_lm(tiny_vocab)
    cfg = FusionConfig(mode="ilme", lambda_t=0.25, lambda_s=0.05,
                       beam=5, nbest=5)
    nb = beam_search(model, lm, feats, cfg)
    assert nb.hypotheses
    for h in nb.hypotheses:
        assert h.log_p_e2e == pytest.approx(
            td.seq_log_posterior(model, feats, h.tokens), abs=1e-9)
        assert h.log_p_extlm == pytest.approx(
            lm_log_prob(lm, h.tokens), abs=1e-9)
        assert h.log_p_ilm == pytest.approx(
            td.ilm_log_prob(model, h.tokens), abs=1e-9)
        assert h.fused_score == pytest.approx(
            fused_score(h.log_p_e2e, h.log_p_extlm, h.log_p_ilm, cfg),
            abs=1e-9)


def test_nbest_sorted_and_distinct(tiny_vocab):
    model = small_model(tiny_vocab, seed=6, feat_dim=2)
    feats = np.random.default_rng(3).normal(size=(4, 2))
    cfg = FusionConfig(mode="none", beam=6, nbest=6)
    nb = beam_search(model, None, feats, cfg)
    scores = [h.fused_score for h in nb.hypotheses]
    assert scores == sorted(scores, reverse=True)
    assert len(set(nb.token_seqs())) == len(nb.hypotheses)


@pytest.mark.parametrize("mode,lt,ls", [
    ("none", 0.0, 0.0),
    ("shallow", 0.25, 0.0),
    ("ilme", 0.25, 0.05),
    ("ilme", 1.0, 0.2),
])
def test_saturated_beam_matches_exhaustive_oracle(tiny_vocab, mode, lt, ls):
    for seed in range(4):
        model = small_model(tiny_vocab, seed=10 + seed, feat_dim=2)
        feats = np.random.default_rng(seed).normal(size=(3, 2))
        lm = make_lm(tiny_vocab) if mode != "none" else None
        kwargs = dict(mode=mode, beam=60, nbest=3, max_symbols_per_frame=3)
        if mode != "none":
            kwargs["lambda_t"] = lt
        if mode == "ilme":
            kwargs["lambda_s"] = ls
        cfg = FusionConfig(**kwargs)
        got = beam_search(model, lm, feats, cfg)
        want = exhaustive_decode(model, lm, feats, cfg)
        assert got.top().tokens == want.top().tokens
        assert got.top().fused_score == pytest.approx(
            want.top().fused_score, abs=1e-9)


def test_huge_lm_weight_dominates(tiny_vocab):
    """With an overwhelming external-LM weight the decoder's winner must
    be the LM-preferred candidate among everything the oracle scores."""
    model = small_model(tiny_vocab, seed=9, feat_dim=2)
    feats = np.random.default_rng(5).normal(size=(3, 2))
    lm = make_lm(tiny_vocab)
    cfg = FusionConfig(mode="shallow", lambda_t=50.0, beam=60, nbest=1)
    want = exhaustive_decode(model, lm, feats, cfg)
    got = beam_search(model, lm, feats, cfg)
    assert got.top().tokens == want.top().tokens
    others = [h for h in exhaustive_decode(
        model, lm, feats, FusionConfig(mode="shallow", lambda_t=50.0,
                                       beam=60, nbest=5)).hypotheses]
    best_lm = max(h.log_p_extlm for h in others)
    assert got.top().log_p_extlm == pytest.approx(best_lm, abs=1e-9)


def test_fusion_requires_lm(tiny_vocab):
    model = small_model(tiny_vocab, seed=1, feat_dim=2)
    feats = np.zeros((2, 2))
    with pytest.raises(ValueError):
        beam_search(model, None, feats,
                    FusionConfig(mode="shallow", lambda_t=0.25))


def test_exhaustive_guards_instance_size(tiny_vocab):
    model = small_model(tiny_vocab, seed=1, feat_dim=2)
    with pytest.raises(ValueError):
        exhaustive_decode(model, None, np.zeros((5, 2)),
                          FusionConfig(mode="none"))


def test_dump_nbest_tsv(tiny_vocab, tmp_path):
    from fuselab.corpus import detokenize
    model = small_model(tiny_vocab, seed=2, feat_dim=2)
    feats = np.random.default_rng(6).normal(size=(2, 2))
    nb = beam_search(model, None, feats, FusionConfig(mode="none", beam=3,
                                                      nbest=3), utt_id="u1")
    path = tmp_path / "nbest.tsv"
    dump_nbest_tsv(path, [nb], tiny_vocab, detokenize)
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["utterance_id", "rank", "text",
                                    "log_p_e2e", "log_p_extlm", "log_p_ilm",
                                    "fused_score"]
    assert len(lines) == 1 + len(nb.hypotheses)
    assert lines[1].startswith("u1\t1\t")
