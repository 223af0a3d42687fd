"""Transducer beam search with pluggable log-linear LM fusion.

Search is frame-synchronous with a cap on label emissions per frame.
In-beam pruning uses running path scores; the component scores reported
on the returned hypotheses are recomputed exactly (all-alignments E2E
posterior, full external-LM and internal-LM sequence scores), so
downstream loss code sees exact values.  `exhaustive_decode` is the
brute-force oracle for small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import transducer as td
from .extlm import NGramLM, lm_log_prob, lm_step
from .transducer import TokenSeq, TransducerModel, Utterance

MODES = ("none", "shallow", "ilme")


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "none"
    lambda_t: float = 0.25
    lambda_s: float = 0.05
    beam: int = 5
    nbest: int = 5
    max_symbols_per_frame: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.lambda_t < 0 or self.lambda_s < 0:
            raise ValueError("fusion weights must be non-negative")
        if self.beam < 1 or self.nbest < 1 or self.nbest > self.beam:
            raise ValueError("need 1 <= nbest <= beam")
        if self.max_symbols_per_frame < 1:
            raise ValueError("max_symbols_per_frame must be >= 1")


@dataclass
class Hypothesis:
    tokens: TokenSeq
    log_p_e2e: float
    log_p_extlm: float
    log_p_ilm: float
    fused_score: float


@dataclass
class NBestList:
    utterance_id: str
    hypotheses: List[Hypothesis]

    def top(self) -> Hypothesis:
        return self.hypotheses[0]

    def token_seqs(self) -> List[TokenSeq]:
        return [h.tokens for h in self.hypotheses]


def fused_score(log_p_e2e: float, log_p_extlm: float, log_p_ilm: float,
                config: FusionConfig) -> float:
    """Log-linear combination of the three score components per mode."""
    s = log_p_e2e
    if config.mode in ("shallow", "ilme"):
        s += config.lambda_t * log_p_extlm
    if config.mode == "ilme":
        s -= config.lambda_s * log_p_ilm
    return s


class _Beam:
    """One live search prefix: tokens plus cached stepwise scores."""

    __slots__ = ("tokens", "log_e2e", "lm_cum", "ilm_cum", "g_state")

    def __init__(self, tokens, log_e2e, lm_cum, ilm_cum, g_state):
        self.tokens = tokens
        self.log_e2e = log_e2e
        self.lm_cum = lm_cum
        self.ilm_cum = ilm_cum
        self.g_state = g_state

    def running_score(self, config: FusionConfig) -> float:
        return fused_score(self.log_e2e, self.lm_cum, self.ilm_cum, config)


def _finalize(model: TransducerModel, extlm: Optional[NGramLM], features,
              candidates: Sequence[TokenSeq], config: FusionConfig,
              utt_id: str) -> NBestList:
    """Exact component scoring, sorting, and N-best truncation."""
    hyps = []
    for tokens in candidates:
        e2e = td.seq_log_posterior(model, features, tokens)
        if e2e == td.NEG_INF:
            continue
        lm = lm_log_prob(extlm, tokens) if extlm is not None else 0.0
        ilm = td.ilm_log_prob(model, tokens)
        hyps.append(Hypothesis(tokens, e2e, lm, ilm,
                               fused_score(e2e, lm, ilm, config)))
    hyps.sort(key=lambda h: (-h.fused_score, h.tokens))
    return NBestList(utt_id, hyps[:config.nbest])


def beam_search(model: TransducerModel, extlm: Optional[NGramLM], features,
                config: FusionConfig, utt_id: str = "") -> NBestList:
    features = np.asarray(features, dtype=np.float64)
    if config.mode in ("shallow", "ilme") and extlm is None:
        raise ValueError(f"mode {config.mode!r} requires an external LM")
    enc = td.encode(model, features)
    p = {n: v for n, v in model.params.items()}
    blank = model.vocab.blank_id
    g0 = np.tanh(p["predictor.h0"])
    init = _Beam((), 0.0, 0.0, 0.0, g0)
    frame_pool = {(): init}

    def advance_state(g_prev, y):
        x = p["predictor.embed"][y]
        return np.tanh(x @ p["predictor.w_in"] + g_prev @ p["predictor.w_rec"]
                       + p["predictor.b"])

    use_lm = config.mode in ("shallow", "ilme") and config.lambda_t > 0
    use_ilm = config.mode == "ilme" and config.lambda_s > 0

    for t in range(features.shape[0]):
        f_t = enc[t]
        live = sorted(frame_pool.values(),
                      key=lambda h: (-h.running_score(config), h.tokens))
        live = live[:config.beam]
        next_pool = {}

        def emit_blank(hyp, lp_blank):
            score = hyp.log_e2e + lp_blank
            existing = next_pool.get(hyp.tokens)
            if existing is None:
                next_pool[hyp.tokens] = _Beam(hyp.tokens, score, hyp.lm_cum,
                                              hyp.ilm_cum, hyp.g_state)
            else:
                # duplicate prefix: merge alignment paths
                existing.log_e2e = np.logaddexp(existing.log_e2e, score)

        for _ in range(config.max_symbols_per_frame):
            expansions = []
            for hyp in live:
                lp = td.joint(model, f_t, hyp.g_state)
                emit_blank(hyp, lp[blank])
                if len(hyp.tokens) >= features.shape[0]:
                    # longer sequences have no alignment (U > T): never
                    # propose candidates outside the model's support
                    continue
                lm_row = lm_step(extlm, hyp.tokens) if use_lm else None
                ilm_row = td.ilm_step(model, hyp.g_state) if use_ilm else None
                for y in range(model.vocab.size):
                    if y == blank:
                        continue
                    new = _Beam(
                        hyp.tokens + (y,),
                        hyp.log_e2e + lp[y],
                        hyp.lm_cum + (lm_row[y] if lm_row is not None else 0.0),
                        hyp.ilm_cum + (ilm_row[y] if ilm_row is not None else 0.0),
                        None,
                    )
                    new.g_state = advance_state(hyp.g_state, y)
                    expansions.append(new)
            expansions.sort(key=lambda h: (-h.running_score(config), h.tokens))
            live = expansions[:config.beam]
            if not live:
                break
        # cap reached: remaining label expansions must still take blank
        for hyp in live:
            lp = td.joint(model, f_t, hyp.g_state)
            emit_blank(hyp, lp[blank])
        pruned = sorted(next_pool.values(),
                        key=lambda h: (-h.running_score(config), h.tokens))
        frame_pool = {h.tokens: h for h in pruned[:config.beam]}

    if not frame_pool:
        raise RuntimeError("beam search ended with an empty beam")
    return _finalize(model, extlm, features, list(frame_pool), config, utt_id)


def exhaustive_decode(model: TransducerModel, extlm: Optional[NGramLM],
                      features, config: FusionConfig,
                      utt_id: str = "") -> NBestList:
    """Score every blank-free token sequence with U <= T exactly."""
    features = np.asarray(features, dtype=np.float64)
    T = features.shape[0]
    if model.vocab.size > 5 or T > 4:
        raise ValueError("instance too large for oracle")
    labels = [y for y in range(model.vocab.size) if y != model.vocab.blank_id]
    candidates = [()]
    for n in range(1, T + 1):
        candidates.extend(itertools.product(labels, repeat=n))
    nb = _finalize(model, extlm, features, candidates, config, utt_id)
    return nb


def dump_nbest_tsv(path, nbests: Sequence[NBestList], vocab, detokenize) -> None:
    """TSV dump: utterance_id, rank, text, score components, fused score."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("utterance_id\trank\ttext\tlog_p_e2e\tlog_p_extlm\t"
                 "log_p_ilm\tfused_score\n")
        for nb in nbests:
            for rank, h in enumerate(nb.hypotheses, start=1):
                fh.write(
                    f"{nb.utterance_id}\t{rank}\t{detokenize(h.tokens, vocab)}\t"
                    f"{h.log_p_e2e:.12g}\t{h.log_p_extlm:.12g}\t"
                    f"{h.log_p_ilm:.12g}\t{h.fused_score:.12g}\n"
                )
