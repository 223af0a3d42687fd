"""Expected-word-error losses over N-best lists, with analytic gradients.

Covers the plain expected-WER objective and its two fusion variants
(external-LM interpolation, and interpolation minus a weighted internal
LM score).  Posteriors are softmax renormalizations of the fused
hypothesis scores over the N-best list; the gradient is the three-factor
chain: per-hypothesis coefficient `posterior * (errors - expected
errors)` times the per-hypothesis log-posterior gradient, summed over
hypotheses.  The discrete N-best selection is treated as constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import transducer as td
from .decoder import FusionConfig, NBestList
from .extlm import NGramLM
from .params import GradMap, ParamSet, grad_axpy, zeros_like
from .transducer import TokenSeq, TransducerModel, Utterance, Vocab


@dataclass
class NBestScoringContext:
    nbest: NBestList
    reference: TokenSeq
    config: FusionConfig
    vocab: Optional[Vocab] = None  # needed for word segmentation
    log_g: float = 0.0  # per-utterance acoustic-prior constant

    def __post_init__(self):
        if not self.nbest.hypotheses:
            raise ValueError("N-best list is empty")
        if not np.isfinite(self.log_g):
            raise ValueError("log_g must be finite")


@dataclass
class MwerResult:
    loss: float
    posteriors: List[float]
    errors_per_hyp: List[int]
    expected_errors: float
    grads: GradMap


def split_words(ys: Sequence[int], vocab: Vocab) -> List[tuple]:
    """Token sequence -> list of words (tuples of token ids)."""
    words, cur = [], []
    for y in ys:
        if y == vocab.word_sep_id:
            if cur:
                words.append(tuple(cur))
            cur = []
        else:
            cur.append(int(y))
    if cur:
        words.append(tuple(cur))
    return words


def word_errors(hyp: Sequence[int], ref: Sequence[int], vocab: Vocab) -> int:
    """Word-level Levenshtein distance (unit costs)."""
    a = split_words(hyp, vocab)
    b = split_words(ref, vocab)
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            sub = prev[j - 1] + (a[i - 1] != b[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[len(b)]


def hyp_scores(ctx: NBestScoringContext) -> np.ndarray:
    """Unnormalized log scores s_n of the hypotheses under the mode."""
    cfg = ctx.config
    s = []
    for h in ctx.nbest.hypotheses:
        v = h.log_p_e2e
        if cfg.mode in ("shallow", "ilme"):
            v += cfg.lambda_t * h.log_p_extlm
        if cfg.mode == "ilme":
            v = v - cfg.lambda_s * h.log_p_ilm + ctx.log_g
        s.append(v)
    return np.array(s)


def renorm_posteriors(ctx: NBestScoringContext) -> List[float]:
    """Softmax of the fused scores over the N-best list; sums to 1."""
    s = hyp_scores(ctx)
    return list(np.exp(s - ad.logsumexp(s)))


def mwer_loss(ctx: NBestScoringContext, model: Optional[TransducerModel] = None,
              features=None) -> MwerResult:
    """Expected word errors over the N-best; gradients via the analytic
    chain when (model, features) are supplied."""
    post = renorm_posteriors(ctx)
    vocab = _vocab_of(ctx, model)
    errs = [word_errors(h.tokens, ctx.reference, vocab)
            for h in ctx.nbest.hypotheses]
    expected = float(np.dot(post, errs))
    grads: GradMap = {}
    if model is not None:
        if features is None:
            raise ValueError("features are required for gradients")
        grads = mwer_grad_analytic(ctx, model, features,
                                   posteriors=post, errors=errs)
    return MwerResult(loss=expected, posteriors=post, errors_per_hyp=errs,
                      expected_errors=expected, grads=grads)


def _vocab_of(ctx, model):
    if ctx.vocab is not None:
        return ctx.vocab
    if model is not None:
        return model.vocab
    raise ValueError("a vocab (on the context or via the model) is required")


def mwer_grad_analytic(ctx: NBestScoringContext, model: TransducerModel,
                       features, posteriors=None, errors=None) -> GradMap:
    """Three-factor chain rule for the expected-error loss.

    coefficient c_n = posterior_n * (errors_n - expected_errors);
    per-hypothesis gradient of the fused log score = -d(lattice loss)/dθ
    plus, in ilme mode, +lambda_s * d(internal-LM loss)/dθ restricted to
    non-encoder parameters; total = sum_n c_n * per-hypothesis gradient.
    """
    if posteriors is None:
        posteriors = renorm_posteriors(ctx)
    if errors is None:
        errors = [word_errors(h.tokens, ctx.reference, model.vocab)
                  for h in ctx.nbest.hypotheses]
    rbar = float(np.dot(posteriors, errors))
    total: GradMap = zeros_like(model.params)
    cfg = ctx.config
    for h, p_n, r_n in zip(ctx.nbest.hypotheses, posteriors, errors):
        c_n = p_n * (r_n - rbar)
        if c_n == 0.0:
            continue
        utt = Utterance(id=ctx.nbest.utterance_id or "mwer",
                        features=features, reference=h.tokens)
        _, e2e_grads, _ = td.transducer_loss(model, utt)
        grad_axpy(total, -c_n, e2e_grads)  # d log P(Y|X)/dθ = -d loss/dθ
        if cfg.mode == "ilme" and cfg.lambda_s != 0.0:
            _, ilm_grads = td.ilm_loss(model, h.tokens)
            grad_axpy(total, c_n * cfg.lambda_s, ilm_grads)
    return total


def mwer_loss_graph(leaves, model: TransducerModel, features,
                    ctx: NBestScoringContext):
    """The fully composed loss as one differentiable expression.

    Used as the end-to-end reverse-mode oracle for the analytic gradient:
    posteriors flow through the lattice and internal-LM graphs.
    """
    cfg = ctx.config
    blank = model.vocab.blank_id
    errors = [word_errors(h.tokens, ctx.reference, model.vocab)
              for h in ctx.nbest.hypotheses]
    scores = []
    for h in ctx.nbest.hypotheses:
        s = td.seq_log_posterior_ops(leaves, np.asarray(features, dtype=np.float64),
                                     h.tokens, blank)
        if cfg.mode in ("shallow", "ilme"):
            s = s + cfg.lambda_t * h.log_p_extlm
        if cfg.mode == "ilme":
            ilm = td.ilm_log_prob_ops(leaves, h.tokens, blank)
            s = s - cfg.lambda_s * ilm + ctx.log_g
        scores.append(s)
    svec = ad.stack(scores)
    post = ad.softmax(svec, axis=-1)
    return ad.reduce_sum(post * np.array(errors, dtype=np.float64))


def mwer_training_step(model: TransducerModel, batch: Sequence[Utterance],
                       extlm: Optional[NGramLM], config: FusionConfig,
                       learning_rate: float, optimizer=None):
    """One MWER update: decode N-best per utterance with the current
    model, accumulate analytic gradients (mean over the batch), apply
    one optimizer step.  Returns (updated model, stats dict).
    """
    from .decoder import beam_search  # local import avoids a cycle at module load

    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    if not batch:
        raise ValueError("empty batch")
    total: GradMap = zeros_like(model.params)
    losses = []
    for utt in batch:
        nb = beam_search(model, extlm, utt.features, config, utt_id=utt.id)
        ctx = NBestScoringContext(nbest=nb, reference=utt.reference,
                                  config=config)
        res = mwer_loss(ctx, model, utt.features)
        grad_axpy(total, 1.0 / len(batch), res.grads)
        losses.append(res.loss)
    if optimizer is None:
        new_values = {n: model.params.value(n) - learning_rate * total[n]
                      for n in model.params.names()}
    else:
        new_values = optimizer.step(model.params, total, learning_rate)
    new_params = model.params.with_values(new_values)
    from .params import grad_norm
    stats = {
        "loss": float(np.mean(losses)),
        "expected_errors": float(np.mean(losses)),
        "grad_norm": grad_norm(total),
    }
    return model.with_params(new_params), stats
