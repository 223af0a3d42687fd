"""Tiny neural transducer: encoder, predictor, joint network, lattice loss.

The model keeps the three-part transducer structure (acoustic encoder,
label-history predictor, joint network) at desk scale: a one-layer tanh
encoder over per-frame features, a one-layer tanh recurrent predictor,
and a single-hidden-layer joint ending in a log-softmax over the full
token inventory including blank.

The forward code is written against `autodiff`'s dispatching ops, so the
same functions run on plain numpy arrays (decode-time fast path) and on
graph tensors (training path).  The lattice loss gradient is assembled
from alpha/beta occupancies and then backpropagated through the network
graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .params import GradMap, ParamSet, load_container, save_container, zeros_like

TokenSeq = Tuple[int, ...]

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Vocab:
    """Output token inventory with a distinguished blank and word separator."""

    tokens: tuple
    blank_id: int
    word_sep_id: int

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token strings must be unique")
        if len(self.tokens) < 3:
            raise ValueError("vocab needs at least 3 tokens")
        n = len(self.tokens)
        if not (0 <= self.blank_id < n and 0 <= self.word_sep_id < n):
            raise ValueError("blank/word_sep ids out of range")
        if self.blank_id == self.word_sep_id:
            raise ValueError("blank and word separator must differ")

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.tokens.index(token)

    @classmethod
    def from_alphabet(cls, letters: Sequence[str]) -> "Vocab":
        tokens = ("<blank>",) + tuple(letters) + ("_",)
        return cls(tokens=tokens, blank_id=0, word_sep_id=len(tokens) - 1)


def check_label_seq(ys: Sequence[int], vocab: Vocab) -> TokenSeq:
    ys = tuple(int(y) for y in ys)
    for y in ys:
        if y == vocab.blank_id:
            raise ValueError("label sequence contains blank")
        if not (0 <= y < vocab.size):
            raise ValueError(f"token id {y} out of range")
    return ys


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # T x d
    reference: TokenSeq
    domain: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a T x d array with T >= 1")
        self.reference = tuple(int(y) for y in self.reference)


@dataclass(frozen=True)
class TransducerConfig:
    feat_dim: int
    hidden: int
    joint_hidden: int
    vocab_size: int
    # predictor state width; a narrow predictor keeps the internal LM weak
    # relative to the encoder (defaults to `hidden`)
    pred_hidden: int = 0

    def __post_init__(self):
        if self.pred_hidden <= 0:
            object.__setattr__(self, "pred_hidden", self.hidden)

    def as_dict(self):
        return {
            "feat_dim": self.feat_dim,
            "hidden": self.hidden,
            "joint_hidden": self.joint_hidden,
            "vocab_size": self.vocab_size,
            "pred_hidden": self.pred_hidden,
        }


@dataclass
class TransducerModel:
    config: TransducerConfig
    vocab: Vocab
    params: ParamSet

    def with_params(self, params: ParamSet) -> "TransducerModel":
        return TransducerModel(self.config, self.vocab, params)


def init_model(vocab: Vocab, feat_dim: int, hidden: int, joint_hidden: int,
               seed: int, pred_hidden: int = 0) -> TransducerModel:
    rng = np.random.default_rng(seed)
    cfg = TransducerConfig(feat_dim, hidden, joint_hidden, vocab.size,
                           pred_hidden)
    ph = cfg.pred_hidden

    def w(*shape):
        return rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)

    values = {
        "encoder.w": w(feat_dim, hidden),
        "encoder.b": np.zeros(hidden),
        "predictor.embed": w(vocab.size, ph),
        "predictor.w_in": w(ph, ph),
        "predictor.w_rec": w(ph, ph),
        "predictor.b": np.zeros(ph),
        "predictor.h0": rng.normal(0.0, 0.5, size=ph),
        "joint.w_enc": w(hidden, joint_hidden),
        "joint.w_pred": w(ph, joint_hidden),
        "joint.b": np.zeros(joint_hidden),
        "joint.w_out": w(joint_hidden, vocab.size),
        "joint.b_out": np.zeros(vocab.size),
    }
    roles = {}
    for name in values:
        roles[name] = name.split(".")[0] if name.split(".")[0] in (
            "encoder", "predictor", "joint") else "other"
    return TransducerModel(cfg, vocab, ParamSet(values, roles))


# -- forward pieces (generic over numpy / Tensor leaves) ------------------


def encode_ops(p, feats):
    return ad.tanh(feats @ p["encoder.w"] + p["encoder.b"])


def predict_ops(p, prefix: Sequence[int]):
    """Predictor states: row 0 is the start-of-sequence state, row u
    depends only on tokens 1..u."""
    g = ad.tanh(p["predictor.h0"])
    rows = [g]
    for y in prefix:
        x = ad.take_rows(p["predictor.embed"], int(y))
        g = ad.tanh(x @ p["predictor.w_in"] + g @ p["predictor.w_rec"]
                    + p["predictor.b"])
        rows.append(g)
    return ad.stack(rows, axis=0)


def joint_ops(p, f, g):
    """Single (f_t, g_u) pair -> log-distribution over the vocab."""
    h = ad.tanh(f @ p["joint.w_enc"] + g @ p["joint.w_pred"] + p["joint.b"])
    return ad.log_softmax(h @ p["joint.w_out"] + p["joint.b_out"], axis=-1)


def joint_table_ops(p, enc, g):
    """All (t, u) pairs at once -> (T, U+1, V) log-probability grid."""
    T = enc.shape[0]
    U1 = g.shape[0]
    J = p["joint.b"].shape[0]
    fe = ad.reshape(enc @ p["joint.w_enc"], (T, 1, J))
    ge = ad.reshape(g @ p["joint.w_pred"], (1, U1, J))
    h = ad.tanh(fe + ge + p["joint.b"])
    V = p["joint.b_out"].shape[0]
    logits = ad.reshape(ad.reshape(h, (T * U1, J)) @ p["joint.w_out"]
                        + p["joint.b_out"], (T, U1, V))
    return ad.log_softmax(logits, axis=-1)


def ilm_table_ops(p, g):
    """Joint output with the encoder contribution removed (zero vector).

    Rows are per-step log-distributions over the vocab where the blank
    slot carries the end-of-sequence probability.
    """
    h = ad.tanh(g @ p["joint.w_pred"] + p["joint.b"])
    return ad.log_softmax(h @ p["joint.w_out"] + p["joint.b_out"], axis=-1)


# -- public model surface -------------------------------------------------


def _np_leaves(model: TransducerModel):
    return {n: v for n, v in model.params.items()}


def encode(model: TransducerModel, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.config.feat_dim:
        raise ValueError(
            f"features must be T x {model.config.feat_dim}, got {features.shape}"
        )
    return encode_ops(_np_leaves(model), features)


def predict(model: TransducerModel, prefix: Sequence[int]) -> np.ndarray:
    prefix = check_label_seq(prefix, model.vocab)
    return predict_ops(_np_leaves(model), prefix)


def joint(model: TransducerModel, f, g) -> np.ndarray:
    return joint_ops(_np_leaves(model), np.asarray(f, dtype=np.float64),
                     np.asarray(g, dtype=np.float64))


# -- lattice --------------------------------------------------------------


@dataclass
class JointLattice:
    log_probs: np.ndarray  # T x (U+1) x V
    alpha: np.ndarray      # T x (U+1)
    beta: np.ndarray       # T x (U+1)
    log_posterior: float


def _lattice_alpha(blank: np.ndarray, emit: np.ndarray) -> tuple:
    """Forward variables over the (T, U+1) alignment grid.

    blank[t, u] advances t; emit[t, u] consumes label u+1.  Returns
    (alpha, log_posterior).
    """
    T, U1 = blank.shape
    U = U1 - 1
    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            terms = []
            if t > 0:
                terms.append(alpha[t - 1, u] + blank[t - 1, u])
            if u > 0:
                terms.append(alpha[t, u - 1] + emit[t, u - 1])
            alpha[t, u] = terms[0] if len(terms) == 1 else np.logaddexp(*terms)
    return alpha, float(alpha[T - 1, U] + blank[T - 1, U])


def _lattice_beta(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, U1 = blank.shape
    U = U1 - 1
    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = blank[T - 1, U]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            terms = []
            if t < T - 1:
                terms.append(blank[t, u] + beta[t + 1, u])
            if u < U:
                terms.append(emit[t, u] + beta[t, u + 1])
            if len(terms) == 1:
                beta[t, u] = terms[0]
            elif terms:
                beta[t, u] = np.logaddexp(*terms)
    return beta


def _blank_emit(log_probs, ys, blank_id):
    """Slice the (T, U+1, V) grid into blank and emit transition scores."""
    T, U1, _ = log_probs.shape
    blank = log_probs[:, :, blank_id]
    if U1 > 1:
        emit = log_probs[:, :-1, :][
            :, np.arange(U1 - 1), np.asarray(ys, dtype=np.intp)
        ]
    else:
        emit = np.zeros((T, 0))
    return blank, emit


def _occupancy_adjoint(blank, emit, alpha, beta, log_post, ys, blank_id, V):
    """d log_posterior / d log_probs via transition occupancies."""
    T, U1 = blank.shape
    U = U1 - 1
    occ = np.zeros((T, U1, V))
    # blank transitions (t, u) -> (t+1, u); termination blank at (T-1, U)
    for t in range(T):
        for u in range(U1):
            a = alpha[t, u]
            if a == NEG_INF:
                continue
            if t < T - 1:
                w = a + blank[t, u] + beta[t + 1, u] - log_post
                if w > -700:
                    occ[t, u, blank_id] += np.exp(w)
            elif u == U:
                w = a + blank[t, u] - log_post
                occ[t, u, blank_id] += np.exp(w)
            if u < U:
                w = a + emit[t, u] + beta[t, u + 1] - log_post
                if w > -700:
                    occ[t, u, ys[u]] += np.exp(w)
    return occ


def _lattice_from_table(log_probs, ys, blank_id):
    blank, emit = _blank_emit(log_probs, ys, blank_id)
    alpha, log_post = _lattice_alpha(blank, emit)
    beta = _lattice_beta(blank, emit)
    return JointLattice(log_probs, alpha, beta, log_post)


def transducer_loss(model: TransducerModel, utt: Utterance):
    """Negative log posterior of the reference, with parameter gradients.

    Returns (loss, grads, lattice).  The gradient w.r.t. the lattice
    log-probabilities comes from alpha/beta occupancies and is pushed
    through the network by reverse-mode differentiation.
    """
    ys = check_label_seq(utt.reference, model.vocab)
    leaves = {n: ad.Tensor(v, leaf_name=n) for n, v in model.params.items()}
    enc = encode_ops(leaves, utt.features)
    g = predict_ops(leaves, ys)
    table = joint_table_ops(leaves, enc, g)

    lattice = _lattice_from_table(table.value, ys, model.vocab.blank_id)
    occ = _occupancy_adjoint(
        *_blank_emit(table.value, ys, model.vocab.blank_id),
        lattice.alpha, lattice.beta, lattice.log_posterior,
        ys, model.vocab.blank_id, model.vocab.size,
    )
    leaf_grads = ad.backprop(table, seed=-occ)  # loss = -log posterior
    grads: GradMap = zeros_like(model.params)
    for tensor, adj in leaf_grads.items():
        if tensor.leaf_name is not None:
            grads[tensor.leaf_name] = adj
    return -lattice.log_posterior, grads, lattice


def seq_log_posterior_ops(p, feats, ys, blank_id: int):
    """Exact log P(Y | X): sum over all alignments, generic over backend.

    The alpha recursion is written with dispatching scalar ops so the
    same code serves the fast numpy path and the differentiable path.
    """
    enc = encode_ops(p, feats)
    g = predict_ops(p, ys)
    table = joint_table_ops(p, enc, g)
    T = feats.shape[0]
    U = len(ys)
    alpha = {(0, 0): 0.0}
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            terms = []
            if t > 0:
                terms.append(alpha[(t - 1, u)] + table[t - 1, u, blank_id])
            if u > 0:
                terms.append(alpha[(t, u - 1)] + table[t, u - 1, ys[u - 1]])
            alpha[(t, u)] = terms[0] if len(terms) == 1 else ad.logaddexp(*terms)
    return alpha[(T - 1, U)] + table[T - 1, U, blank_id]


def seq_log_posterior(model: TransducerModel, features, ys) -> float:
    """Forward-only exact sequence posterior (numpy fast path)."""
    ys = check_label_seq(ys, model.vocab)
    features = np.asarray(features, dtype=np.float64)
    if len(ys) > features.shape[0]:
        return NEG_INF  # more labels than frames: no alignment exists
    leaves = _np_leaves(model)
    enc = encode_ops(leaves, features)
    g = predict_ops(leaves, ys)
    table = joint_table_ops(leaves, enc, g)
    lattice = _lattice_from_table(table, ys, model.vocab.blank_id)
    return lattice.log_posterior


# -- internal LM ----------------------------------------------------------


def ilm_log_prob_ops(p, ys, blank_id: int):
    g = predict_ops(p, ys)
    table = ilm_table_ops(p, g)
    total = table[len(ys), blank_id]  # end-of-sequence via the blank slot
    for u, y in enumerate(ys):
        total = total + table[u, y]
    return total


def ilm_log_prob(model: TransducerModel, ys) -> float:
    """log P(Y) of the internal LM: encoder contribution zeroed out."""
    ys = check_label_seq(ys, model.vocab)
    return float(ilm_log_prob_ops(_np_leaves(model), ys, model.vocab.blank_id))


def ilm_step(model: TransducerModel, g_state) -> np.ndarray:
    """Next-step internal-LM log-distribution given a predictor state."""
    p = _np_leaves(model)
    h = np.tanh(np.asarray(g_state) @ p["joint.w_pred"] + p["joint.b"])
    return ad.log_softmax(h @ p["joint.w_out"] + p["joint.b_out"], axis=-1)


def ilm_loss(model: TransducerModel, ys):
    """Internal LM cross-entropy loss with gradients restricted to the
    non-encoder parameters (encoder entries are exactly zero)."""
    ys = check_label_seq(ys, model.vocab)
    leaves = {n: ad.Tensor(v, leaf_name=n) for n, v in model.params.items()}
    out = ilm_log_prob_ops(leaves, ys, model.vocab.blank_id)
    leaf_grads = ad.backprop(out, seed=-1.0)
    grads: GradMap = zeros_like(model.params)
    for tensor, adj in leaf_grads.items():
        if tensor.leaf_name is not None:
            grads[tensor.leaf_name] = adj
    return -float(out.value), grads


# -- persistence ----------------------------------------------------------


def save_model(path, model: TransducerModel, extra_meta=None) -> None:
    meta = {
        "kind": "transducer",
        "config": model.config.as_dict(),
        "vocab": {
            "tokens": list(model.vocab.tokens),
            "blank_id": model.vocab.blank_id,
            "word_sep_id": model.vocab.word_sep_id,
        },
    }
    if extra_meta:
        meta.update(extra_meta)
    save_container(
        path, [(n, model.params.role(n), v) for n, v in model.params.items()], meta
    )


def load_model(path) -> TransducerModel:
    entries, meta = load_container(path)
    if meta.get("kind") != "transducer":
        raise ValueError(f"{path}: not a transducer checkpoint")
    vocab = Vocab(
        tokens=tuple(meta["vocab"]["tokens"]),
        blank_id=int(meta["vocab"]["blank_id"]),
        word_sep_id=int(meta["vocab"]["word_sep_id"]),
    )
    cfg = TransducerConfig(**{k: int(v) for k, v in meta["config"].items()})
    params = ParamSet({n: a for n, _, a in entries}, {n: r for n, r, _ in entries})
    return TransducerModel(cfg, vocab, params)
