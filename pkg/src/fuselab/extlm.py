"""Add-k smoothed n-gram language model over the token vocabulary.

The LM scores blank-free token sequences; termination mass lives on an
explicit end-of-sequence event whose index is `vocab.size` in every step
distribution (the blank slot is log-zero and never scored).  Contexts are
padded with a begin-of-sequence marker.  Lookup backs off to the longest
observed suffix context; within an observed context the distribution is
add-k over tokens + EOS, so every step distribution is exactly
normalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .transducer import TokenSeq, Vocab, check_label_seq

BOS = -1  # context padding marker, never a real token id

FORMAT_TAG = "fuselab-ngram-lm v1"


@dataclass
class NGramLM:
    order: int
    vocab: Vocab
    log_probs: Dict[Tuple[int, ...], np.ndarray]  # context -> (V+1,) step dist
    backoff_weights: Dict[Tuple[int, ...], float]
    k: float
    domain_label: str = ""

    @property
    def eos_id(self) -> int:
        return self.vocab.size


def _events(ys: TokenSeq, order: int, eos: int):
    """Yield (context, event) pairs for one sequence, BOS-padded."""
    padded = (BOS,) * (order - 1) + tuple(ys)
    for i, y in enumerate(tuple(ys) + (eos,)):
        ctx = padded[i:i + order - 1]
        yield ctx, y


def train_ngram(corpus: Sequence[TokenSeq], order: int, k: float = 0.1,
                vocab: Vocab = None, domain_label: str = "") -> NGramLM:
    """Count-based training with add-k smoothing and suffix backoff."""
    if not corpus:
        raise ValueError("empty training corpus")
    if not (1 <= order <= 4):
        raise ValueError("order must be in 1..4")
    if k <= 0:
        raise ValueError("smoothing constant k must be positive")
    eos = vocab.size
    counts: Dict[Tuple[int, ...], np.ndarray] = {}
    for ys in corpus:
        ys = check_label_seq(ys, vocab)
        for ctx, y in _events(ys, order, eos):
            # every suffix of the context is also an observed backoff target
            for j in range(len(ctx) + 1):
                sub = ctx[j:]
                if sub not in counts:
                    counts[sub] = np.zeros(vocab.size + 1)
                counts[sub][y] += 1.0
    # add-k distribution per observed context; blank gets no mass
    n_events = vocab.size  # tokens minus blank, plus EOS
    log_probs = {}
    for ctx, c in counts.items():
        denom = c.sum() + k * n_events
        probs = (c + k) / denom
        probs[vocab.blank_id] = 0.0
        with np.errstate(divide="ignore"):
            lp = np.log(probs)
        log_probs[ctx] = lp
    backoff = {ctx: 0.0 for ctx in log_probs if len(ctx) < order - 1}
    return NGramLM(order=order, vocab=vocab, log_probs=log_probs,
                   backoff_weights=backoff, k=k, domain_label=domain_label)


def _context_of(lm: NGramLM, prefix: TokenSeq) -> Tuple[int, ...]:
    padded = (BOS,) * (lm.order - 1) + tuple(prefix)
    ctx = padded[len(padded) - (lm.order - 1):] if lm.order > 1 else ()
    while ctx not in lm.log_probs:
        ctx = ctx[1:]
    return ctx


def lm_step(lm: NGramLM, prefix: Sequence[int]) -> np.ndarray:
    """Next-step log-distribution over vocab + EOS (blank is log-zero)."""
    prefix = check_label_seq(prefix, lm.vocab)
    return lm.log_probs[_context_of(lm, prefix)]


def lm_log_prob(lm: NGramLM, ys: Sequence[int]) -> float:
    """Full-sequence log-probability including the EOS step."""
    ys = check_label_seq(ys, lm.vocab)
    total = 0.0
    for u, y in enumerate(ys):
        total += float(lm_step(lm, ys[:u])[y])
    total += float(lm_step(lm, ys)[lm.eos_id])
    return total


# -- persistence ----------------------------------------------------------


def save_lm(path, lm: NGramLM) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_TAG + "\n")
        fh.write(f"order\t{lm.order}\n")
        fh.write(f"smoothing\tadd-k\t{lm.k!r}\n")
        fh.write(f"domain\t{lm.domain_label}\n")
        fh.write("vocab\t" + "\t".join(lm.vocab.tokens) + "\n")
        fh.write(f"blank_id\t{lm.vocab.blank_id}\n")
        fh.write(f"word_sep_id\t{lm.vocab.word_sep_id}\n")
        fh.write("records\n")
        for ctx in sorted(lm.log_probs):
            ctx_str = ",".join(str(i) for i in ctx) or "-"
            lp = lm.log_probs[ctx]
            for tok in range(lm.vocab.size + 1):
                if tok == lm.vocab.blank_id:
                    continue
                fh.write(f"ngram\t{ctx_str}\t{tok}\t{float(lp[tok])!r}\n")
        for ctx in sorted(lm.backoff_weights):
            ctx_str = ",".join(str(i) for i in ctx) or "-"
            fh.write(f"backoff\t{ctx_str}\t{lm.backoff_weights[ctx]!r}\n")


def load_lm(path) -> NGramLM:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path}: not a fuselab n-gram LM file")
    header = {}
    i = 1
    while lines[i] != "records":
        parts = lines[i].split("\t")
        header[parts[0]] = parts[1:]
        i += 1
    vocab = Vocab(tokens=tuple(header["vocab"]),
                  blank_id=int(header["blank_id"][0]),
                  word_sep_id=int(header["word_sep_id"][0]))
    order = int(header["order"][0])
    k = float(header["smoothing"][1])
    domain = header["domain"][0] if header["domain"] else ""

    def parse_ctx(s):
        return () if s == "-" else tuple(int(x) for x in s.split(","))

    log_probs: Dict[Tuple[int, ...], np.ndarray] = {}
    backoff: Dict[Tuple[int, ...], float] = {}
    for ln in lines[i + 1:]:
        if not ln:
            continue
        parts = ln.split("\t")
        if parts[0] == "ngram":
            ctx = parse_ctx(parts[1])
            if ctx not in log_probs:
                log_probs[ctx] = np.full(vocab.size + 1, -np.inf)
            log_probs[ctx][int(parts[2])] = float(parts[3])
        elif parts[0] == "backoff":
            backoff[parse_ctx(parts[1])] = float(parts[2])
    return NGramLM(order=order, vocab=vocab, log_probs=log_probs,
                   backoff_weights=backoff, k=k, domain_label=domain)
