"""Training loops: standard lattice-loss training and MWER fine-tuning.

Plain gradient descent and an adaptive-moment optimizer; batches are
drawn deterministically from a seeded generator, and every step can be
logged as one TSV row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import mwer as mw
from . import transducer as td
from .decoder import FusionConfig
from .extlm import NGramLM
from .params import GradMap, ParamSet, grad_axpy, grad_norm, zeros_like
from .transducer import TransducerModel, Utterance


class Sgd:
    def step(self, params: ParamSet, grads: GradMap, lr: float):
        return {n: params.value(n) - lr * grads[n] for n in params.names()}


class Adam:
    """Adaptive-moment estimation with bias correction."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: GradMap = {}
        self.v: GradMap = {}
        self.t = 0

    def step(self, params: ParamSet, grads: GradMap, lr: float):
        self.t += 1
        out = {}
        for n in params.names():
            g = grads[n]
            self.m[n] = self.beta1 * self.m.get(n, 0.0) + (1 - self.beta1) * g
            self.v[n] = self.beta2 * self.v.get(n, 0.0) + (1 - self.beta2) * g * g
            mhat = self.m[n] / (1 - self.beta1 ** self.t)
            vhat = self.v[n] / (1 - self.beta2 ** self.t)
            out[n] = params.value(n) - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def make_optimizer(name: str):
    if name == "sgd":
        return Sgd()
    if name == "adam":
        return Adam()
    raise ValueError(f"unknown optimizer {name!r}")


def _batches(utts: Sequence[Utterance], batch_size: int, steps: int,
             seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        idx = rng.choice(len(utts), size=min(batch_size, len(utts)),
                         replace=False)
        yield [utts[i] for i in sorted(idx)]


def train_e2e(model: TransducerModel, utts: Sequence[Utterance], steps: int,
              learning_rate: float, batch_size: int = 8, seed: int = 0,
              optimizer: str = "adam", log_rows: Optional[list] = None
              ) -> TransducerModel:
    """Minimize the lattice loss over the training utterances."""
    opt = make_optimizer(optimizer)
    for step, batch in enumerate(_batches(utts, batch_size, steps, seed)):
        total = zeros_like(model.params)
        losses = []
        for utt in batch:
            loss, grads, _ = td.transducer_loss(model, utt)
            grad_axpy(total, 1.0 / len(batch), grads)
            losses.append(loss)
        new_values = opt.step(model.params, total, learning_rate)
        model = model.with_params(model.params.with_values(new_values))
        if log_rows is not None:
            log_rows.append({
                "step": step, "objective": "e2e",
                "loss": float(np.mean(losses)),
                "grad_norm": grad_norm(total),
            })
    return model


def train_mwer(model: TransducerModel, utts: Sequence[Utterance],
               extlm: Optional[NGramLM], config: FusionConfig, steps: int,
               learning_rate: float, batch_size: int = 8, seed: int = 0,
               optimizer: str = "adam", log_rows: Optional[list] = None
               ) -> TransducerModel:
    """MWER fine-tuning: N-best regenerated with the current model each
    step; the fusion mode of `config` selects plain / SF / ILME."""
    opt = make_optimizer(optimizer)
    for step, batch in enumerate(_batches(utts, batch_size, steps, seed)):
        model, stats = mw.mwer_training_step(model, batch, extlm, config,
                                             learning_rate, optimizer=opt)
        if log_rows is not None:
            log_rows.append({
                "step": step, "objective": f"mwer-{config.mode}",
                "loss": stats["loss"],
                "expected_errors": stats["expected_errors"],
                "grad_norm": stats["grad_norm"],
                "lambda_t": config.lambda_t, "lambda_s": config.lambda_s,
            })
    return model


def write_training_log(path, rows: List[dict], seed: int) -> None:
    cols = ["step", "objective", "loss", "expected_errors", "grad_norm",
            "lambda_t", "lambda_s", "seed"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            out = dict(row)
            out.setdefault("seed", seed)
            fh.write("\t".join(str(out.get(c, "")) for c in cols) + "\n")
