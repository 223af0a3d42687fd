"""WER metrics, LM-weight sweeps, and the four-system experiment harness.

`run_experiment` trains the four systems (lattice-loss baseline, plain
MWER, MWER with shallow fusion, MWER with internal-LM-subtracted fusion)
on synthetic source-domain speech, then evaluates each with its matching
inference-time fusion at the training-time weights on every test subset.
Reports are emitted as TSV and aligned plain text and are byte-identical
for identical manifests.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import corpus as cp
from . import domains as dom
from . import training as tr
from .decoder import FusionConfig, beam_search, dump_nbest_tsv
from .extlm import NGramLM, train_ngram
from .mwer import word_errors
from .transducer import TransducerModel, Utterance, Vocab, init_model, save_model


def corpus_wer(hyps: Dict[str, tuple], refs: Sequence[Utterance],
               vocab: Vocab) -> Tuple[float, int]:
    """(WER %, reference word count); a missing hypothesis counts as a
    full deletion of its reference."""
    total_err = 0
    total_words = 0
    for utt in refs:
        ref_words = len(cp.detokenize(utt.reference, vocab).split())
        total_words += ref_words
        hyp = hyps.get(utt.id)
        if hyp is None:
            total_err += ref_words
        else:
            total_err += word_errors(hyp, utt.reference, vocab)
    if total_words == 0:
        raise ValueError("empty reference set")
    return 100.0 * total_err / total_words, total_words


def weighted_average(rows: Sequence[Tuple[float, int]]) -> float:
    """Word-count weighted average of (WER, word_count) rows."""
    words = sum(w for _, w in rows)
    if words <= 0:
        raise ValueError("word counts must be positive")
    return sum(wer * w for wer, w in rows) / words


def decode_corpus(model: TransducerModel, extlm: Optional[NGramLM],
                  utts: Sequence[Utterance], config: FusionConfig,
                  collect_nbest: Optional[list] = None) -> Dict[str, tuple]:
    hyps = {}
    for utt in utts:
        nb = beam_search(model, extlm, utt.features, config, utt_id=utt.id)
        hyps[utt.id] = nb.top().tokens
        if collect_nbest is not None:
            collect_nbest.append(nb)
    return hyps


def sweep_lm_weights(model: TransducerModel, extlm: NGramLM,
                     utts: Sequence[Utterance], grid_t: Sequence[float],
                     grid_s: Sequence[float], mode: str,
                     base: FusionConfig) -> Tuple[list, Tuple[float, float]]:
    """Decode at every (lambda_t, lambda_s) grid point.

    Returns (rows, argmin) with rows of (lambda_t, lambda_s, wer); ties
    break toward the lexicographically smallest weight pair.
    """
    rows = []
    for lt in grid_t:
        for ls in (grid_s if mode == "ilme" else [0.0]):
            if lt == 0.0 and ls == 0.0:
                cfg = FusionConfig(mode="none", beam=base.beam,
                                   nbest=base.nbest,
                                   max_symbols_per_frame=base.max_symbols_per_frame)
            else:
                cfg = FusionConfig(mode=mode, lambda_t=lt, lambda_s=ls,
                                   beam=base.beam, nbest=base.nbest,
                                   max_symbols_per_frame=base.max_symbols_per_frame)
            hyps = decode_corpus(model, extlm, utts, cfg)
            wer, _ = corpus_wer(hyps, utts, model.vocab)
            rows.append((float(lt), float(ls), wer))
    best = min(rows, key=lambda r: (r[2], r[0], r[1]))
    return rows, (best[0], best[1])


@dataclass
class EvalReport:
    title: str
    systems: List[str]
    rows: List[dict]  # subset, word_count, one WER column per system
    relative_reduction: Dict[str, float] = field(default_factory=dict)

    def averages(self) -> Dict[str, float]:
        return {
            s: weighted_average([(r[s], r["word_count"]) for r in self.rows])
            for s in self.systems
        }

    def to_tsv(self) -> str:
        cols = ["subset", "word_count"] + list(self.systems)
        lines = ["\t".join(cols)]
        for r in self.rows:
            lines.append("\t".join(
                [str(r["subset"]), str(r["word_count"])]
                + [f"{r[s]:.4f}" for s in self.systems]))
        avg = self.averages()
        lines.append("\t".join(["weighted_avg", str(sum(r["word_count"] for r in self.rows))]
                               + [f"{avg[s]:.4f}" for s in self.systems]))
        for name, val in sorted(self.relative_reduction.items()):
            lines.append(f"# relative_reduction\t{name}\t{val:.4f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cols = ["subset", "words"] + list(self.systems)
        table = [cols]
        for r in self.rows:
            table.append([str(r["subset"]), str(r["word_count"])]
                         + [f"{r[s]:.2f}" for s in self.systems])
        avg = self.averages()
        table.append(["weighted_avg", str(sum(r["word_count"] for r in self.rows))]
                     + [f"{avg[s]:.2f}" for s in self.systems])
        widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
        out = [self.title]
        for row in table:
            out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        for name, val in sorted(self.relative_reduction.items()):
            out.append(f"relative reduction {name}: {val:.2f}%")
        return "\n".join(out) + "\n"


def relative_reduction(baseline: float, system: float) -> float:
    """100 * (baseline - system) / baseline."""
    return 100.0 * (baseline - system) / baseline


DEFAULT_MANIFEST = {
    "seed": 11,
    "noise_sigma": 0.45,
    "frames_per_token": 2,
    "n_utts_per_domain": 60,
    "feat_dim": 6,
    "hidden": 12,
    "joint_hidden": 12,
    "pred_hidden": 0,
    "source_domains": "call,keyboard",
    "lm_order": 3,
    "lm_k": 0.1,
    "e2e_steps": 250,
    "e2e_lr": 0.02,
    "mwer_steps": 30,
    "mwer_lr": 0.002,
    "batch_size": 8,
    "lambda_t": 0.25,
    "lambda_s": 0.05,
    "beam": 5,
    "nbest": 5,
    "sweep_grid_t": "0.0,0.25,0.5",
    "sweep_grid_s": "0.0,0.05,0.1",
    "optimizer": "adam",
}

_INT_KEYS = {"seed", "frames_per_token", "n_utts_per_domain", "feat_dim",
             "hidden", "joint_hidden", "pred_hidden", "lm_order",
             "e2e_steps", "mwer_steps",
             "batch_size", "beam", "nbest"}
_FLOAT_KEYS = {"noise_sigma", "lm_k", "e2e_lr", "mwer_lr", "lambda_t",
               "lambda_s"}
_STR_KEYS = {"source_domains", "sweep_grid_t", "sweep_grid_s", "optimizer",
             "out_dir"}


def parse_manifest(path) -> dict:
    """Key-value manifest: one `key value` pair per line, '#' comments."""
    cfg = dict(DEFAULT_MANIFEST)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'key value'")
            key, val = parts
            if key in _INT_KEYS:
                cfg[key] = int(val)
            elif key in _FLOAT_KEYS:
                cfg[key] = float(val)
            elif key in _STR_KEYS:
                cfg[key] = val.strip()
            else:
                raise ValueError(f"{path}:{lineno}: unknown manifest key {key!r}")
    return cfg


def _floats(csv: str) -> list:
    return [float(x) for x in csv.split(",") if x != ""]


def run_experiment(manifest: dict, out_dir: Optional[str] = None) -> dict:
    """Full pipeline for one seed; returns the report bundle.

    Stages: corpora -> external LMs -> baseline training -> three MWER
    fine-tunings -> matched-fusion evaluation on every subset -> oracle
    weight sweep -> out-of-domain evaluation.
    """
    cfg = dict(DEFAULT_MANIFEST)
    cfg.update(manifest)
    seed = int(cfg["seed"])
    stage = "setup"
    try:
        vocab = dom.make_vocab()
        specs = dom.builtin_domain_specs(cfg["noise_sigma"],
                                         cfg["frames_per_token"], seed)
        stage = "corpora"
        corpora = {
            name: cp.generate_domain(spec, vocab, cfg["feat_dim"],
                                     cfg["n_utts_per_domain"])
            for name, spec in specs.items()
        }
        source_domains = [d.strip() for d in cfg["source_domains"].split(",")]
        train_utts = [u for d in source_domains for u in corpora[d].split("train")]

        stage = "external-lms"
        multi_texts = [t for d in dom.IN_DOMAIN
                       for t in corpora[d].texts("train", vocab)]
        multi_lm = train_ngram([cp.tokenize(t, vocab) for t in multi_texts],
                               order=cfg["lm_order"], k=cfg["lm_k"],
                               vocab=vocab, domain_label="multi")
        heldout_texts = corpora[dom.HELD_OUT].texts("train", vocab)
        heldout_lm = train_ngram([cp.tokenize(t, vocab) for t in heldout_texts],
                                 order=cfg["lm_order"], k=cfg["lm_k"],
                                 vocab=vocab, domain_label=dom.HELD_OUT)

        stage = "baseline-training"
        logs: List[dict] = []
        model0 = init_model(vocab, cfg["feat_dim"], cfg["hidden"],
                            cfg["joint_hidden"], seed=seed,
                            pred_hidden=cfg["pred_hidden"])
        baseline = tr.train_e2e(model0, train_utts, cfg["e2e_steps"],
                                cfg["e2e_lr"], cfg["batch_size"], seed=seed,
                                optimizer=cfg["optimizer"], log_rows=logs)

        lt, ls = cfg["lambda_t"], cfg["lambda_s"]
        common = dict(beam=cfg["beam"], nbest=cfg["nbest"])
        cfg_none = FusionConfig(mode="none", **common)
        cfg_sf = FusionConfig(mode="shallow", lambda_t=lt, **common)
        cfg_ilme = FusionConfig(mode="ilme", lambda_t=lt, lambda_s=ls, **common)

        stage = "mwer-training"
        sys_mwer = tr.train_mwer(baseline, train_utts, None, cfg_none,
                                 cfg["mwer_steps"], cfg["mwer_lr"],
                                 cfg["batch_size"], seed=seed + 1,
                                 optimizer=cfg["optimizer"], log_rows=logs)
        sys_sf = tr.train_mwer(baseline, train_utts, multi_lm, cfg_sf,
                               cfg["mwer_steps"], cfg["mwer_lr"],
                               cfg["batch_size"], seed=seed + 1,
                               optimizer=cfg["optimizer"], log_rows=logs)
        sys_ilme = tr.train_mwer(baseline, train_utts, multi_lm, cfg_ilme,
                                 cfg["mwer_steps"], cfg["mwer_lr"],
                                 cfg["batch_size"], seed=seed + 1,
                                 optimizer=cfg["optimizer"], log_rows=logs)

        # each system decodes with its matching inference-time fusion
        systems = [
            ("baseline", baseline, None, cfg_none),
            ("mwer", sys_mwer, None, cfg_none),
            ("mwer_sf", sys_sf, multi_lm, cfg_sf),
            ("mwer_ilme", sys_ilme, multi_lm, cfg_ilme),
        ]

        stage = "multi-domain-eval"
        nbest_dumps = {}
        rows = []
        for subset in dom.IN_DOMAIN:
            test_utts = corpora[subset].split("test")
            row = {"subset": subset}
            for name, model, lm, fcfg in systems:
                collected: list = []
                hyps = decode_corpus(model, lm, test_utts, fcfg, collected)
                wer, words = corpus_wer(hyps, test_utts, vocab)
                row[name] = wer
                row["word_count"] = words
                nbest_dumps[(subset, name)] = collected
            rows.append(row)
        report1 = EvalReport(
            title=f"multi-domain WER (%), seed {seed}",
            systems=[s[0] for s in systems], rows=rows)
        avg = report1.averages()
        report1.relative_reduction = {
            "mwer_ilme_vs_mwer": relative_reduction(avg["mwer"], avg["mwer_ilme"]),
            "mwer_ilme_vs_mwer_sf": relative_reduction(avg["mwer_sf"], avg["mwer_ilme"]),
            "mwer_vs_baseline": relative_reduction(avg["baseline"], avg["mwer"]),
        }

        stage = "oracle-sweep"
        grid_t = _floats(cfg["sweep_grid_t"])
        grid_s = _floats(cfg["sweep_grid_s"])
        sweep_rows = []
        oracle_pairs = []
        for subset in dom.IN_DOMAIN:
            test_utts = corpora[subset].split("test")
            table, argmin = sweep_lm_weights(sys_mwer, multi_lm, test_utts,
                                             grid_t, grid_s, "ilme", cfg_ilme)
            best_wer = min(w for _, _, w in table)
            words = corpus_wer({u.id: u.reference for u in test_utts},
                               test_utts, vocab)[1]
            oracle_pairs.append((best_wer, words))
            for lt_, ls_, w in table:
                sweep_rows.append({"subset": subset, "lambda_t": lt_,
                                   "lambda_s": ls_, "wer": w})
            sweep_rows.append({"subset": subset, "lambda_t": argmin[0],
                               "lambda_s": argmin[1],
                               "wer": best_wer, "oracle": 1})
        oracle_avg = weighted_average(oracle_pairs)

        stage = "out-of-domain-eval"
        held_utts = corpora[dom.HELD_OUT].split("test")
        ood_row = {"subset": dom.HELD_OUT}
        ood_systems = [
            ("baseline", baseline, None, cfg_none),
            ("mwer", sys_mwer, None, cfg_none),
            ("mwer_sf", sys_sf, heldout_lm, cfg_sf),
            ("mwer_ilme", sys_ilme, heldout_lm, cfg_ilme),
        ]
        for name, model, lm, fcfg in ood_systems:
            hyps = decode_corpus(model, lm, held_utts, fcfg)
            wer, words = corpus_wer(hyps, held_utts, vocab)
            ood_row[name] = wer
            ood_row["word_count"] = words
        report4 = EvalReport(
            title=f"out-of-domain WER (%), held-out LM, seed {seed}",
            systems=[s[0] for s in ood_systems], rows=[ood_row])
        oavg = report4.averages()
        report4.relative_reduction = {
            "mwer_ilme_vs_mwer": relative_reduction(oavg["mwer"], oavg["mwer_ilme"]),
        }

        bundle = {
            "seed": seed,
            "multi_domain": report1,
            "out_of_domain": report4,
            "sweep_rows": sweep_rows,
            "oracle_weighted_avg": oracle_avg,
            "averages": avg,
            "training_log": logs,
            "models": {
                "baseline": baseline, "mwer": sys_mwer,
                "mwer_sf": sys_sf, "mwer_ilme": sys_ilme,
            },
            "lms": {"multi": multi_lm, "heldout": heldout_lm},
            "corpora": corpora,
            "nbest_dumps": nbest_dumps,
        }
        if out_dir is not None:
            stage = "write-artifacts"
            _write_bundle(out_dir, bundle, cfg, vocab)
        return bundle
    except Exception as exc:
        raise RuntimeError(
            f"experiment failed at stage {stage!r} (seed {seed}): {exc}"
        ) from exc


def _write_bundle(out_dir, bundle, cfg, vocab) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report_multi_domain.tsv"), "w") as fh:
        fh.write(bundle["multi_domain"].to_tsv())
    with open(os.path.join(out_dir, "report_multi_domain.txt"), "w") as fh:
        fh.write(bundle["multi_domain"].to_text())
    with open(os.path.join(out_dir, "report_out_of_domain.tsv"), "w") as fh:
        fh.write(bundle["out_of_domain"].to_tsv())
    with open(os.path.join(out_dir, "report_out_of_domain.txt"), "w") as fh:
        fh.write(bundle["out_of_domain"].to_text())
    with open(os.path.join(out_dir, "report_oracle_sweep.tsv"), "w") as fh:
        fh.write("subset\tlambda_t\tlambda_s\twer\toracle\n")
        for r in bundle["sweep_rows"]:
            fh.write(f"{r['subset']}\t{r['lambda_t']:.4f}\t{r['lambda_s']:.4f}"
                     f"\t{r['wer']:.4f}\t{r.get('oracle', 0)}\n")
        fh.write(f"# oracle_weighted_avg\t{bundle['oracle_weighted_avg']:.4f}\n")
    tr.write_training_log(os.path.join(out_dir, "training_log.tsv"),
                          bundle["training_log"], bundle["seed"])
    from .corpus import detokenize
    nb_dir = os.path.join(out_dir, "nbest")
    os.makedirs(nb_dir, exist_ok=True)
    for (subset, name), nbests in sorted(bundle["nbest_dumps"].items()):
        dump_nbest_tsv(os.path.join(nb_dir, f"{subset}.{name}.tsv"),
                       nbests, vocab, detokenize)
    for name, model in bundle["models"].items():
        save_model(os.path.join(out_dir, f"model_{name}.ckpt"), model,
                   {"system": name, "seed": bundle["seed"]})
