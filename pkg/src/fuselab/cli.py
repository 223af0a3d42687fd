"""Command-line frontend for the whole pipeline.

One binary with subcommands; settings resolve as defaults < config file
< FUSELAB_* environment variables < flags.  Exit codes: 0 success, 2
configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import corpus as cp
from . import domains as dom
from . import evalkit as ek
from . import training as tr
from .autodiff import NumericError, finite_diff_grad
from .decoder import FusionConfig, dump_nbest_tsv
from .extlm import load_lm, save_lm, train_ngram
from .mwer import NBestScoringContext, mwer_grad_analytic, mwer_loss
from .params import max_rel_err
from .transducer import init_model, load_model, save_model

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

ENV_PREFIX = "FUSELAB_"

LOSS_TO_MODE = {"e2e": "none", "mwer": "none", "mwer-sf": "shallow",
                "mwer-ilme": "ilme"}


class ConfigError(Exception):
    pass


def _load_config_file(path) -> dict:
    """key=value (or 'key value') lines, '#' comments."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, val = (x.strip() for x in line.split("=", 1))
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ConfigError(f"{path}:{lineno}: expected 'key value'")
                key, val = parts
            out[key.replace("-", "_")] = val
    return out


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Apply config-file and environment overrides for unset flags."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
    known = {a.dest for a in parser._actions if a.dest not in ("help", "config")}
    unknown = set(file_cfg) - known
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    for dest in known:
        explicit = any(
            opt in sys.argv for a in parser._actions if a.dest == dest
            for opt in a.option_strings
        )
        if explicit:
            continue
        env_val = os.environ.get(ENV_PREFIX + dest.upper())
        raw = env_val if env_val is not None else file_cfg.get(dest)
        if raw is None:
            continue
        default = parser.get_default(dest)
        try:
            if isinstance(default, bool):
                setattr(args, dest, raw.lower() in ("1", "true", "yes"))
            elif isinstance(default, int):
                setattr(args, dest, int(raw))
            elif isinstance(default, float):
                setattr(args, dest, float(raw))
            else:
                setattr(args, dest, raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for key {dest!r}")
    return args


def _fusion_config(args, mode) -> FusionConfig:
    if mode == "none" and (getattr(args, "lambda_t", 0.0) or
                           getattr(args, "lambda_s", 0.0)):
        print("warning: fusion weights are ignored when mode is 'none'",
              file=sys.stderr)
    kwargs = dict(mode=mode, beam=args.beam, nbest=args.nbest)
    if mode in ("shallow", "ilme"):
        kwargs["lambda_t"] = args.lambda_t
    if mode == "ilme":
        kwargs["lambda_s"] = args.lambda_s
    return FusionConfig(**kwargs)


# -- subcommands ----------------------------------------------------------


def cmd_gen_corpus(args):
    vocab = dom.make_vocab()
    specs = dom.builtin_domain_specs(args.noise_sigma, args.frames_per_token,
                                     args.seed)
    names = list(specs) if args.domain == "all" else [args.domain]
    for name in names:
        if name not in specs:
            raise ConfigError(f"unknown domain {name!r}; "
                              f"choose from {', '.join(specs)} or 'all'")
        corpus = cp.generate_domain(specs[name], vocab, args.feat_dim, args.n)
        cp.save_corpus(os.path.join(args.out, name), corpus, vocab)
        print(f"wrote {len(corpus.utterances)} utterances to "
              f"{os.path.join(args.out, name)}")
    return 0


def cmd_train_lm(args):
    vocab = dom.make_vocab()
    seqs = []
    for d in args.corpus.split(","):
        corpus = cp.load_corpus(d, vocab)
        seqs.extend(u.reference for u in corpus.split("train"))
    lm = train_ngram(seqs, order=args.order, k=args.k, vocab=vocab,
                     domain_label=args.domain_label)
    save_lm(args.out, lm)
    print(f"wrote {args.out} ({len(lm.log_probs)} contexts)")
    return 0


def cmd_train(args):
    vocab = dom.make_vocab()
    utts = []
    for d in args.corpus.split(","):
        utts.extend(cp.load_corpus(d, vocab).split("train"))
    if args.init:
        model = load_model(args.init)
    else:
        model = init_model(vocab, args.feat_dim, args.hidden,
                           args.joint_hidden, seed=args.seed,
                           pred_hidden=args.pred_hidden)
    mode = LOSS_TO_MODE[args.loss]
    lm = load_lm(args.lm) if args.lm else None
    if args.loss in ("mwer-sf", "mwer-ilme") and lm is None:
        raise ConfigError(f"loss {args.loss!r} requires --lm")
    logs = []
    if args.loss == "e2e":
        model = tr.train_e2e(model, utts, args.steps, args.lr,
                             args.batch_size, seed=args.seed,
                             optimizer=args.optimizer, log_rows=logs)
    else:
        fcfg = _fusion_config(args, mode)
        model = tr.train_mwer(model, utts, lm, fcfg, args.steps, args.lr,
                              args.batch_size, seed=args.seed,
                              optimizer=args.optimizer, log_rows=logs)
    os.makedirs(args.out, exist_ok=True)
    save_model(os.path.join(args.out, "model.ckpt"), model,
               {"loss": args.loss, "seed": args.seed})
    tr.write_training_log(os.path.join(args.out, "training_log.tsv"),
                          logs, args.seed)
    print(f"wrote {os.path.join(args.out, 'model.ckpt')}")
    return 0


def cmd_decode(args):
    model = load_model(args.model)
    vocab = model.vocab
    lm = load_lm(args.lm) if args.lm else None
    fcfg = _fusion_config(args, args.mode)
    if args.mode in ("shallow", "ilme") and lm is None:
        raise ConfigError(f"mode {args.mode!r} requires --lm")
    utts = cp.load_corpus(args.corpus, vocab).split(args.split)
    nbests = []
    hyps = ek.decode_corpus(model, lm, utts, fcfg, nbests)
    os.makedirs(args.out, exist_ok=True)
    dump_nbest_tsv(os.path.join(args.out, "nbest.tsv"), nbests, vocab,
                   cp.detokenize)
    with open(os.path.join(args.out, "hyps.tsv"), "w") as fh:
        fh.write("id\ttext\n")
        for utt in utts:
            fh.write(f"{utt.id}\t{cp.detokenize(hyps[utt.id], vocab)}\n")
    print(f"decoded {len(utts)} utterances -> {args.out}")
    return 0


def cmd_evaluate(args):
    model = load_model(args.model)
    vocab = model.vocab
    lm = load_lm(args.lm) if args.lm else None
    fcfg = _fusion_config(args, args.mode)
    if args.mode in ("shallow", "ilme") and lm is None:
        raise ConfigError(f"mode {args.mode!r} requires --lm")
    rows = []
    for d in args.corpus.split(","):
        utts = cp.load_corpus(d, vocab).split(args.split)
        hyps = ek.decode_corpus(model, lm, utts, fcfg)
        wer, words = ek.corpus_wer(hyps, utts, vocab)
        rows.append((wer, words))
        print(f"{d}\twords={words}\tWER={wer:.2f}%")
    print(f"weighted_avg\tWER={ek.weighted_average(rows):.2f}%")
    return 0


def cmd_sweep(args):
    model = load_model(args.model)
    lm = load_lm(args.lm)
    utts = cp.load_corpus(args.corpus, model.vocab).split(args.split)
    base = _fusion_config(args, args.mode if args.mode != "none" else "ilme")
    grid_t = [float(x) for x in args.grid_t.split(",")]
    grid_s = [float(x) for x in args.grid_s.split(",")]
    rows, argmin = ek.sweep_lm_weights(model, lm, utts, grid_t, grid_s,
                                       base.mode, base)
    print("lambda_t\tlambda_s\twer")
    for lt, ls, wer in rows:
        print(f"{lt:.4f}\t{ls:.4f}\t{wer:.4f}")
    print(f"argmin\t{argmin[0]:.4f}\t{argmin[1]:.4f}")
    return 0


def cmd_gradcheck(args):
    from .decoder import beam_search
    from .mwer import word_errors

    vocab = dom.make_vocab()
    fcfg = FusionConfig(mode="ilme", lambda_t=0.25, lambda_s=0.05,
                        beam=6, nbest=4)
    # search derived seeds for an instance whose N-best hypotheses have
    # differing error counts; with equal counts the loss is flat and a
    # finite difference would only measure rounding noise
    for attempt in range(32):
        inst_seed = args.seed + attempt
        rng = np.random.default_rng(inst_seed)
        model = init_model(vocab, feat_dim=3, hidden=3, joint_hidden=3,
                           seed=inst_seed)
        feats = rng.normal(size=(3, 3))
        lm_text = [tuple(int(rng.integers(1, vocab.size)) for _ in range(3))
                   for _ in range(4)]
        lm = train_ngram(lm_text, order=2, k=0.5, vocab=vocab)
        nb = beam_search(model, lm, feats, fcfg, utt_id="gradcheck")
        ys = nb.hypotheses[min(1, len(nb.hypotheses) - 1)].tokens
        errs = {word_errors(h.tokens, ys, vocab) for h in nb.hypotheses}
        if len(errs) >= 2:
            break
    else:
        print("gradcheck: no non-degenerate instance found", file=sys.stderr)
        return EXIT_NUMERIC
    ctx = NBestScoringContext(nbest=nb, reference=ys, config=fcfg, vocab=vocab)
    analytic = mwer_grad_analytic(ctx, model, feats)

    def f(p):
        from .mwer import mwer_loss_graph
        return mwer_loss_graph(p, model, feats, ctx)

    numeric = finite_diff_grad(f, model.params, eps=1e-5)
    err = max_rel_err(analytic, numeric)
    print(f"gradcheck seed={args.seed}: max relative error = {err:.3e}")
    return 0 if err < 1e-4 else EXIT_NUMERIC


def cmd_experiment(args):
    manifest = ek.parse_manifest(args.manifest) if args.manifest else {}
    if args.seed is not None:
        manifest["seed"] = args.seed
    out = args.out or manifest.get("out_dir") or "experiment_out"
    bundle = ek.run_experiment(manifest, out_dir=out)
    print(bundle["multi_domain"].to_text())
    print(bundle["out_of_domain"].to_text())
    print(f"artifacts written to {out}")
    return 0


# -- argument wiring ------------------------------------------------------


def _add_fusion_flags(p, default_mode="none"):
    p.add_argument("--mode", default=default_mode,
                   choices=["none", "shallow", "ilme"],
                   help="fusion mode during decoding")
    p.add_argument("--lambda-t", type=float, default=0.25,
                   help="external LM weight")
    p.add_argument("--lambda-s", type=float, default=0.05,
                   help="internal LM weight (ilme mode)")
    p.add_argument("--beam", type=int, default=5, help="beam size")
    p.add_argument("--nbest", type=int, default=5, help="N-best size")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="fuselab",
        description="Desk-scale transducer ASR lab: expected-WER training "
                    "with external/internal LM fusion.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def new(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="config file (key=value lines)")
        p.set_defaults(func=func)
        return p

    p = new("gen-corpus", cmd_gen_corpus, "generate synthetic domain corpora")
    p.add_argument("--domain", default="all")
    p.add_argument("--n", type=int, default=60, help="utterances per domain")
    p.add_argument("--noise-sigma", type=float, default=0.45)
    p.add_argument("--frames-per-token", type=int, default=2)
    p.add_argument("--feat-dim", type=int, default=6)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--out", default="corpora")

    p = new("train-lm", cmd_train_lm, "train an n-gram LM on corpus text")
    p.add_argument("--corpus", required=True,
                   help="comma-separated corpus directories")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--k", type=float, default=0.1)
    p.add_argument("--domain-label", default="")
    p.add_argument("--out", default="lm.txt")

    p = new("train", cmd_train, "train or fine-tune a transducer")
    p.add_argument("--corpus", required=True)
    p.add_argument("--loss", default="e2e",
                   choices=["e2e", "mwer", "mwer-sf", "mwer-ilme"])
    p.add_argument("--init", help="initial checkpoint (fine-tuning)")
    p.add_argument("--lm", help="external LM file for fusion losses")
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--feat-dim", type=int, default=6)
    p.add_argument("--hidden", type=int, default=12)
    p.add_argument("--joint-hidden", type=int, default=12)
    p.add_argument("--pred-hidden", type=int, default=0,
                   help="predictor width (0: same as --hidden)")
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--out", default="train_out")
    _add_fusion_flags(p)

    p = new("decode", cmd_decode, "decode a corpus split to N-best lists")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--lm")
    p.add_argument("--out", default="decode_out")
    _add_fusion_flags(p)

    p = new("evaluate", cmd_evaluate, "decode and report WER")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True,
                   help="comma-separated corpus directories")
    p.add_argument("--split", default="test")
    p.add_argument("--lm")
    _add_fusion_flags(p)

    p = new("sweep", cmd_sweep, "grid-sweep LM weights and report WER surface")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--lm", required=True)
    p.add_argument("--grid-t", default="0.0,0.25,0.5")
    p.add_argument("--grid-s", default="0.0,0.05,0.1")
    _add_fusion_flags(p, default_mode="ilme")

    p = new("gradcheck", cmd_gradcheck,
            "compare the analytic expected-WER gradient to finite differences")
    p.add_argument("--seed", type=int, default=7)

    p = new("experiment", cmd_experiment,
            "run the full four-system benchmark from a manifest")
    p.add_argument("--manifest", help="manifest file (key value lines)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory")

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    sub_parser = next(
        p for p in ap._subparsers._group_actions[0].choices.values()
        if p.get_default("func") is args.func
    )
    try:
        args = _resolve(args, sub_parser)
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
