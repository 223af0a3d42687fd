import os

import numpy as np
import pytest

from fuselab import cli
from fuselab.transducer import load_model


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Corpora, an LM, and a small trained model shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpora = root / "corpora"
    assert cli.main(["gen-corpus", "--domain", "all", "--n", "6",
                     "--feat-dim", "4", "--noise-sigma", "0.3",
                     "--seed", "3", "--out", str(corpora)]) == 0
    lm_path = root / "lm.txt"
    assert cli.main(["train-lm", "--corpus", str(corpora / "call"),
                     "--order", "2", "--out", str(lm_path)]) == 0
    train_out = root / "train_out"
    assert cli.main(["train", "--corpus", str(corpora / "call"),
                     "--loss", "e2e", "--steps", "3", "--lr", "0.02",
                     "--feat-dim", "4", "--hidden", "5", "--joint-hidden",
                     "5", "--seed", "3", "--out", str(train_out)]) == 0
    return {"root": root, "corpora": corpora, "lm": lm_path,
            "model": train_out / "model.ckpt"}


def test_gen_corpus_wrote_manifests(workdir):
    assert (workdir["corpora"] / "call" / "manifest.tsv").exists()
    assert (workdir["corpora"] / "tales" / "manifest.tsv").exists()


def test_train_wrote_artifacts(workdir):
    assert workdir["model"].exists()
    assert (workdir["model"].parent / "training_log.tsv").exists()


def test_decode_and_evaluate(workdir, capsys):
    out = workdir["root"] / "decode_out"
    assert cli.main(["decode", "--model", str(workdir["model"]),
                     "--corpus", str(workdir["corpora"] / "call"),
                     "--split", "test", "--out", str(out)]) == 0
    assert (out / "nbest.tsv").exists()
    assert (out / "hyps.tsv").exists()
    assert cli.main(["evaluate", "--model", str(workdir["model"]),
                     "--corpus", str(workdir["corpora"] / "call"),
                     "--split", "test"]) == 0
    text = capsys.readouterr().out
    assert "weighted_avg" in text and "WER=" in text


def test_sweep_prints_grid(workdir, capsys):
    assert cli.main(["sweep", "--model", str(workdir["model"]),
                     "--corpus", str(workdir["corpora"] / "call"),
                     "--lm", str(workdir["lm"]), "--grid-t", "0.0,0.25",
                     "--grid-s", "0.0", "--mode", "ilme", "--beam", "2",
                     "--nbest", "2"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "lambda_t\tlambda_s\twer"
    assert out.splitlines()[-1].startswith("argmin\t")


def test_zero_steps_finetune_preserves_checkpoint(workdir):
    out = workdir["root"] / "finetune_out"
    assert cli.main(["train", "--corpus", str(workdir["corpora"] / "call"),
                     "--loss", "mwer", "--init", str(workdir["model"]),
                     "--steps", "0", "--beam", "2", "--nbest", "2",
                     "--out", str(out)]) == 0
    before = load_model(workdir["model"])
    after = load_model(out / "model.ckpt")
    for n in before.params.names():
        assert np.array_equal(before.params.value(n), after.params.value(n))


def test_fusion_mode_without_lm_is_config_error(workdir, capsys):
    rc = cli.main(["decode", "--model", str(workdir["model"]),
                   "--corpus", str(workdir["corpora"] / "call"),
                   "--mode", "shallow", "--out",
                   str(workdir["root"] / "x")])
    assert rc == cli.EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path, capsys):
    rc = cli.main(["decode", "--model", str(tmp_path / "no_such.ckpt"),
                   "--corpus", str(tmp_path), "--out", str(tmp_path / "o")])
    assert rc == cli.EXIT_CONFIG


def test_unknown_config_key_rejected(workdir, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("bogus = 1\n")
    rc = cli.main(["evaluate", "--model", str(workdir["model"]),
                   "--corpus", str(workdir["corpora"] / "call"),
                   "--config", str(cfg)])
    assert rc == cli.EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_config_file_supplies_defaults(workdir, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("split = test\nbeam = 2\nnbest = 2\n")
    rc = cli.main(["evaluate", "--model", str(workdir["model"]),
                   "--corpus", str(workdir["corpora"] / "call"),
                   "--config", str(cfg)])
    assert rc == 0


def test_env_override(workdir, capsys, monkeypatch):
    monkeypatch.setenv("FUSELAB_BEAM", "2")
    monkeypatch.setenv("FUSELAB_NBEST", "2")
    assert cli.main(["evaluate", "--model", str(workdir["model"]),
                     "--corpus", str(workdir["corpora"] / "call")]) == 0


def test_bad_env_value_is_config_error(workdir, monkeypatch, capsys):
    monkeypatch.setenv("FUSELAB_BEAM", "lots")
    rc = cli.main(["evaluate", "--model", str(workdir["model"]),
                   "--corpus", str(workdir["corpora"] / "call")])
    assert rc == cli.EXIT_CONFIG


def test_warning_when_weights_ignored(workdir, capsys):
    out = workdir["root"] / "warn_out"
    assert cli.main(["decode", "--model", str(workdir["model"]),
                     "--corpus", str(workdir["corpora"] / "call"),
                     "--mode", "none", "--lambda-t", "0.5",
                     "--out", str(out)]) == 0
    assert "ignored" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
