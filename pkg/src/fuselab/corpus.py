"""Deterministic synthetic multi-domain corpora.

Sentences are sampled from small weighted grammars over word lists,
tokenized to characters (spaces become the word-separator token), and
turned into pseudo-acoustic features: each token emits a fixed number of
frames of a seeded per-token embedding plus Gaussian noise.  Everything
is a pure function of the spec and seeds, so corpora are byte-identical
across runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .params import load_container, save_container
from .transducer import TokenSeq, Utterance, Vocab


def tokenize(text: str, vocab: Vocab) -> TokenSeq:
    ids = []
    for ch in text:
        tok = "_" if ch == " " else ch
        try:
            idx = vocab.tokens.index(tok)
        except ValueError:
            raise ValueError(f"character {ch!r} not in the vocabulary") from None
        ids.append(idx)
    return tuple(ids)


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    out = []
    for i in ids:
        if i == vocab.blank_id:
            raise ValueError("blank in label sequence")
        out.append(" " if i == vocab.word_sep_id else vocab.tokens[i])
    return "".join(out)


# Grammar: nonterminal -> list of (weight, expansion) where expansion is
# a sequence of symbols; symbols that are grammar keys expand recursively,
# anything else is a terminal word.
Grammar = Dict[str, List[Tuple[float, Tuple[str, ...]]]]


@dataclass(frozen=True)
class DomainSpec:
    name: str
    grammar: tuple  # frozen view of the Grammar, see `make_spec`
    word_list: tuple
    noise_sigma: float
    frames_per_token: int
    seed: int
    # token embeddings are the shared "acoustic" alphabet; domains shift
    # the text distribution, not the sound of a letter, so every domain
    # in one benchmark must use the same acoustic seed
    acoustic_seed: Optional[int] = None

    def rules(self) -> Grammar:
        return {nt: list(prods) for nt, prods in self.grammar}

    @property
    def embedding_seed(self) -> int:
        return self.seed if self.acoustic_seed is None else self.acoustic_seed


def make_spec(name: str, grammar: Grammar, noise_sigma: float = 0.0,
              frames_per_token: int = 2, seed: int = 0,
              acoustic_seed: Optional[int] = None) -> DomainSpec:
    words = sorted(
        {sym for prods in grammar.values() for _, exp in prods for sym in exp
         if sym not in grammar}
    )
    if not words:
        raise ValueError("grammar has no terminal words")
    if noise_sigma < 0 or frames_per_token < 1:
        raise ValueError("bad noise_sigma / frames_per_token")
    frozen = tuple(
        (nt, tuple((float(w), tuple(exp)) for w, exp in prods))
        for nt, prods in grammar.items()
    )
    return DomainSpec(name, frozen, tuple(words), float(noise_sigma),
                      int(frames_per_token), int(seed),
                      None if acoustic_seed is None else int(acoustic_seed))


def sample_sentence(spec: DomainSpec, rng: np.random.Generator) -> str:
    rules = spec.rules()

    def expand(symbol: str) -> List[str]:
        if symbol not in rules:
            return [symbol]
        weights = np.array([w for w, _ in rules[symbol]])
        probs = weights / weights.sum()
        choice = rng.choice(len(probs), p=probs)
        out: List[str] = []
        for sym in rules[symbol][choice][1]:
            out.extend(expand(sym))
        return out

    words = expand("S")
    if not words:
        raise ValueError(f"grammar of domain {spec.name!r} produced an "
                         "empty sentence")
    return " ".join(words)


def token_embedding(token_id: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng((seed * 1_000_003 + token_id) & 0x7FFFFFFF)
    return rng.normal(0.0, 1.0, size=dim)


def synthesize_features(tokens: Sequence[int], spec: DomainSpec, dim: int,
                        utt_index: int = 0) -> np.ndarray:
    """frames_per_token noisy copies of each token's embedding."""
    tokens = tuple(int(t) for t in tokens)
    emb = np.stack([token_embedding(t, dim, spec.embedding_seed)
                    for t in tokens])
    frames = np.repeat(emb, spec.frames_per_token, axis=0)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(
            (spec.seed * 7_368_787 + utt_index * 104_729 + 17) & 0x7FFFFFFF
        )
        frames = frames + rng.normal(0.0, spec.noise_sigma, size=frames.shape)
    return frames


@dataclass
class Corpus:
    domain: str
    utterances: List[Utterance]
    splits: Dict[str, str]  # utterance id -> {train, dev, test}

    def split(self, name: str) -> List[Utterance]:
        return [u for u in self.utterances if self.splits[u.id] == name]

    def texts(self, split: str, vocab: Vocab) -> List[str]:
        return [detokenize(u.reference, vocab) for u in self.split(split)]


def generate_domain(spec: DomainSpec, vocab: Vocab, feat_dim: int,
                    n_utts: int, split_ratios=(0.6, 0.2, 0.2)) -> Corpus:
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    rng = np.random.default_rng(spec.seed)
    utts: List[Utterance] = []
    splits: Dict[str, str] = {}
    n_train = int(round(split_ratios[0] * n_utts))
    n_dev = int(round(split_ratios[1] * n_utts))
    for i in range(n_utts):
        text = sample_sentence(spec, rng)
        ids = tokenize(text, vocab)
        feats = synthesize_features(ids, spec, feat_dim, utt_index=i)
        uid = f"{spec.name}-{i:04d}"
        utts.append(Utterance(id=uid, features=feats, reference=ids,
                              domain=spec.name))
        splits[uid] = ("train" if i < n_train
                       else "dev" if i < n_train + n_dev else "test")
    return Corpus(domain=spec.name, utterances=utts, splits=splits)


# -- persistence ----------------------------------------------------------


def save_corpus(dirpath, corpus: Corpus, vocab: Vocab) -> None:
    """Manifest TSV plus one feature container per utterance."""
    os.makedirs(dirpath, exist_ok=True)
    feat_dir = os.path.join(dirpath, "features")
    os.makedirs(feat_dir, exist_ok=True)
    with open(os.path.join(dirpath, "manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write("id\tdomain\tsplit\ttext\tfeatures\n")
        for u in corpus.utterances:
            rel = os.path.join("features", u.id + ".bin")
            save_container(
                os.path.join(dirpath, rel),
                [("features", "other", u.features)],
                {"utterance_id": u.id, "domain": u.domain},
            )
            fh.write(f"{u.id}\t{u.domain}\t{corpus.splits[u.id]}\t"
                     f"{detokenize(u.reference, vocab)}\t{rel}\n")


def load_corpus(dirpath, vocab: Vocab) -> Corpus:
    utts: List[Utterance] = []
    splits: Dict[str, str] = {}
    domain = ""
    with open(os.path.join(dirpath, "manifest.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            uid, domain, split, text, rel = line.rstrip("\n").split("\t")
            entries, _ = load_container(os.path.join(dirpath, rel))
            feats = entries[0][2]
            utts.append(Utterance(id=uid, features=feats,
                                  reference=tokenize(text, vocab),
                                  domain=domain))
            splits[uid] = split
    return Corpus(domain=domain, utterances=utts, splits=splits)


def unigram_kl(texts_a: Sequence[str], texts_b: Sequence[str]) -> float:
    """KL(a || b) over word unigrams with add-one smoothing."""
    def dist(texts, support):
        counts = {w: 1.0 for w in support}
        for t in texts:
            for w in t.split():
                counts[w] += 1.0
        total = sum(counts.values())
        return {w: c / total for w, c in counts.items()}

    support = sorted({w for t in list(texts_a) + list(texts_b) for w in t.split()})
    pa = dist(texts_a, support)
    pb = dist(texts_b, support)
    return float(sum(pa[w] * np.log(pa[w] / pb[w]) for w in support))
