"""Built-in toy domains: six in-domain grammars plus one held-out.

All words are spelled over a 12-letter alphabet so the character
vocabulary stays small (blank + 12 letters + word separator).  The six
domains mirror a multi-domain test suite: two conversational, one voice
query, two dictation, one read-text; `tales` is the held-out
out-of-domain grammar.

The six in-domain grammars draw on one shared word pool with very
different usage frequencies and collocations, so the shift between them
is distributional (novel word n-grams, skewed unigram mass) rather than
out-of-vocabulary; `tales` alone introduces unseen words.
"""

from __future__ import annotations

from typing import Dict, List

from .corpus import DomainSpec, make_spec
from .transducer import Vocab

ALPHABET = tuple("acehilmnorst")


def make_vocab() -> Vocab:
    return Vocab.from_alphabet(ALPHABET)


def _uniform(seqs: List[str]):
    return [(1.0, tuple(s.split())) for s in seqs]


def _weighted(pairs):
    return [(w, tuple(s.split())) for w, s in pairs]


def builtin_domain_specs(noise_sigma: float, frames_per_token: int,
                         seed: int) -> Dict[str, DomainSpec]:
    """The six in-domain grammars plus the held-out one, seeded per domain."""
    grammars = {
        # conversational: greetings and call-backs
        "call": {
            "S": _weighted([(3.0, "GREET"), (3.0, "DO WHEN"), (2.0, "DO"),
                            (1.0, "GREET DO WHEN")]),
            "GREET": _uniform(["hello there", "hello miss", "hello team"]),
            "DO": _weighted([(2.0, "call WHO"), (1.0, "chat")]),
            "WHO": _uniform(["me", "them", "the team", "miss"]),
            "WHEN": _uniform([
                "soon", "later", "at ten", "not so soon",
                "some other time", "on the train",
            ]),
        },
        # conversational: planning around the team
        # conversational: planning around the team ("the team to call"
        # phrasing — same words as the source, different construction)
        "meeting": {
            "S": _weighted([(3.0, "P"), (3.0, "P TAIL")]),
            "P": _weighted([
                (3.0, "the team to MV MWHEN"), (2.0, "the team MWHEN"),
                (1.0, "the list to recall"),
            ]),
            "MV": _uniform(["call", "note", "recall"]),
            "MWHEN": _uniform(["at ten", "later", "so soon",
                               "some other time"]),
            "TAIL": _uniform(["not so soon", "so soon", "at ten", "later"]),
        },
        # voice query: trains and times (time phrase fronts the modifier:
        # "later at ten", "soon at ten")
        "search": {
            "S": _weighted([(2.0, "Q"), (3.0, "Q QWHERE")]),
            "Q": _weighted([
                (3.0, "the train TWHEN"), (2.0, "a train to QWHO"),
                (2.0, "some other train"), (1.0, "train time"),
            ]),
            "QWHO": _uniform(["me", "them", "the team"]),
            "TWHEN": _uniform(["later at ten", "soon at ten", "there at ten",
                               "later"]),
            "QWHERE": _uniform(["on the train", "at ten", "there",
                                "some other time"]),
        },
        # dictation: notes and item lists (items always in pantry order)
        "keyboard": {
            "S": _weighted([(3.0, "NOTE"), (2.0, "NOTE NOTE")]),
            "NOTE": _weighted([
                (2.0, "note to KWHO"), (2.0, "ITEMS"), (1.0, "a list item"),
                (1.0, "names to recall"), (1.0, "call them later"),
            ]),
            "KWHO": _uniform(["the team", "me", "them"]),
            "ITEMS": _uniform(["salt rice oats", "salt rice", "rice oats"]),
        },
        # dictation: short correspondence
        # dictation: short correspondence (terse register — the "to" of
        # the source's "note to X" is dropped: "note me soon")
        "email": {
            "S": _weighted([(2.0, "L"), (3.0, "L CLOSE")]),
            "L": _weighted([
                (2.0, "note EWHO EWHEN"), (2.0, "miss EWHO"),
                (1.0, "call me EWHEN"), (1.0, "chat EWHEN"),
            ]),
            "EWHO": _uniform(["me", "them"]),
            "EWHEN": _uniform(["soon", "later", "some other time"]),
            "CLOSE": _uniform(["chat soon", "miss me not", "so soon",
                               "chat later"]),
        },
        # read text: pantry inventory (items in any order, unlike the
        # source's fixed pantry order)
        "common": {
            "S": _weighted([(3.0, "C"), (2.0, "C C")]),
            "C": _weighted([
                (3.0, "CITEMS"), (2.0, "CITEMS on the list"),
                (1.0, "a list item"), (1.0, "the other item"),
            ]),
            "CITEMS": _weighted([(2.0, "CI CI"), (1.0, "CI CI CI")]),
            "CI": _uniform(["salt", "rice", "oats"]),
        },
        # held-out, out-of-domain
        "tales": {
            "S": _weighted([(3.0, "OPENING"), (2.0, "OPENING SCENE")]),
            "OPENING": _uniform([
                "a silent sailor", "the calm storm", "an ancient tale",
                "three small sails", "the lost shore",
            ]),
            "SCENE": _uniform([
                "came to shore", "sails in the mist", "calls to the sea",
            ]),
        },
    }
    specs = {}
    for i, (name, grammar) in enumerate(grammars.items()):
        specs[name] = make_spec(name, grammar, noise_sigma=noise_sigma,
                                frames_per_token=frames_per_token,
                                seed=seed * 131 + i, acoustic_seed=seed)
    return specs


IN_DOMAIN = ("call", "meeting", "search", "keyboard", "email", "common")
HELD_OUT = "tales"
