"""Tokenization and token filtering shared by documents and queries.

The rules reproduce Terrier's default English pipeline without stemming:
anything that is not an ASCII letter or digit separates tokens, tokens are
lowercased, and tokens are dropped when they are stop words, carry more
than four digits, or contain a run of four or more identical characters.
"""

from __future__ import annotations

import re
from importlib import resources
from typing import Iterable, Sequence

MAX_DIGITS = 4
MAX_RUN = 3

_SEPARATOR = re.compile(r"[^A-Za-z0-9]+")
_LONG_RUN = re.compile(r"(.)\1{%d,}" % MAX_RUN)


class StopList(frozenset):
    """Immutable set of lowercase stop words."""

    def __new__(cls, words: Iterable[str] = ()):
        return super().__new__(cls, (w.strip().lower() for w in words if w.strip()))

    @classmethod
    def parse(cls, text: str) -> "StopList":
        """Parse the one-word-per-line format; ``#`` lines and blanks are ignored."""
        words = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            words.append(line)
        return cls(words)

    @classmethod
    def from_file(cls, path) -> "StopList":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    @classmethod
    def default(cls) -> "StopList":
        text = resources.files("wetlm").joinpath("data/stopwords.txt").read_text("utf-8")
        return cls.parse(text)


EMPTY_STOPLIST = StopList()


def tokenize(raw: str) -> list[str]:
    """Split ``raw`` on every non-alphanumeric ASCII character and lowercase.

    Splitting happens before lowercasing so that non-ASCII characters whose
    lowercase form is ASCII (Kelvin sign, dotted capital I) still separate.
    """
    return [tok.lower() for tok in _SEPARATOR.split(raw) if tok]


def is_noise(token: str) -> bool:
    """True if the token has more than four digits or a run of four identical chars."""
    digits = sum(ch.isdigit() for ch in token)
    if digits > MAX_DIGITS:
        return True
    return _LONG_RUN.search(token) is not None


def filter_tokens(tokens: Sequence[str], stoplist: StopList = EMPTY_STOPLIST) -> list[str]:
    # stop words first, then the noise rules; order of survivors is kept
    kept = [t for t in tokens if t not in stoplist]
    return [t for t in kept if not is_noise(t)]


def preprocess(raw: str, stoplist: StopList = EMPTY_STOPLIST) -> list[str]:
    return filter_tokens(tokenize(raw), stoplist)
