"""Query-likelihood scoring functions, one document at a time.

These are the reference formulas. :mod:`wetlm.ranking` evaluates the same
models over a whole index at once and is tested against this module.
All logarithms are natural.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .embeddings import NeighborIndex
from .errors import ConfigError
from .index import CollectionStats, DirectIndex, Document, collection_prob, pair_presence


class ModelKind(str, enum.Enum):
    DIRICHLET = "dirichlet"
    DIRICHLET_CLOSED = "dirichlet-closed"
    DIRICHLET_TERRIER = "terrier"
    TLM_MI = "tlm-mi"
    WETLM = "wetlm"
    WETLM_ALPHA = "wetlm-alpha"

    @property
    def uses_embeddings(self) -> bool:
        return self in (ModelKind.WETLM, ModelKind.WETLM_ALPHA)

    @property
    def is_translation(self) -> bool:
        return self in (ModelKind.TLM_MI, ModelKind.WETLM, ModelKind.WETLM_ALPHA)


@dataclass(frozen=True)
class ModelParams:
    """Model choice and hyper-parameters.

    ``fallback`` turns on the piecewise rule for translation models: when
    the translated probability or the collection probability of a query
    term is zero, the other one is used alone instead of the mixture, and
    the term is skipped when both are zero. With ``fallback=False`` the
    plain mixture is used and zero-probability terms are skipped.
    """

    kind: ModelKind = ModelKind.DIRICHLET
    mu: float = 44.0
    threshold: float = 0.7
    alpha: float = 0.45
    top_k: int = 1000
    fallback: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not self.mu > 0:
            raise ConfigError(f"mu must be > 0, got {self.mu}")
        if self.kind.uses_embeddings and not 0 < self.threshold <= 1:
            raise ConfigError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.kind is ModelKind.WETLM_ALPHA and not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class Query:
    qid: str
    terms: tuple[str, ...]

    def __init__(self, qid: str, terms: Iterable[str]):
        object.__setattr__(self, "qid", qid)
        object.__setattr__(self, "terms", tuple(terms))


@dataclass(frozen=True)
class ScoredDoc:
    docno: str
    score: float
    rank: int


# -- Dirichlet ---------------------------------------------------------------

def mixture(translated: float, p_coll: float, length: int, mu: float) -> float:
    """Dirichlet interpolation of a document-side probability with p(w|C)."""
    if length == 0:
        return p_coll
    return (length / (mu + length)) * translated + (mu / (mu + length)) * p_coll


def dirichlet_term_prob(term: str, doc: Document, stats: CollectionStats, mu: float) -> float:
    ml = doc.counts.get(term, 0) / doc.length if doc.length else 0.0
    return mixture(ml, collection_prob(stats, term), doc.length, mu)


def dirichlet_rsv_closed(query: Query, doc: Document, stats: CollectionStats, mu: float) -> float:
    """Matched-terms-only rank formula plus a length penalty counted once per query term.

    Terms unknown to the collection are ignored, both in the matched sum and
    in the query length, so the result stays rank-equivalent to the log-sum.
    """
    total = 0.0
    usable = 0
    for term in query.terms:
        p_c = collection_prob(stats, term)
        if p_c == 0.0:
            continue
        usable += 1
        c = doc.counts.get(term, 0)
        if c > 0:
            total += math.log(1.0 + c / (mu * p_c))
    return total + usable * math.log(mu / (mu + doc.length))


def terrier_rsv(query: Query, doc: Document, stats: CollectionStats, mu: float) -> float:
    """Terrier's Dirichlet: the length penalty is added once per matched term."""
    penalty = math.log(mu / (mu + doc.length))
    total = 0.0
    for term in query.terms:
        c = doc.counts.get(term, 0)
        if c > 0:
            total += math.log(1.0 + c / (mu * collection_prob(stats, term))) + penalty
    return total


# -- translation probabilities ----------------------------------------------

def mi_cells(n_w: int, n_u: int, n_wu: int, n: int) -> float:
    """Mutual information of two presence indicators from document counts."""
    if n == 0:
        return 0.0
    joint = {
        (1, 1): n_wu,
        (1, 0): n_w - n_wu,
        (0, 1): n_u - n_wu,
        (0, 0): n - n_w - n_u + n_wu,
    }
    marg_w = {1: n_w / n, 0: (n - n_w) / n}
    marg_u = {1: n_u / n, 0: (n - n_u) / n}
    total = 0.0
    for (xw, xu), count in joint.items():
        if count == 0:
            continue
        p = count / n
        total += p * math.log(p / (marg_w[xw] * marg_u[xu]))
    return max(total, 0.0)


def mi_score(index: DirectIndex, w: str, u: str) -> float:
    return mi_cells(*pair_presence(index, w, u))


def mi_candidates(index: DirectIndex, u: str) -> list[str]:
    """Terms sharing at least one document with ``u`` (``u`` included)."""
    tid = index.term_id.get(u)
    if tid is None:
        return []
    co = index.co_presence(tid)
    return [index.vocab[i] for i in np.nonzero(co)[0]]


def mi_translation_prob(index: DirectIndex, w: str, u: str,
                        candidates: Sequence[str] | None = None) -> float:
    if candidates is None:
        candidates = mi_candidates(index, u)
    if w not in candidates:
        return 0.0
    z = math.fsum(mi_score(index, c, u) for c in candidates)
    if z == 0.0:
        return 1.0 if w == u else 0.0
    return mi_score(index, w, u) / z


def cos_translation_prob(query_term: str, doc_term: str, nbr: NeighborIndex) -> float:
    """cos(q, u) / Z_u over the thresholded neighbourhood of ``doc_term``.

    A term without a vector translates only to itself.
    """
    if doc_term not in nbr:
        return 1.0 if query_term == doc_term else 0.0
    sim = nbr.similarity(query_term, doc_term)
    if sim == 0.0:
        return 0.0
    return sim / nbr.normalizer(doc_term)


def alpha_translation_prob(query_term: str, doc_term: str, nbr: NeighborIndex, alpha: float) -> float:
    p = cos_translation_prob(query_term, doc_term, nbr)
    if query_term == doc_term:
        return alpha + (1.0 - alpha) * p
    return (1.0 - alpha) * p


# -- translation language models ----------------------------------------------

TranslationFn = Callable[[str, str], float]


def identity_translation(w: str, u: str) -> float:
    return 1.0 if w == u else 0.0


def translated_prob(term: str, doc: Document, translate: TranslationFn) -> float:
    """sum over u in d of p_t(term|u) * c(u, d) / |d|."""
    if doc.length == 0:
        return 0.0
    num = math.fsum(translate(term, u) * c for u, c in doc.counts.items())
    return num / doc.length


def combine(translated: float, p_coll: float, length: int, mu: float, fallback: bool) -> float:
    """Per-term probability; 0.0 means the term is skipped."""
    if fallback:
        if translated > 0.0 and p_coll > 0.0:
            return mixture(translated, p_coll, length, mu)
        return translated if translated > 0.0 else p_coll
    return mixture(translated, p_coll, length, mu)


def tlm_term_prob(term: str, doc: Document, stats: CollectionStats, mu: float,
                  translate: TranslationFn, fallback: bool = True) -> float:
    return combine(translated_prob(term, doc, translate), collection_prob(stats, term),
                   doc.length, mu, fallback)


def wetlm_term_prob(term: str, doc: Document, stats: CollectionStats, nbr: NeighborIndex,
                    params: ModelParams) -> float:
    if params.kind is ModelKind.WETLM_ALPHA:
        alpha = params.alpha
        translate = lambda w, u: alpha_translation_prob(w, u, nbr, alpha)  # noqa: E731
    elif params.kind is ModelKind.WETLM:
        translate = lambda w, u: cos_translation_prob(w, u, nbr)  # noqa: E731
    else:
        raise ConfigError(f"wetlm_term_prob needs a WETLM kind, got {params.kind.value}")
    return tlm_term_prob(term, doc, stats, params.mu, translate, params.fallback)


def rsv_log_sum(query: Query, doc: Document, stats: CollectionStats, params: ModelParams,
                nbr: NeighborIndex | None = None, index: DirectIndex | None = None) -> float:
    """Sum of log term probabilities under ``params.kind``; zero-probability terms are skipped.

    ``nbr`` is required for the WETLM kinds and ``index`` for TLM-MI.
    """
    kind = params.kind
    if kind is ModelKind.DIRICHLET_CLOSED:
        return dirichlet_rsv_closed(query, doc, stats, params.mu)
    if kind is ModelKind.DIRICHLET_TERRIER:
        return terrier_rsv(query, doc, stats, params.mu)

    if kind is ModelKind.DIRICHLET:
        prob = lambda t: dirichlet_term_prob(t, doc, stats, params.mu)  # noqa: E731
    elif kind.uses_embeddings:
        if nbr is None:
            raise ConfigError(f"{kind.value} needs a neighbour index")
        prob = lambda t: wetlm_term_prob(t, doc, stats, nbr, params)  # noqa: E731
    else:
        if index is None:
            raise ConfigError("tlm-mi needs the document index")
        translate = _mi_translator(index)
        prob = lambda t: tlm_term_prob(t, doc, stats, params.mu, translate, params.fallback)  # noqa: E731

    total = 0.0
    for term in query.terms:
        p = prob(term)
        if p > 0.0:
            total += math.log(p)
    return total


def _mi_translator(index: DirectIndex) -> TranslationFn:
    @lru_cache(maxsize=None)
    def candidates(u: str) -> tuple[str, ...]:
        return tuple(mi_candidates(index, u))

    def translate(w: str, u: str) -> float:
        return mi_translation_prob(index, w, u, candidates(u))

    return translate
