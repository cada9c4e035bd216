"""Whole-collection scoring by direct scan, top-k ranking and batch runs.

For each query term the scorer computes, once, the translated count
``sum_u p_t(q|u) c(u, d)`` for every document by a sparse matrix-vector
product over the direct index. Those vectors do not depend on mu, so a mu
sweep reuses them and only redoes the cheap per-document mixing.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .embeddings import NeighborIndex
from .errors import ConfigError
from .index import DirectIndex
from .models import ModelKind, ModelParams, Query, ScoredDoc, mi_cells

logger = logging.getLogger(__name__)


# -- translation sources: column(q) lists (u, p_t(q|u)) with nonzero mass ---

class IdentityTranslation:
    name = "identity"

    def column(self, term: str) -> list[tuple[str, float]]:
        return [(term, 1.0)]


class CosineTranslation:
    """Embedding translation; terms without a vector translate only to themselves."""

    name = "cosine"

    def __init__(self, nbr: NeighborIndex):
        self.nbr = nbr

    def column(self, term: str) -> list[tuple[str, float]]:
        if term not in self.nbr:
            return [(term, 1.0)]
        ids, sims = self.nbr.neighbor_arrays(term)
        terms = self.nbr.terms
        z = self.nbr.normalizers
        # membership is symmetric, so q's own list enumerates every u with cos(q, u) >= T
        return [(terms[j], float(s) / float(z[j])) for j, s in zip(ids, sims)]


class AlphaTranslation(CosineTranslation):
    name = "cosine-alpha"

    def __init__(self, nbr: NeighborIndex, alpha: float):
        super().__init__(nbr)
        self.alpha = alpha

    def column(self, term: str) -> list[tuple[str, float]]:
        a = self.alpha
        return [(u, a + (1.0 - a) * p if u == term else (1.0 - a) * p)
                for u, p in super().column(term)]


class MITranslation:
    """Mutual-information translation over document co-presence.

    Candidates for ``u`` are the terms sharing a document with it.
    """

    name = "mutual-information"

    def __init__(self, index: DirectIndex):
        self.index = index
        self._z: dict[int, float] = {}
        self._lock = threading.Lock()

    def _mi_row(self, tid: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.index
        co = idx.co_presence(tid)
        cand = np.nonzero(co)[0]
        n_u = int(idx.term_presence[tid])
        n = len(idx)
        vals = np.array([mi_cells(int(idx.term_presence[w]), n_u, int(co[w]), n) for w in cand])
        return cand, vals

    def normalizer(self, tid: int) -> float:
        with self._lock:
            z = self._z.get(tid)
        if z is None:
            _, vals = self._mi_row(tid)
            z = math.fsum(vals)
            with self._lock:
                self._z[tid] = z
        return z

    def column(self, term: str) -> list[tuple[str, float]]:
        idx = self.index
        tid = idx.term_id.get(term)
        if tid is None:
            return []
        # I(q, u) is symmetric, so q's own row gives the numerators for every u
        cand, vals = self._mi_row(tid)
        out = []
        for u, i_qu in zip(cand, vals):
            z = self.normalizer(int(u))
            if z == 0.0:
                p = 1.0 if u == tid else 0.0
            else:
                p = i_qu / z
            if p > 0.0:
                out.append((idx.vocab[u], float(p)))
        return out


def translation_for(params: ModelParams, index: DirectIndex, nbr: NeighborIndex | None):
    kind = params.kind
    if kind.uses_embeddings:
        if nbr is None:
            raise ConfigError(f"model {kind.value} requires a neighbour index")
        if kind is ModelKind.WETLM_ALPHA:
            return AlphaTranslation(nbr, params.alpha)
        return CosineTranslation(nbr)
    if kind is ModelKind.TLM_MI:
        return MITranslation(index)
    return IdentityTranslation()


# -- scoring -----------------------------------------------------------------

@dataclass(frozen=True)
class TermColumn:
    """Per-term document data: where the translated count is nonzero, and its value."""

    p_coll: float
    docs: np.ndarray
    counts: np.ndarray  # translated count sum_u p_t(q|u) c(u, d) at ``docs``


class Scorer:
    """Scores queries against every document of ``index``.

    The Dirichlet kinds use identity translation; ``translation`` may be
    overridden (e.g. to check that a translation model reduces to Dirichlet).
    """

    def __init__(self, index: DirectIndex, translation=None):
        self.index = index
        self.translation = translation or IdentityTranslation()
        self._columns: dict[str, TermColumn] = {}
        self._lengths = index.doc_lengths.astype(np.float64)

    def column(self, term: str) -> TermColumn:
        col = self._columns.get(term)
        if col is None:
            col = self._build_column(term)
            self._columns[term] = col
        return col

    def _build_column(self, term: str) -> TermColumn:
        idx = self.index
        tid = idx.term_id.get(term)
        p_coll = float(idx.term_totals[tid]) / idx.total_tokens if tid is not None else 0.0
        weights = np.zeros(len(idx.vocab))
        any_mass = False
        for u, p in self.translation.column(term):
            j = idx.term_id.get(u)
            if j is not None and p > 0.0:
                weights[j] = p
                any_mass = True
        if not any_mass:
            return TermColumn(p_coll, np.zeros(0, np.int64), np.zeros(0))
        num = idx.matrix @ weights
        docs = np.nonzero(num > 0.0)[0]
        return TermColumn(p_coll, docs, num[docs])

    def usable_terms(self, query: Query, kind: ModelKind) -> list[str]:
        """Query terms that contribute to at least one document score."""
        out = []
        for t in query.terms:
            col = self.column(t)
            if col.p_coll > 0.0 or (kind.is_translation and len(col.docs)):
                out.append(t)
        return out

    def scores(self, query: Query, params: ModelParams) -> np.ndarray:
        kind = params.kind
        mu = params.mu
        lengths = self._lengths
        n = len(lengths)
        lam = lengths / (mu + lengths)
        smooth = mu / (mu + lengths)
        total = np.zeros(n)

        if kind in (ModelKind.DIRICHLET_CLOSED, ModelKind.DIRICHLET_TERRIER):
            penalty = np.log(mu / (mu + lengths))
            usable = 0
            for t in query.terms:
                col = self.column(t)
                if col.p_coll == 0.0:
                    continue
                usable += 1
                contrib = np.zeros(n)
                matched = np.log(1.0 + col.counts / (mu * col.p_coll))
                if kind is ModelKind.DIRICHLET_TERRIER:
                    matched = matched + penalty[col.docs]
                contrib[col.docs] = matched
                total += contrib
            if kind is ModelKind.DIRICHLET_CLOSED:
                total += usable * penalty
            return total

        fallback = params.fallback and kind.is_translation
        with np.errstate(divide="ignore"):
            for t in query.terms:
                col = self.column(t)
                p_c = col.p_coll
                if p_c == 0.0 and not len(col.docs):
                    continue
                if kind is ModelKind.DIRICHLET and p_c == 0.0:
                    continue
                # documents without translated mass
                if fallback:
                    base = np.full(n, np.log(p_c)) if p_c > 0.0 else np.zeros(n)
                else:
                    base = np.log(lam * 0.0 + smooth * p_c) if p_c > 0.0 else np.zeros(n)
                d = col.docs
                trans = col.counts / lengths[d]
                if fallback and p_c == 0.0:
                    prob = trans
                else:
                    prob = lam[d] * trans + smooth[d] * p_c
                base[d] = np.log(prob)
                total += base
        return total

    def rank(self, query: Query, params: ModelParams) -> list[ScoredDoc]:
        if not query.terms:
            logger.warning("query %s has no terms after preprocessing; empty result", query.qid)
            return []
        if not self.usable_terms(query, params.kind):
            logger.warning("query %s: no term occurs in the collection; all scores are 0", query.qid)
        return top_k(self.index, self.scores(query, params), params.top_k)


def top_k(index: DirectIndex, scores: np.ndarray, k: int) -> list[ScoredDoc]:
    """Highest scores first, ties by ascending docno, at most ``k`` entries."""
    n = len(scores)
    if n == 0:
        return []
    if n > k:
        kth = -np.partition(-scores, k - 1)[k - 1]
        cand = np.nonzero(scores >= kth)[0]
    else:
        cand = np.arange(n)
    order = cand[np.lexsort((index.docno_order[cand], -scores[cand]))][:k]
    return [ScoredDoc(index.docnos[i], float(scores[i]), r) for r, i in enumerate(order, 1)]


def rank_documents(query: Query, index: DirectIndex, nbr: NeighborIndex | None,
                   params: ModelParams) -> list[ScoredDoc]:
    scorer = Scorer(index, translation_for(params, index, nbr))
    return scorer.rank(query, params)


def run_queries(scorer: Scorer, queries: Sequence[Query], params: ModelParams,
                workers: int = 1) -> dict[str, list[ScoredDoc]]:
    """Rank every query; the result is keyed and ordered by the input order."""
    if workers > 1:
        # fill the column cache serially so worker threads only read it
        for q in queries:
            for t in q.terms:
                scorer.column(t)
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda q: scorer.rank(q, params), queries))
    else:
        results = [scorer.rank(q, params) for q in queries]
    return {q.qid: r for q, r in zip(queries, results)}
