import math

import numpy as np
import pytest

from wetlm.embeddings import build_neighbor_index
from wetlm.index import DirectIndex, Document, collection_prob
from wetlm.models import ModelKind, ModelParams, Query, rsv_log_sum
from wetlm.ranking import (AlphaTranslation, CosineTranslation, IdentityTranslation, MITranslation,
                           Scorer, rank_documents, run_queries, top_k, translation_for)

from synth import clustered_embeddings, random_index, random_queries, singleton_embeddings


def test_tiny_ranking(tiny):
    res = rank_documents(Query("1", ["a"]), tiny, None, ModelParams(ModelKind.DIRICHLET, mu=1.0))
    assert [d.docno for d in res] == ["d1", "d2"]
    assert [d.rank for d in res] == [1, 2]
    assert res[0].score == pytest.approx(math.log(0.6))
    assert res[1].score == pytest.approx(math.log(0.1333333333), rel=1e-8)


def test_ties_by_docno_and_truncation():
    docs = [Document.from_tokens(n, ["x", "y"]) for n in ["c", "a", "b", "d"]]
    idx = DirectIndex.from_documents(docs)
    res = rank_documents(Query("1", ["x"]), idx, None, ModelParams(mu=5.0, top_k=3))
    assert [d.docno for d in res] == ["a", "b", "c"]
    assert top_k(idx, np.array([1.0, 2.0, 2.0, 0.5]), 1)[0].docno == "a"


def test_empty_and_unusable_queries(tiny, caplog):
    params = ModelParams(mu=1.0)
    assert rank_documents(Query("1", []), tiny, None, params) == []
    res = rank_documents(Query("2", ["nope"]), tiny, None, params)
    assert [d.score for d in res] == [0.0, 0.0]
    assert "no term occurs" in caplog.text


def test_wetlm_requires_neighbors(tiny):
    with pytest.raises(Exception, match="neighbour"):
        rank_documents(Query("1", ["a"]), tiny, None, ModelParams(ModelKind.WETLM))


@pytest.fixture(scope="module")
def world():
    rng = np.random.default_rng(7)
    idx = random_index(rng, n_docs=150, n_terms=250, mean_len=12, empty_docs=2)
    queries = random_queries(rng, idx, n=25, oov_rate=0.15)
    terms = idx.vocab + sorted({t for q in queries for t in q.terms if t.startswith("oov")})
    table = clustered_embeddings(rng, terms, 16, n_clusters=25, noise=0.6, coverage=0.7)
    nbr = build_neighbor_index(table, terms, 0.7)
    return idx, queries, nbr


@pytest.mark.parametrize("kind", list(ModelKind))
@pytest.mark.parametrize("fallback", [True, False])
def test_engine_matches_scalar_reference(world, kind, fallback):
    idx, queries, nbr = world
    params = ModelParams(kind, mu=17.0, threshold=0.7, alpha=0.3, fallback=fallback)
    scorer = Scorer(idx, translation_for(params, idx, nbr))
    stats = idx.stats
    for q in queries[:12 if kind is ModelKind.TLM_MI else 25]:
        fast = scorer.scores(q, params)
        for i in range(0, len(idx), 7 if kind is ModelKind.TLM_MI else 1):
            ref = rsv_log_sum(q, idx.document(i), stats, params, nbr=nbr, index=idx)
            assert fast[i] == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_translation_columns_normalised(world):
    """Summing column(q) entries by u over all q recovers sum_w p(w|u) = 1."""
    idx, _, nbr = world
    for source in (CosineTranslation(nbr), AlphaTranslation(nbr, 0.4), MITranslation(idx)):
        mass = {}
        for w in idx.vocab:
            for u, p in source.column(w):
                mass[u] = mass.get(u, 0.0) + p
        # every u that is in the collection and co-occurs / has neighbours within it
        for u, total in mass.items():
            if isinstance(source, MITranslation) or all(t in idx.term_id for t, _ in nbr.neighbors(u)):
                assert total == pytest.approx(1.0, abs=1e-9), (source.name, u)


def test_wetlm_fallback_singletons_equal_terrier_plus_constant(world):
    """With the piecewise rule and self-only neighbours, WETLM is Terrier's formula
    shifted by sum_i log p(q_i|C), a per-query constant."""
    idx, queries, _ = world
    rng = np.random.default_rng(3)
    nbr = build_neighbor_index(singleton_embeddings(rng, idx.vocab), idx.vocab, 1.0)
    wet = Scorer(idx, CosineTranslation(nbr))
    ter = Scorer(idx)
    for q in queries:
        p_c = [collection_prob(idx.stats, t) for t in q.terms]
        if not all(p_c):
            continue
        a = wet.scores(q, ModelParams(ModelKind.WETLM, mu=9.0, threshold=1.0, fallback=True))
        b = ter.scores(q, ModelParams(ModelKind.DIRICHLET_TERRIER, mu=9.0))
        np.testing.assert_allclose(a - b, sum(math.log(p) for p in p_c), atol=1e-9)


def test_sweep_reuses_columns(world):
    idx, queries, nbr = world
    scorer = Scorer(idx, CosineTranslation(nbr))
    for mu in (12, 40):
        p = ModelParams(ModelKind.WETLM, mu=mu)
        fresh = Scorer(idx, CosineTranslation(nbr))
        for q in queries:
            np.testing.assert_array_equal(scorer.scores(q, p), fresh.scores(q, p))


def test_run_queries_deterministic_across_workers(world):
    idx, queries, nbr = world
    params = ModelParams(ModelKind.WETLM_ALPHA, mu=24.0, alpha=0.45, top_k=50)
    one = run_queries(Scorer(idx, translation_for(params, idx, nbr)), queries, params, workers=1)
    four = run_queries(Scorer(idx, translation_for(params, idx, nbr)), queries, params, workers=4)
    assert one == four
    assert list(one) == [q.qid for q in queries]


def test_identity_translation_column():
    assert IdentityTranslation().column("x") == [("x", 1.0)]
