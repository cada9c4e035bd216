import io
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wetlm.embeddings import (EmbeddingTable, NeighborIndex, build_neighbor_index, cosine,
                              coverage_stats, load_embeddings, save_embeddings)
from wetlm.errors import ConfigError, EmbeddingFormatError, FormatError
from wetlm.index import DirectIndex, Document

from synth import clustered_embeddings, vocab_words


def w2v_bytes(entries, dim, count=None, newline=True):
    out = [f"{len(entries) if count is None else count} {dim}\n".encode()]
    for word, vec in entries:
        out.append(word.encode() + b" " + struct.pack(f"<{dim}f", *vec))
        if newline:
            out.append(b"\n")
    return b"".join(out)


def test_load_filters_vocabulary():
    raw = w2v_bytes([("Cat", [1, 2, 3]), ("dog", [0, 1, 0])], 3)
    table = load_embeddings(io.BytesIO(raw), {"cat"})
    assert table.dim == 3 and table.terms == ["cat"]
    np.testing.assert_array_equal(table.vector("cat"), [1, 2, 3])


def test_load_without_trailing_newlines():
    raw = w2v_bytes([("a", [1, 0]), ("b", [0, 1])], 2, newline=False)
    assert load_embeddings(io.BytesIO(raw)).terms == ["a", "b"]


def test_lowercase_collision_first_wins():
    raw = w2v_bytes([("Paris", [1, 0]), ("paris", [0, 1])], 2)
    table = load_embeddings(io.BytesIO(raw), {"paris"})
    np.testing.assert_array_equal(table.vector("paris"), [1, 0])
    assert table.collisions == 1


def test_zero_vector_rejected_and_counted():
    raw = w2v_bytes([("z", [0, 0]), ("a", [1, 0])], 2)
    table = load_embeddings(io.BytesIO(raw))
    assert table.terms == ["a"] and table.zero_vectors == 1


@pytest.mark.parametrize("raw, match", [
    (w2v_bytes([("a", [1, 0])], 2, count=2), "expected 2 entries"),
    (w2v_bytes([("a", [1, 0])], 2)[:-5], "truncated vector"),
    (b"2 0\n", "invalid header"),
    (b"two three\n", "bad header"),
    (w2v_bytes([("a", [1, 0]), ("b", [0, 1])], 2, count=1), "data after"),
])
def test_format_errors(raw, match):
    with pytest.raises(EmbeddingFormatError, match=match) as err:
        load_embeddings(io.BytesIO(raw))
    assert "byte" in str(err.value)


def test_save_load_round_trip(rng):
    table = clustered_embeddings(rng, vocab_words(50), 12)
    buf = io.BytesIO()
    save_embeddings(table, buf)
    back = load_embeddings(io.BytesIO(buf.getvalue()))
    assert back.terms == table.terms
    np.testing.assert_array_equal(back.matrix, table.matrix)


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-4)
    with pytest.raises(ValueError):
        cosine([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])


vectors = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3)


@given(vectors, vectors, st.floats(1e-3, 1e3))
def test_cosine_symmetry_and_scale(a, b, lam):
    assert cosine(a, b) == cosine(b, a)
    assert -1.0 <= cosine(a, b) <= 1.0
    assert cosine([lam * x for x in a], b) == pytest.approx(cosine(a, b), abs=1e-9)


def three_term_table():
    # cos(a,b) = 0.8, cos(a,c) = 0.3, cos(b,c) = 0
    a = [1.0, 0.0, 0.0]
    b = [0.8, 0.6, 0.0]
    c = [0.3, -0.4, math.sqrt(1 - 0.09 - 0.16)]
    return EmbeddingTable.from_vectors({"a": a, "b": b, "c": c})


def test_three_term_fixture():
    table = three_term_table()
    assert cosine(table.vector("a"), table.vector("b")) == pytest.approx(0.8, abs=1e-6)
    nbr = build_neighbor_index(table, ["a", "b", "c"], 0.7)
    got = dict(nbr.neighbors("a"))
    assert set(got) == {"a", "b"}
    assert got["a"] == 1.0 and got["b"] == pytest.approx(0.8, abs=1e-6)
    assert nbr.normalizer("a") == pytest.approx(1.8, abs=1e-6)
    assert nbr.neighbors("c") == [("c", 1.0)]


def test_threshold_one_gives_singletons(rng):
    terms = vocab_words(200)
    table = EmbeddingTable(16, terms, rng.normal(size=(200, 16)))
    nbr = build_neighbor_index(table, terms, 1.0)
    for t in terms:
        assert nbr.neighbors(t) == [(t, 1.0)]
        assert nbr.normalizer(t) == 1.0


def test_vocab_restriction():
    table = three_term_table()
    nbr = build_neighbor_index(table, ["a", "c", "missing"], 0.2)
    assert nbr.terms == ["a", "c"]
    assert "b" not in dict(nbr.neighbors("a"))


@pytest.mark.parametrize("t", [0.0, -0.5, 1.5])
def test_invalid_threshold(t):
    with pytest.raises(ConfigError):
        build_neighbor_index(three_term_table(), ["a"], t)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(8, 40), st.sampled_from([0.3, 0.5, 0.7, 0.9]))
def test_neighbor_invariants(seed, dim, threshold):
    rng = np.random.default_rng(seed)
    terms = vocab_words(120)
    table = clustered_embeddings(rng, terms, dim, n_clusters=10)
    nbr = build_neighbor_index(table, terms, threshold, block=17)
    for u in nbr.terms:
        lst = dict(nbr.neighbors(u))
        assert lst[u] == 1.0
        assert all(threshold <= s <= 1 + 1e-9 for s in lst.values())
        assert nbr.normalizer(u) >= 1.0
        # independent summation
        assert nbr.normalizer(u) == pytest.approx(sum(sorted(lst.values())), abs=1e-9)
        for w, s in lst.items():
            assert nbr.similarity(u, w) == s  # symmetric membership and value
        # brute force over the scalar cosine
        brute = {w for w in nbr.terms if w == u or cosine(table.vector(u), table.vector(w)) >= threshold + 1e-9}
        assert brute <= set(lst)
        assert set(lst) <= {w for w in nbr.terms
                            if w == u or cosine(table.vector(u), table.vector(w)) >= threshold - 1e-9}


def test_worker_count_does_not_change_result(rng):
    terms = vocab_words(700)
    table = clustered_embeddings(rng, terms, 24)
    one = io.BytesIO()
    build_neighbor_index(table, terms, 0.6, workers=1, block=64).save(one)
    many = io.BytesIO()
    build_neighbor_index(table, terms, 0.6, workers=4, block=64).save(many)
    assert one.getvalue() == many.getvalue()


def test_neighbor_cache_round_trip(rng):
    terms = vocab_words(80)
    nbr = build_neighbor_index(clustered_embeddings(rng, terms, 10), terms, 0.5, key=b"k" * 32)
    buf = io.BytesIO()
    nbr.save(buf)
    data = buf.getvalue()
    assert data[:4] == b"LTNB"
    back = NeighborIndex.load(io.BytesIO(data))
    assert back.threshold == 0.5 and back.key == b"k" * 32 and back.terms == nbr.terms
    for t in terms:
        assert back.neighbors(t) == nbr.neighbors(t)
        assert back.normalizer(t) == nbr.normalizer(t)
    with pytest.raises(FormatError):
        NeighborIndex.load(io.BytesIO(data[:-1]))


def test_coverage_stats():
    docs = [Document.from_tokens("1", ["a", "a", "a", "b"]), Document.from_tokens("2", ["c"])]
    stats = DirectIndex.from_documents(docs).stats
    table = EmbeddingTable.from_vectors({"a": [1, 0], "q": [0, 1]})
    rep = coverage_stats(table, stats, [["a", "x"], ["y"], ["q", "q"], ["a"]])
    assert rep.vocab_types == pytest.approx(1 / 3)
    assert rep.tokens == pytest.approx(3 / 5)
    assert rep.query_terms == pytest.approx(4 / 6)
    assert rep.uncovered_queries == pytest.approx(1 / 4)

    full = EmbeddingTable.from_vectors({"a": [1, 0], "b": [0, 1], "c": [1, 1]})
    rep = coverage_stats(full, stats, [["a"], ["b", "c"]])
    assert (rep.vocab_types, rep.tokens, rep.query_terms, rep.uncovered_queries) == (1.0, 1.0, 1.0, 0.0)
