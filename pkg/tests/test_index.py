import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wetlm.errors import FormatError, IngestError
from wetlm.index import CollectionStats, DirectIndex, Document, collection_prob, ingest_trec, pair_presence
from wetlm.text import StopList

from synth import random_index


def test_tiny_fixture(tiny):
    s = tiny.stats
    assert s.total_tokens == 5
    assert set(s.term_counts) == {"a", "b", "c"}
    assert s.term_counts == {"a": 2, "b": 2, "c": 1}
    assert s.doc_presence == {"a": 1, "b": 2, "c": 1}
    assert s.avdl == 2.5
    d1 = tiny.document(0)
    assert d1 == Document("d1", {"a": 2, "b": 1}, 3)


def test_empty_stream():
    idx = ingest_trec(io.BytesIO(b""))
    assert len(idx) == 0 and idx.stats.total_tokens == 0
    assert collection_prob(idx.stats, "a") == 0.0


def test_collection_prob(tiny):
    assert collection_prob(tiny.stats, "a") == pytest.approx(0.4)
    assert collection_prob(tiny.stats, "zzz") == 0.0
    one = DirectIndex.from_documents([Document.from_tokens("x", ["t", "t"])])
    assert collection_prob(one.stats, "t") == 1.0


def test_pair_presence(tiny):
    assert pair_presence(tiny, "b", "a") == (2, 1, 1, 2)
    n_w, n_u, n_wu, _ = pair_presence(tiny, "b", "b")
    assert n_w == n_u == n_wu == 2
    assert pair_presence(tiny, "a", "c")[2] == 0


def test_empty_documents_kept():
    idx = ingest_trec(io.BytesIO(b"<DOC><DOCNO>e</DOCNO> the of </DOC><DOC><DOCNO>f</DOCNO>x</DOC>"),
                      StopList(["the", "of"]))
    assert idx.docnos == ["e", "f"]
    assert list(idx.doc_lengths) == [0, 1]


def test_tags_case_and_whitespace_insensitive():
    raw = b"< doc >\n<docno>A-1</DOCNO><title>Hello&amp;World</title></ doc >"
    idx = ingest_trec(io.BytesIO(raw))
    assert idx.docnos == ["A-1"]
    assert idx.document(0).counts == {"hello": 1, "world": 1}


def test_records_across_chunk_boundaries():
    recs = b"".join(b"<DOC><DOCNO>d%d</DOCNO> alpha beta%d </DOC>\n" % (i, i) for i in range(200))
    from wetlm.index import iter_trec_records
    small = list(iter_trec_records(io.BytesIO(recs), chunk_size=7))
    big = list(iter_trec_records(io.BytesIO(recs)))
    assert [(r.docno, r.text.split(), r.offset) for r in small] == \
           [(r.docno, r.text.split(), r.offset) for r in big]
    assert len(small) == 200
    assert small[1].offset == recs.index(b"<DOC><DOCNO>d1<")


@pytest.mark.parametrize("raw, message", [
    (b"<DOC> text </DOC>", "without <DOCNO>"),
    (b"<DOC><DOCNO>x</DOCNO> text", "unterminated"),
    (b"<DOC><DOCNO>x</DOCNO> a <DOC><DOCNO>y</DOCNO></DOC>", "nested"),
    (b"junk </DOC>", "without opening"),
    (b"<DOC><DOCNO>x</DOCNO></DOC><DOC><DOCNO>x</DOCNO></DOC>", "duplicate"),
])
def test_malformed_records(raw, message):
    with pytest.raises(IngestError, match=message) as err:
        ingest_trec(io.BytesIO(raw))
    assert "byte" in str(err.value)


def test_error_names_offset_and_docno():
    raw = b"<DOC><DOCNO>ok</DOCNO></DOC>\n<DOC><DOCNO>bad</DOCNO> text"
    with pytest.raises(IngestError) as err:
        ingest_trec(io.BytesIO(raw))
    assert err.value.offset == raw.index(b"<DOC><DOCNO>bad")
    assert err.value.docno == "bad"


def _stats_equal(a: CollectionStats, b: CollectionStats):
    assert a.term_counts == b.term_counts
    assert a.doc_presence == b.doc_presence
    assert a.total_tokens == b.total_tokens and a.doc_count == b.doc_count


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdefg"), max_size=8), max_size=12))
def test_stats_recomputation_and_invariants(token_lists):
    docs = [Document.from_tokens(f"d{i}", toks) for i, toks in enumerate(token_lists)]
    idx = DirectIndex.from_documents(docs)
    _stats_equal(idx.stats, CollectionStats.from_documents(docs))
    _stats_equal(idx.stats, CollectionStats.from_documents(idx.documents))
    s = idx.stats
    assert s.total_tokens == sum(s.term_counts.values())
    for t in s.term_counts:
        assert s.doc_presence[t] <= s.doc_count
        assert s.term_counts[t] >= s.doc_presence[t]
    for d in idx.documents:
        assert d.length == sum(d.counts.values())
        assert all(c > 0 for c in d.counts.values())
    if s.total_tokens:
        assert math.fsum(collection_prob(s, t) for t in s.term_counts) == pytest.approx(1.0, abs=1e-12)
        assert s.avdl == s.total_tokens / s.doc_count


def test_snapshot_round_trip(rng):
    idx = random_index(rng, n_docs=200, n_terms=300, empty_docs=3)
    buf = io.BytesIO()
    idx.save(buf)
    first = buf.getvalue()
    assert first[:4] == b"LTIX"
    back = DirectIndex.load(io.BytesIO(first))
    assert back.docnos == idx.docnos and back.vocab == idx.vocab
    np.testing.assert_array_equal(back.counts, idx.counts)
    np.testing.assert_array_equal(back.doc_ptr, idx.doc_ptr)
    _stats_equal(back.stats, idx.stats)
    again = io.BytesIO()
    back.save(again)
    assert again.getvalue() == first


def test_ingest_serialize_ingest_fixed_point():
    raw = b"<DOC><DOCNO>b</DOCNO>x y x</DOC><DOC><DOCNO>a</DOCNO>z</DOC><DOC><DOCNO>c</DOCNO></DOC>"
    one, two = io.BytesIO(), io.BytesIO()
    ingest_trec(io.BytesIO(raw)).save(one)
    DirectIndex.load(io.BytesIO(one.getvalue())).save(two)
    assert one.getvalue() == two.getvalue()
    ingest_trec(io.BytesIO(raw)).save(three := io.BytesIO())
    assert three.getvalue() == one.getvalue()


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-3],
    lambda b: b[:4] + b"\x02" + b[5:],
])
def test_snapshot_corruption_detected(tiny, mutate):
    buf = io.BytesIO()
    tiny.save(buf)
    with pytest.raises(FormatError):
        DirectIndex.load(io.BytesIO(mutate(buf.getvalue())))
