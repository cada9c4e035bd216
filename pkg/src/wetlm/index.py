"""In-memory direct index over a TREC-style document collection.

Documents are stored row-wise (document -> term counts) in CSR arrays; there
is no inverted file. Every scorer scans all rows, which is what translation
models need anyway since they look at every term of every document.
"""

from __future__ import annotations

import html
import logging
import re
import struct
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Iterable, Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, IngestError
from .text import EMPTY_STOPLIST, StopList, preprocess

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"LTIX"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Document:
    docno: str
    counts: Mapping[str, int]
    length: int

    @classmethod
    def from_tokens(cls, docno: str, tokens: Sequence[str]) -> "Document":
        return cls(docno, dict(Counter(tokens)), len(tokens))


@dataclass(frozen=True)
class CollectionStats:
    term_counts: Mapping[str, int]
    doc_presence: Mapping[str, int]
    total_tokens: int
    doc_count: int

    @property
    def avdl(self) -> float:
        return self.total_tokens / self.doc_count if self.doc_count else 0.0

    @property
    def vocab_size(self) -> int:
        return len(self.term_counts)

    @classmethod
    def from_documents(cls, documents: Iterable[Document]) -> "CollectionStats":
        """Recompute statistics from scratch; used to cross-check stored stats."""
        counts: Counter = Counter()
        presence: Counter = Counter()
        total = n = 0
        for doc in documents:
            counts.update(doc.counts)
            presence.update(doc.counts.keys())
            total += doc.length
            n += 1
        return cls(dict(counts), dict(presence), total, n)


def collection_prob(stats: CollectionStats, term: str) -> float:
    """Maximum-likelihood collection probability c(term, C) / |C|."""
    if stats.total_tokens == 0:
        return 0.0
    return stats.term_counts.get(term, 0) / stats.total_tokens


class DirectIndex:
    """Immutable document-major index.

    ``vocab`` is sorted; ``term_ids[doc_ptr[i]:doc_ptr[i+1]]`` holds the
    ascending term ids of document ``i`` and ``counts`` the matching
    occurrence counts.
    """

    def __init__(self, docnos: Sequence[str], vocab: Sequence[str],
                 doc_ptr: np.ndarray, term_ids: np.ndarray, counts: np.ndarray):
        self.docnos = list(docnos)
        self.vocab = list(vocab)
        self.term_id = {t: i for i, t in enumerate(self.vocab)}
        self.doc_ptr = np.asarray(doc_ptr, dtype=np.int64)
        self.term_ids = np.asarray(term_ids, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if len(self.doc_ptr) != len(self.docnos) + 1:
            raise FormatError("doc_ptr length does not match document count")
        if len(self.term_ids) != len(self.counts) or self.doc_ptr[-1] != len(self.counts):
            raise FormatError("term/count arrays do not match doc_ptr")
        if len(self.counts) and self.counts.min() <= 0:
            raise FormatError("document term counts must be strictly positive")

        n_docs, n_terms = len(self.docnos), len(self.vocab)
        rows = np.repeat(np.arange(n_docs), np.diff(self.doc_ptr))
        self.doc_lengths = np.bincount(rows, weights=self.counts, minlength=n_docs).astype(np.int64)
        self.term_totals = np.bincount(self.term_ids, weights=self.counts, minlength=n_terms).astype(np.int64)
        self.term_presence = np.bincount(self.term_ids, minlength=n_terms).astype(np.int64)
        self.total_tokens = int(self.counts.sum())

    # -- construction -------------------------------------------------------

    @classmethod
    def from_documents(cls, documents: Iterable[Document]) -> "DirectIndex":
        return cls.from_token_counts((d.docno, d.counts) for d in documents)

    @classmethod
    def from_token_counts(cls, rows: Iterable[tuple[str, Mapping[str, int]]]) -> "DirectIndex":
        provisional: dict[str, int] = {}
        docnos: list[str] = []
        ids: list[np.ndarray] = []
        cnts: list[np.ndarray] = []
        for docno, counts in rows:
            docnos.append(docno)
            ids.append(np.fromiter((provisional.setdefault(t, len(provisional)) for t in counts),
                                   dtype=np.int64, count=len(counts)))
            cnts.append(np.fromiter(counts.values(), dtype=np.int64, count=len(counts)))

        vocab = sorted(provisional)
        remap = np.empty(len(vocab), dtype=np.int64)
        for new_id, term in enumerate(vocab):
            remap[provisional[term]] = new_id

        doc_ptr = np.zeros(len(docnos) + 1, dtype=np.int64)
        doc_ptr[1:] = np.cumsum([len(a) for a in ids])
        term_ids = np.concatenate(ids) if ids else np.zeros(0, np.int64)
        counts = np.concatenate(cnts) if cnts else np.zeros(0, np.int64)
        term_ids = remap[term_ids] if len(term_ids) else term_ids
        # sort ids within each row
        row = np.repeat(np.arange(len(docnos)), np.diff(doc_ptr))
        order = np.lexsort((term_ids, row))
        return cls(docnos, vocab, doc_ptr, term_ids[order], counts[order])

    # -- access -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.docnos)

    def document(self, i: int) -> Document:
        lo, hi = self.doc_ptr[i], self.doc_ptr[i + 1]
        counts = {self.vocab[t]: int(c) for t, c in zip(self.term_ids[lo:hi], self.counts[lo:hi])}
        return Document(self.docnos[i], counts, int(self.doc_lengths[i]))

    @property
    def documents(self) -> "_DocumentView":
        return _DocumentView(self)

    @cached_property
    def stats(self) -> CollectionStats:
        return CollectionStats(
            term_counts={t: int(c) for t, c in zip(self.vocab, self.term_totals)},
            doc_presence={t: int(c) for t, c in zip(self.vocab, self.term_presence)},
            total_tokens=self.total_tokens,
            doc_count=len(self.docnos),
        )

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Document x term count matrix (float64) sharing the CSR layout."""
        return sp.csr_matrix(
            (self.counts.astype(np.float64), self.term_ids, self.doc_ptr),
            shape=(len(self.docnos), len(self.vocab)),
        )

    @cached_property
    def _presence_csc(self) -> sp.csc_matrix:
        ones = np.ones(len(self.term_ids), dtype=np.int64)
        return sp.csr_matrix((ones, self.term_ids, self.doc_ptr),
                             shape=(len(self.docnos), len(self.vocab))).tocsc()

    @cached_property
    def docno_order(self) -> np.ndarray:
        """Position of every document when sorted by docno (for tie-breaking)."""
        order = sorted(range(len(self.docnos)), key=self.docnos.__getitem__)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        return rank

    def docs_containing(self, term: str) -> np.ndarray:
        tid = self.term_id.get(term)
        if tid is None:
            return np.zeros(0, dtype=np.int64)
        m = self._presence_csc
        return m.indices[m.indptr[tid]:m.indptr[tid + 1]]

    def co_presence(self, term_id: int) -> np.ndarray:
        """Number of documents containing both ``term_id`` and each vocabulary term."""
        m = self._presence_csc
        docs = m.indices[m.indptr[term_id]:m.indptr[term_id + 1]]
        sub = self.matrix[docs]
        return np.bincount(sub.indices, minlength=len(self.vocab)).astype(np.int64)

    # -- persistence --------------------------------------------------------

    def save(self, sink: BinaryIO) -> None:
        """Write the snapshot format (little-endian throughout).

        Layout: magic ``LTIX``, u32 version, u64 doc count, u64 vocab size,
        u64 nnz, vocab strings, docno strings (each u32 byte length + UTF-8),
        u64 doc_ptr[doc count + 1], u32 term_ids[nnz], u32 counts[nnz].
        """
        sink.write(SNAPSHOT_MAGIC)
        sink.write(struct.pack("<IQQQ", SNAPSHOT_VERSION, len(self.docnos), len(self.vocab), len(self.counts)))
        sink.write(_pack_strings(self.vocab))
        sink.write(_pack_strings(self.docnos))
        sink.write(self.doc_ptr.astype("<u8").tobytes())
        sink.write(self.term_ids.astype("<u4").tobytes())
        sink.write(self.counts.astype("<u4").tobytes())

    @classmethod
    def load(cls, source: BinaryIO) -> "DirectIndex":
        data = source.read()
        if data[:4] != SNAPSHOT_MAGIC:
            raise FormatError("not an index snapshot (bad magic)")
        if len(data) < 32:
            raise FormatError("truncated index snapshot header")
        version, n_docs, n_terms, nnz = struct.unpack_from("<IQQQ", data, 4)
        if version != SNAPSHOT_VERSION:
            raise FormatError(f"unsupported index snapshot version {version}")
        pos = 32
        vocab, pos = _unpack_strings(data, pos, n_terms)
        docnos, pos = _unpack_strings(data, pos, n_docs)
        need = 8 * (n_docs + 1) + 8 * nnz
        if len(data) - pos != need:
            raise FormatError(f"index snapshot payload size mismatch at byte {pos}")
        doc_ptr = np.frombuffer(data, "<u8", n_docs + 1, pos).astype(np.int64)
        pos += 8 * (n_docs + 1)
        term_ids = np.frombuffer(data, "<u4", nnz, pos).astype(np.int64)
        counts = np.frombuffer(data, "<u4", nnz, pos + 4 * nnz).astype(np.int64)
        return cls(docnos, vocab, doc_ptr, term_ids, counts)


class _DocumentView(Sequence):
    def __init__(self, index: DirectIndex):
        self._index = index

    def __len__(self) -> int:
        return len(self._index)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._index.document(j) for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self._index.document(i)


def pair_presence(index: DirectIndex, w: str, u: str) -> tuple[int, int, int, int]:
    """Document-presence counts (n_w, n_u, n_wu, N) for a pair of terms."""
    dw = index.docs_containing(w)
    du = index.docs_containing(u)
    both = np.intersect1d(dw, du, assume_unique=True)
    return len(dw), len(du), len(both), len(index)


def _pack_strings(items: Sequence[str]) -> bytes:
    parts = []
    for s in items:
        b = s.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    return b"".join(parts)


def _unpack_strings(data: bytes, pos: int, n: int) -> tuple[list[str], int]:
    out = []
    for _ in range(n):
        if pos + 4 > len(data):
            raise FormatError(f"truncated string table at byte {pos}")
        (size,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + size > len(data):
            raise FormatError(f"truncated string at byte {pos}")
        out.append(data[pos:pos + size].decode("utf-8"))
        pos += size
    return out, pos


# -- TREC collection parsing -------------------------------------------------

_DOC_OPEN = re.compile(rb"<\s*doc\s*>", re.IGNORECASE)
_DOC_CLOSE = re.compile(rb"<\s*/\s*doc\s*>", re.IGNORECASE)
_DOCNO = re.compile(rb"<\s*docno\s*>(.*?)<\s*/\s*docno\s*>", re.IGNORECASE | re.DOTALL)
_DOCNO_TAG = re.compile(rb"<\s*/?\s*docno\s*>", re.IGNORECASE)
_TAG = re.compile(r"<[^>]*>")


@dataclass
class TrecRecord:
    docno: str
    text: str
    offset: int


def iter_trec_records(source: BinaryIO, chunk_size: int = 1 << 20) -> Iterator[TrecRecord]:
    """Yield the records of a ``<DOC>...</DOC>`` stream.

    All text inside a record except the DOCNO value counts as content;
    markup tags are dropped and HTML entities decoded.
    """
    buf = b""
    base = 0  # absolute offset of buf[0]
    pos = 0  # scan cursor within buf
    eof = False

    def fill() -> bool:
        nonlocal buf, base, pos, eof
        if eof:
            return False
        chunk = source.read(chunk_size)
        if not chunk:
            eof = True
            return False
        # drop consumed bytes only when refilling, so scanning stays linear
        buf = buf[pos:] + chunk
        base += pos
        pos = 0
        return True

    while True:
        m_open = _DOC_OPEN.search(buf, pos)
        while m_open is None and fill():
            m_open = _DOC_OPEN.search(buf, pos)
        if m_open is None:
            stray = _DOC_CLOSE.search(buf, pos)
            if stray:
                raise IngestError("closing </DOC> without opening <DOC>", base + stray.start())
            return
        stray = _DOC_CLOSE.search(buf, pos, m_open.start())
        if stray:
            raise IngestError("closing </DOC> without opening <DOC>", base + stray.start())
        open_at = m_open.start()
        m_close = _DOC_CLOSE.search(buf, m_open.end())
        while m_close is None:
            rel = open_at - pos
            if not fill():
                break
            open_at = pos + rel
            m_close = _DOC_CLOSE.search(buf, open_at)
        m_open = _DOC_OPEN.match(buf, open_at)
        start = m_open.end()
        doc_offset = base + open_at
        body_end = m_close.start() if m_close else len(buf)
        nested = _DOC_OPEN.search(buf, start, body_end)
        body = buf[start:body_end]
        m_no = _DOCNO.search(body)
        docno = m_no.group(1).decode("utf-8", "replace").strip() if m_no else None
        if nested:
            raise IngestError("nested <DOC> inside unterminated record", base + nested.start(), docno)
        if m_close is None:
            raise IngestError("unterminated <DOC> record", doc_offset, docno)
        if not docno:
            raise IngestError("record without <DOCNO>", doc_offset)
        if _DOCNO_TAG.search(body, m_no.end()) is not None:
            # a second DOCNO tag, or an unbalanced one
            raise IngestError("unexpected extra DOCNO tag", doc_offset, docno)
        content = body[:m_no.start()] + b" " + body[m_no.end():]
        text = html.unescape(_TAG.sub(" ", content.decode("utf-8", "replace")))
        yield TrecRecord(docno, text, doc_offset)
        pos = m_close.end()


def ingest_trec(source: BinaryIO, stoplist: StopList = EMPTY_STOPLIST) -> DirectIndex:
    seen: set[str] = set()

    def rows():
        for rec in iter_trec_records(source):
            if rec.docno in seen:
                raise IngestError("duplicate DOCNO", rec.offset, rec.docno)
            seen.add(rec.docno)
            yield rec.docno, Counter(preprocess(rec.text, stoplist))

    index = DirectIndex.from_token_counts(rows())
    logger.info("ingested %d documents, %d terms, %d tokens",
                len(index), len(index.vocab), index.total_tokens)
    return index
