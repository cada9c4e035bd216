"""Pre-trained word vectors, cosine neighbour lists and coverage figures."""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import BinaryIO, Collection, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, EmbeddingFormatError, FormatError

logger = logging.getLogger(__name__)

NEIGHBOR_MAGIC = b"LTNB"
NEIGHBOR_VERSION = 1
SIM_CEILING = 1.0 + 1e-9


@dataclass
class EmbeddingTable:
    """Term vectors restricted to the vocabulary of interest.

    ``matrix[i]`` is the vector of ``terms[i]``; rows keep file order.
    """

    dim: int
    terms: list[str]
    matrix: np.ndarray
    zero_vectors: int = 0
    collisions: int = 0
    row: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32).reshape(len(self.terms), self.dim)
        self.row = {t: i for i, t in enumerate(self.terms)}

    def __contains__(self, term: str) -> bool:
        return term in self.row

    def __len__(self) -> int:
        return len(self.terms)

    def vector(self, term: str) -> np.ndarray:
        return self.matrix[self.row[term]]

    @property
    def vectors(self) -> dict[str, np.ndarray]:
        return {t: self.matrix[i] for t, i in self.row.items()}

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, Sequence[float]]) -> "EmbeddingTable":
        terms = list(vectors)
        mat = np.array([np.asarray(vectors[t], dtype=np.float32) for t in terms], dtype=np.float32)
        if not terms:
            return cls(0, [], np.zeros((0, 0), np.float32))
        if mat.ndim != 2:
            raise ValueError("vectors must all have the same length")
        if (np.linalg.norm(mat, axis=1) == 0).any():
            raise ValueError("zero vectors are not allowed")
        return cls(mat.shape[1], terms, mat)


class _Reader:
    """Buffered byte reader that knows its absolute offset."""

    def __init__(self, source: BinaryIO, chunk: int = 1 << 22):
        self.source = source
        self.chunk = chunk
        self.buf = b""
        self.pos = 0
        self.base = 0

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def _fill(self) -> bool:
        data = self.source.read(self.chunk)
        if not data:
            return False
        self.buf = self.buf[self.pos:] + data
        self.base += self.pos
        self.pos = 0
        return True

    def until(self, sep: bytes) -> bytes | None:
        while True:
            i = self.buf.find(sep, self.pos)
            if i >= 0:
                out = self.buf[self.pos:i]
                self.pos = i + 1
                return out
            if not self._fill():
                return None

    def take(self, n: int) -> bytes | None:
        while len(self.buf) - self.pos < n:
            if not self._fill():
                return None
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def skip_newlines(self) -> None:
        while True:
            while self.pos < len(self.buf) and self.buf[self.pos] in b"\n\r":
                self.pos += 1
            if self.pos < len(self.buf) or not self._fill():
                return

    def rest_is_blank(self) -> bool:
        while True:
            if self.buf[self.pos:].strip():
                return False
            self.pos = len(self.buf)
            if not self._fill():
                return True


def load_embeddings(source: BinaryIO, vocab_filter: Collection[str] | None = None) -> EmbeddingTable:
    """Read the binary word2vec format.

    Words are lowercased before matching ``vocab_filter`` (``None`` keeps
    everything); when several source words lowercase to the same string the
    first one in the file wins. All-zero vectors are skipped and counted.
    """
    reader = _Reader(source)
    header = reader.until(b"\n")
    if header is None:
        raise EmbeddingFormatError("missing header line", 0)
    try:
        count, dim = (int(x) for x in header.split())
    except ValueError:
        raise EmbeddingFormatError(f"bad header {header[:40]!r}", 0) from None
    if dim <= 0 or count < 0:
        raise EmbeddingFormatError(f"invalid header values count={count} dim={dim}", 0)

    width = 4 * dim
    dtype = np.dtype("<f4")
    terms: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    zero = collisions = 0
    for i in range(count):
        reader.skip_newlines()
        start = reader.offset
        word = reader.until(b" ")
        if word is None:
            raise EmbeddingFormatError(f"truncated stream: expected {count} entries, got {i}", start)
        raw = reader.take(width)
        if raw is None:
            raise EmbeddingFormatError(f"truncated vector for entry {i}", reader.offset)
        term = word.decode("utf-8", "replace").lower()
        if vocab_filter is not None and term not in vocab_filter:
            continue
        if term in seen:
            collisions += 1
            continue
        vec = np.frombuffer(raw, dtype=dtype)
        if not vec.any():
            zero += 1
            logger.warning("zero vector for %r at byte %d skipped", term, start)
            continue
        seen.add(term)
        terms.append(term)
        rows.append(vec)
    if not reader.rest_is_blank():
        raise EmbeddingFormatError(f"data after the {count} entries announced by the header", reader.offset)

    matrix = np.vstack(rows).astype(np.float32) if rows else np.zeros((0, dim), np.float32)
    return EmbeddingTable(dim, terms, matrix, zero_vectors=zero, collisions=collisions)


def save_embeddings(table: EmbeddingTable, sink: BinaryIO) -> None:
    sink.write(f"{len(table)} {table.dim}\n".encode("ascii"))
    for term, vec in zip(table.terms, table.matrix):
        sink.write(term.encode("utf-8") + b" ")
        sink.write(np.asarray(vec, dtype="<f4").tobytes())
        sink.write(b"\n")


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    # fixed operand order keeps the result bit-identical under swapping
    if a.tobytes() > b.tobytes():
        a, b = b, a
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    value = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))


class NeighborIndex:
    """Thresholded cosine neighbour lists over a fixed vocabulary.

    Every term lists itself with similarity exactly 1.0. ``normalizer(u)``
    is the sum of the similarities in ``u``'s list.
    """

    def __init__(self, threshold: float, terms: Sequence[str], ptr: np.ndarray,
                 nbr: np.ndarray, sims: np.ndarray, key: bytes = b"\0" * 32):
        self.threshold = float(threshold)
        self.terms = list(terms)
        self.term_id = {t: i for i, t in enumerate(self.terms)}
        self.ptr = np.asarray(ptr, dtype=np.int64)
        self.nbr = np.asarray(nbr, dtype=np.int64)
        self.sims = np.asarray(sims, dtype=np.float64)
        self.key = key
        self.normalizers = np.array(
            [math.fsum(self.sims[self.ptr[i]:self.ptr[i + 1]]) for i in range(len(self.terms))],
            dtype=np.float64,
        )

    def __contains__(self, term: str) -> bool:
        return term in self.term_id

    def __len__(self) -> int:
        return len(self.terms)

    def neighbors(self, term: str) -> list[tuple[str, float]]:
        i = self.term_id.get(term)
        if i is None:
            return []
        lo, hi = self.ptr[i], self.ptr[i + 1]
        return [(self.terms[j], float(s)) for j, s in zip(self.nbr[lo:hi], self.sims[lo:hi])]

    def neighbor_arrays(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        i = self.term_id[term]
        lo, hi = self.ptr[i], self.ptr[i + 1]
        return self.nbr[lo:hi], self.sims[lo:hi]

    def normalizer(self, term: str) -> float:
        i = self.term_id.get(term)
        return 0.0 if i is None else float(self.normalizers[i])

    def similarity(self, w: str, u: str) -> float:
        """cos(w, u) if the pair cleared the threshold, else 0."""
        i, j = self.term_id.get(u), self.term_id.get(w)
        if i is None or j is None:
            return 0.0
        lo, hi = self.ptr[i], self.ptr[i + 1]
        k = lo + np.searchsorted(self.nbr[lo:hi], j)
        if k < hi and self.nbr[k] == j:
            return float(self.sims[k])
        return 0.0

    # -- persistence --------------------------------------------------------

    def save(self, sink: BinaryIO) -> None:
        """Layout: ``LTNB``, u32 version, f64 threshold, 32-byte cache key,
        u64 term count, u64 pair count, term strings (u32 length + UTF-8),
        u64 ptr[n + 1], u32 neighbour ids, f64 similarities."""
        sink.write(NEIGHBOR_MAGIC)
        sink.write(struct.pack("<Id", NEIGHBOR_VERSION, self.threshold))
        sink.write(self.key.ljust(32, b"\0")[:32])
        sink.write(struct.pack("<QQ", len(self.terms), len(self.nbr)))
        for t in self.terms:
            b = t.encode("utf-8")
            sink.write(struct.pack("<I", len(b)) + b)
        sink.write(self.ptr.astype("<u8").tobytes())
        sink.write(self.nbr.astype("<u4").tobytes())
        sink.write(self.sims.astype("<f8").tobytes())

    @classmethod
    def load(cls, source: BinaryIO) -> "NeighborIndex":
        data = source.read()
        if data[:4] != NEIGHBOR_MAGIC:
            raise FormatError("not a neighbour cache (bad magic)")
        if len(data) < 64:
            raise FormatError("truncated neighbour cache header")
        version, threshold = struct.unpack_from("<Id", data, 4)
        if version != NEIGHBOR_VERSION:
            raise FormatError(f"unsupported neighbour cache version {version}")
        key = data[16:48]
        n, nnz = struct.unpack_from("<QQ", data, 48)
        pos = 64
        terms = []
        for _ in range(n):
            if pos + 4 > len(data):
                raise FormatError(f"truncated neighbour cache at byte {pos}")
            (size,) = struct.unpack_from("<I", data, pos)
            terms.append(data[pos + 4:pos + 4 + size].decode("utf-8"))
            pos += 4 + size
        if len(data) - pos != 8 * (n + 1) + 12 * nnz:
            raise FormatError(f"neighbour cache payload size mismatch at byte {pos}")
        ptr = np.frombuffer(data, "<u8", n + 1, pos).astype(np.int64)
        pos += 8 * (n + 1)
        nbr = np.frombuffer(data, "<u4", nnz, pos).astype(np.int64)
        sims = np.frombuffer(data, "<f8", nnz, pos + 4 * nnz).astype(np.float64)
        return cls(threshold, terms, ptr, nbr, sims, key)


def build_neighbor_index(table: EmbeddingTable, vocab: Iterable[str], threshold: float,
                         workers: int = 1, block: int = 512, key: bytes = b"\0" * 32) -> NeighborIndex:
    """Exact all-pairs cosine neighbours among ``vocab`` terms that have a vector.

    Only the upper triangle is computed and then mirrored, so membership and
    values are symmetric. The output does not depend on ``workers``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    terms = sorted({t for t in vocab if t in table})
    n = len(terms)
    if n:
        x = table.matrix[[table.row[t] for t in terms]].astype(np.float64)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    else:
        x = np.zeros((0, max(table.dim, 1)))

    def upper_pairs(a: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = min(a + block, n)
        s = x[a:b] @ x[a:].T
        # keep strictly-upper entries (global j > global i)
        s[np.tril_indices(b - a, 0, s.shape[1])] = -np.inf
        r, c = np.nonzero(s >= threshold)
        return r + a, c + a, np.minimum(s[r, c], 1.0)

    starts = range(0, n, block)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(upper_pairs, starts))
    else:
        parts = [upper_pairs(a) for a in starts]

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.ones(n)]
    for r, c, v in parts:
        rows += [r, c]
        cols += [c, r]
        vals += [v, v]
    rows_a = np.concatenate(rows)
    cols_a = np.concatenate(cols)
    vals_a = np.concatenate(vals)
    order = np.lexsort((cols_a, rows_a))
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(np.bincount(rows_a, minlength=n))
    nbr = NeighborIndex(threshold, terms, ptr, cols_a[order], vals_a[order], key)
    logger.info("neighbour index: %d terms, %d pairs at T=%g", n, len(nbr.nbr), threshold)
    return nbr


def cache_key(embedding_digest: str, vocab: Iterable[str], threshold: float) -> bytes:
    h = hashlib.sha256()
    h.update(embedding_digest.encode("ascii"))
    h.update(b"\0")
    h.update(vocab_digest(vocab).encode("ascii"))
    h.update(b"\0")
    h.update(struct.pack("<d", threshold))
    return h.digest()


def vocab_digest(vocab: Iterable[str]) -> str:
    h = hashlib.sha256()
    for t in sorted(set(vocab)):
        h.update(t.encode("utf-8") + b"\n")
    return h.hexdigest()


def file_digest(path, chunk: int = 1 << 24) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while data := fh.read(chunk):
            h.update(data)
    return h.hexdigest()


@dataclass(frozen=True)
class CoverageReport:
    vocab_types: float
    tokens: float
    query_terms: float
    uncovered_queries: float

    def lines(self) -> list[str]:
        return [
            f"vocabulary types with a vector:   {100 * self.vocab_types:6.2f}%",
            f"collection tokens with a vector:  {100 * self.tokens:6.2f}%",
            f"query terms with a vector:        {100 * self.query_terms:6.2f}%",
            f"queries with no term vector:      {100 * self.uncovered_queries:6.2f}%",
        ]


def coverage_stats(table, stats, queries: Iterable = ()) -> CoverageReport:
    """Embedding coverage of the collection vocabulary, its tokens and the queries.

    ``queries`` holds token sequences or objects with a ``terms`` attribute;
    query terms are counted with multiplicity.
    """
    types = [t for t in stats.term_counts if t in table]
    vocab = len(stats.term_counts)
    covered_tokens = sum(stats.term_counts[t] for t in types)
    q_total = q_covered = n_q = uncovered = 0
    for q in queries:
        terms = getattr(q, "terms", q)
        hits = sum(t in table for t in terms)
        q_total += len(terms)
        q_covered += hits
        n_q += 1
        uncovered += hits == 0
    return CoverageReport(
        vocab_types=len(types) / vocab if vocab else 1.0,
        tokens=covered_tokens / stats.total_tokens if stats.total_tokens else 1.0,
        query_terms=q_covered / q_total if q_total else 1.0,
        uncovered_queries=uncovered / n_q if n_q else 0.0,
    )
