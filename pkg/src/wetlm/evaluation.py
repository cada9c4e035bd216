"""TREC run files, qrels and the MAP / P@10 measures computed by trec_eval."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

from .errors import EvaluationError, FormatError
from .models import ScoredDoc

logger = logging.getLogger(__name__)


@dataclass
class Qrels:
    judgments: dict[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self):
        self.relevant: dict[str, set[str]] = {}
        self.judged_qids: set[str] = set()
        for (qid, docno), rel in self.judgments.items():
            self.judged_qids.add(qid)
            if rel > 0:
                self.relevant.setdefault(qid, set()).add(docno)

    @property
    def relevant_count(self) -> dict[str, int]:
        return {q: len(self.relevant.get(q, ())) for q in sorted(self.judged_qids)}

    def relevant_docs(self, qid: str) -> set[str]:
        if qid not in self.judged_qids:
            raise EvaluationError(f"query {qid!r} has no relevance judgments")
        return self.relevant.get(qid, set())


def read_qrels(source: TextIO) -> Qrels:
    """Parse ``qid iter docno rel`` lines (whitespace separated)."""
    judgments: dict[tuple[str, str], int] = {}
    for lineno, line in enumerate(source, 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise FormatError(f"qrels line {lineno}: expected 4 fields, got {len(parts)}")
        qid, _, docno, rel = parts
        try:
            grade = int(rel)
        except ValueError:
            raise FormatError(f"qrels line {lineno}: relevance {rel!r} is not an integer") from None
        key = (qid, docno)
        if key in judgments:
            raise FormatError(f"qrels line {lineno}: duplicate judgment for {qid} {docno}")
        judgments[key] = grade
    return Qrels(judgments)


@dataclass
class RunResult:
    tag: str
    rankings: dict[str, list[ScoredDoc]] = field(default_factory=dict)

    def docnos(self, qid: str) -> list[str]:
        return [d.docno for d in self.rankings.get(qid, [])]


def write_run(run: RunResult, sink: TextIO) -> None:
    for qid in sorted(run.rankings):
        for doc in run.rankings[qid]:
            sink.write(f"{qid} Q0 {doc.docno} {doc.rank} {doc.score:.6f} {run.tag}\n")


def read_run(source: TextIO) -> RunResult:
    """Parse a run file; blank lines and ``#`` comment lines are skipped."""
    rows: dict[str, list[ScoredDoc]] = {}
    tag = None
    for lineno, line in enumerate(source, 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 6:
            raise FormatError(f"run line {lineno}: expected 6 fields, got {len(parts)}")
        qid, _, docno, rank, score, run_tag = parts
        try:
            doc = ScoredDoc(docno, float(score), int(rank))
        except ValueError:
            raise FormatError(f"run line {lineno}: bad rank or score") from None
        tag = tag or run_tag
        rows.setdefault(qid, []).append(doc)
    for qid, docs in rows.items():
        docs.sort(key=lambda d: d.rank)
        if [d.rank for d in docs] != list(range(1, len(docs) + 1)):
            raise FormatError(f"run: ranks of query {qid} are not contiguous from 1")
        if any(x.score < y.score for x, y in zip(docs, docs[1:])):
            raise FormatError(f"run: scores of query {qid} increase with rank")
    return RunResult(tag or "run", rows)


def trec_eval_order(docs: Sequence[ScoredDoc]) -> list[str]:
    """Document order as trec_eval sees it: score descending, ties by docno descending."""
    ordered = sorted(docs, key=lambda d: d.docno, reverse=True)
    ordered.sort(key=lambda d: d.score, reverse=True)
    return [d.docno for d in ordered]


def average_precision(ranked: Sequence[str], qid: str, qrels: Qrels) -> float:
    relevant = qrels.relevant_docs(qid)
    if not relevant:
        raise EvaluationError(f"query {qid!r} has no relevant documents")
    hits = 0
    total = 0.0
    for i, docno in enumerate(ranked, 1):
        if docno in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def precision_at_k(ranked: Sequence[str], qid: str, qrels: Qrels, k: int = 10) -> float:
    if k <= 0:
        raise ValueError("k must be positive")
    relevant = qrels.relevant_docs(qid)
    return sum(d in relevant for d in ranked[:k]) / k


@dataclass
class Evaluation:
    ap: dict[str, float]
    p10: dict[str, float]
    excluded: list[str]

    @property
    def map(self) -> float:
        return sum(self.ap.values()) / len(self.ap) if self.ap else 0.0

    @property
    def mean_p10(self) -> float:
        return sum(self.p10.values()) / len(self.p10) if self.p10 else 0.0


def evaluate(run: RunResult | Mapping[str, Sequence[str]], qrels: Qrels, complete: bool = False,
             order: str = "rank") -> Evaluation:
    """Per-query AP and P@10 over the run's queries with at least one relevant document.

    Queries without judgments or without relevant documents are listed in
    ``excluded``. ``complete=True`` also scores judged queries missing from
    the run (as an empty ranking), like ``trec_eval -c``. ``order="trec_eval"``
    re-sorts each ranking by printed score the way trec_eval does.
    """
    rankings = _as_rankings(run, order)
    qids = set(rankings)
    if complete:
        qids |= set(qrels.relevant)
    ap, p10, excluded = {}, {}, []
    for qid in sorted(qids):
        if not qrels.relevant.get(qid):
            excluded.append(qid)
            continue
        ranked = rankings.get(qid, [])
        ap[qid] = average_precision(ranked, qid, qrels)
        p10[qid] = precision_at_k(ranked, qid, qrels, 10)
    if excluded:
        logger.info("queries without relevant documents excluded: %s", " ".join(excluded))
    return Evaluation(ap, p10, excluded)


def mean_average_precision(run, qrels: Qrels, **kw) -> float:
    ev = evaluate(run, qrels, **kw)
    if not ev.ap:
        raise EvaluationError("no query in the run has a relevant document in the qrels")
    return ev.map


def _as_rankings(run, order: str) -> dict[str, list[str]]:
    if isinstance(run, RunResult):
        if order == "trec_eval":
            return {q: trec_eval_order(docs) for q, docs in run.rankings.items()}
        return {q: [d.docno for d in docs] for q, docs in run.rankings.items()}
    return {q: list(docs) for q, docs in run.items()}


def run_from_rankings(tag: str, rankings: Mapping[str, Iterable[ScoredDoc]]) -> RunResult:
    return RunResult(tag, {q: list(d) for q, d in rankings.items()})
