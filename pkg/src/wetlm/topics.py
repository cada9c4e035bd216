"""Query (topic) files.

Three layouts are recognised: TREC ``<top>`` blocks with ``<num>`` and
``<title>``, XML ``<topic>`` records with ``<identifier>`` (or ``<num>``)
and ``<title>`` as distributed for CHiC, and plain ``qid<TAB>text`` lines.
Only the title is used as query text.
"""

from __future__ import annotations

import html
import re
from typing import TextIO

from .errors import FormatError
from .models import Query
from .text import EMPTY_STOPLIST, StopList, preprocess

_TOP = re.compile(r"<top>(.*?)</top>", re.IGNORECASE | re.DOTALL)
_TOPIC = re.compile(r"<topic\b[^>]*>(.*?)</topic>", re.IGNORECASE | re.DOTALL)
_NUM = re.compile(r"<num>\s*(?:number:)?\s*([^\s<]+)", re.IGNORECASE)
_IDENT = re.compile(r"<(?:identifier|num)>\s*([^<]+?)\s*</", re.IGNORECASE)
_TITLE = re.compile(r"<title>(.*?)(?=<)", re.IGNORECASE | re.DOTALL)


def parse_topics(text: str) -> list[tuple[str, str]]:
    """Return ``(qid, title)`` pairs in file order."""
    if _TOP.search(text):
        blocks, id_re = _TOP.findall(text), _NUM
    elif _TOPIC.search(text):
        blocks, id_re = _TOPIC.findall(text), _IDENT
    else:
        return _parse_tsv(text)
    out = []
    for i, block in enumerate(blocks, 1):
        m_id = id_re.search(block)
        m_title = _TITLE.search(block + "<")
        if not m_id or not m_title:
            raise FormatError(f"topic #{i}: missing identifier or title")
        title = re.sub(r"^\s*topic:\s*", "", m_title.group(1), flags=re.IGNORECASE)
        out.append((m_id.group(1).strip(), html.unescape(" ".join(title.split()))))
    return out


def _parse_tsv(text: str) -> list[tuple[str, str]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        qid, sep, body = line.partition("\t")
        if not sep:
            qid, _, body = line.strip().partition(" ")
        if not qid:
            raise FormatError(f"topics line {lineno}: missing query id")
        out.append((qid.strip(), body.strip()))
    return out


def read_queries(source: TextIO, stoplist: StopList = EMPTY_STOPLIST) -> list[Query]:
    topics = parse_topics(source.read())
    seen = set()
    queries = []
    for qid, title in topics:
        if qid in seen:
            raise FormatError(f"duplicate query id {qid!r}")
        seen.add(qid)
        queries.append(Query(qid, preprocess(title, stoplist)))
    return queries
