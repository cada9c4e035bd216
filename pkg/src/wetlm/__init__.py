"""Query-likelihood retrieval with embedding-based translation language models."""

from .embeddings import (EmbeddingTable, NeighborIndex, build_neighbor_index, cosine,
                         coverage_stats, load_embeddings)
from .index import CollectionStats, DirectIndex, Document, collection_prob, ingest_trec, pair_presence
from .models import ModelKind, ModelParams, Query, ScoredDoc
from .ranking import Scorer, rank_documents
from .text import StopList, filter_tokens, preprocess, tokenize

__version__ = "0.1.0"
