"""Multi-hop retrieval-augmented QA with question unrolling and layer-contrast reranking."""

from .core import (
    Document,
    Mask,
    QaExample,
    RankedDocument,
    ReasoningChain,
    Triple,
    UnrolledQuestion,
    serialize_unrolled,
)
from .embeddings import EmbeddingStore, LayeredEmbeddings
from .index import FlatIndex, build_index
from .rala import RerankConfig, Strategy, rerank, select_candidate_layers

__version__ = "0.1.0"

__all__ = [
    "Document",
    "EmbeddingStore",
    "FlatIndex",
    "LayeredEmbeddings",
    "Mask",
    "QaExample",
    "RankedDocument",
    "ReasoningChain",
    "RerankConfig",
    "Strategy",
    "Triple",
    "UnrolledQuestion",
    "build_index",
    "rerank",
    "select_candidate_layers",
    "serialize_unrolled",
]
