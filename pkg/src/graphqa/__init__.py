"""Graph-grounded question answering with an agentic deep-search loop.

Index a corpus into a graph store (entities, relations, chunks), embed it,
and answer multi-hop questions by decomposing them into channel-routed
sub-queries, verifying drafted reasoning against the accumulated evidence
pool, and expanding retrieval until the evidence holds up or the round
budget runs out.
"""

from .embedding import HashedEmbedder, RemoteEmbedder, cosine
from .errors import (
    BuildError,
    ChunkingError,
    ConfigError,
    CorruptStoreError,
    CorruptTraceError,
    FixtureError,
    GraphQAError,
    InvalidArgumentError,
    LLMError,
    NotFoundError,
    RetrievalError,
)
from .evaluate import EvalItem, EvalResult, ItemResult, load_dataset, recall_by_step, run_eval
from .indexer import (
    ChunkSpec,
    Document,
    IndexConfig,
    LLMExtractor,
    RuleBasedExtractor,
    build_index,
    chunk_document,
    load_corpus,
)
from .kb import Chunk, Entity, GraphKB, Relation, Subgraph
from .llm import RemoteChatClient, ScriptedClient, prompt_digest
from .metrics import (
    aggregate_subem,
    evidence_recall,
    normalize_answer,
    parse_judge_scores,
    sub_em,
)
from .pipeline import (
    Engine,
    EngineOptions,
    EvidencePool,
    EvidenceRecord,
    RunResult,
    SubQuery,
)
from .report import write_report
from .retrieval import RetrievedContext, Retriever, ScoredItem, merge_contexts
from .trace import Trace

__version__ = "0.1.0"

__all__ = [
    "BuildError",
    "Chunk",
    "ChunkSpec",
    "ChunkingError",
    "ConfigError",
    "CorruptStoreError",
    "CorruptTraceError",
    "Document",
    "Engine",
    "EngineOptions",
    "Entity",
    "EvalItem",
    "EvalResult",
    "EvidencePool",
    "EvidenceRecord",
    "FixtureError",
    "GraphKB",
    "GraphQAError",
    "HashedEmbedder",
    "IndexConfig",
    "InvalidArgumentError",
    "ItemResult",
    "LLMError",
    "LLMExtractor",
    "NotFoundError",
    "Relation",
    "RemoteChatClient",
    "RemoteEmbedder",
    "RetrievalError",
    "RetrievedContext",
    "Retriever",
    "RuleBasedExtractor",
    "RunResult",
    "ScoredItem",
    "ScriptedClient",
    "SubQuery",
    "Subgraph",
    "Trace",
    "aggregate_subem",
    "build_index",
    "chunk_document",
    "cosine",
    "evidence_recall",
    "load_corpus",
    "load_dataset",
    "merge_contexts",
    "normalize_answer",
    "parse_judge_scores",
    "prompt_digest",
    "recall_by_step",
    "run_eval",
    "sub_em",
    "write_report",
]
