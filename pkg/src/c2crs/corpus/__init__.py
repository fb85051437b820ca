from .types import (
    AlignmentTriple,
    ConversationRecord,
    ContextAlignment,
    CorpusError,
    KnowledgeGraph,
    ReviewDoc,
    TrainingInstance,
    Utterance,
    Vocabulary,
    tokenize,
    PAD, UNK, BOS, EOS, SEP, SPECIAL_TOKENS,
)
from .io import (
    CorpusTuple,
    load_corpus,
    load_corpus_dir,
    load_entity_names,
    load_kg,
    save_corpus,
)
from .instances import build_instances
from .batching import Batch, collate, make_batches
from .synthetic import generate_synthetic_corpus, synthetic_entity_names

__all__ = [
    "AlignmentTriple", "ConversationRecord", "ContextAlignment", "CorpusError",
    "KnowledgeGraph", "ReviewDoc", "TrainingInstance", "Utterance", "Vocabulary",
    "tokenize", "PAD", "UNK", "BOS", "EOS", "SEP", "SPECIAL_TOKENS",
    "CorpusTuple", "load_corpus", "load_corpus_dir", "load_entity_names",
    "load_kg", "save_corpus", "build_instances", "Batch", "collate",
    "make_batches", "generate_synthetic_corpus", "synthetic_entity_names",
]
