"""Context encoders: conversation transformer, relational graph convolution
over the knowledge graph, and the review-sentence encoder.

Shape conventions: batched paths use (batch, seq, dim) with True-is-valid
masks; the single-instance helpers mirror the pooled-matrix form where a
representation matrix has one column per semantic unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .corpus import KnowledgeGraph
from .modules import (
    SelfAttentivePool,
    TransformerEncoderLayer,
    sinusoidal_positions,
)


def self_attentive_pool(M: torch.Tensor, W_sa: torch.Tensor,
                        b: torch.Tensor) -> torch.Tensor:
    """M (d, m) -> M @ softmax(b^T tanh(W_sa @ M)), a vector of size d."""
    if M.ndim != 2 or M.shape[1] < 1:
        raise ValueError(f"expected a d x m matrix with m >= 1, got {tuple(M.shape)}")
    scores = b @ torch.tanh(W_sa @ M)
    return M @ torch.softmax(scores, dim=-1)


def augment_with_inverses(kg: KnowledgeGraph) -> tuple[list[tuple[int, int, int]], int]:
    """Add an inverse relation per relation so messages flow both ways."""
    triples = list(kg.triples)
    triples += [(t, r + kg.n_relations, h) for h, r, t in kg.triples]
    return triples, 2 * kg.n_relations


def rgcn_propagate(node_reps: torch.Tensor, heads: torch.Tensor,
                   rels: torch.Tensor, tails: torch.Tensor,
                   rel_weight: torch.Tensor, self_weight: torch.Tensor,
                   z_norm: float) -> torch.Tensor:
    """One relational convolution: each triple (h, r, t) sends W_r @ n_h to t,
    scaled by 1/z; every node adds its self transform, then ReLU."""
    agg = torch.zeros_like(node_reps)
    if heads.numel():
        msgs = torch.bmm(rel_weight[rels], node_reps[heads].unsqueeze(-1)).squeeze(-1)
        agg = agg.index_add(0, tails, msgs)
    out = agg / z_norm + node_reps @ self_weight.T
    return F.relu(out)


def rgcn_layer(node_reps: torch.Tensor, kg: KnowledgeGraph,
               rel_weights: torch.Tensor, self_weight: torch.Tensor,
               z_norm: float = 1.0) -> torch.Tensor:
    """Functional layer over the graph's triples as given (no inverse
    augmentation). node_reps is (n_entities, d), one row per entity;
    rel_weights is (n_relations, d, d)."""
    if node_reps.shape[0] != kg.n_entities:
        raise ValueError(f"node_reps covers {node_reps.shape[0]} entities, "
                         f"graph has {kg.n_entities}")
    if kg.triples:
        heads = torch.tensor([h for h, _, _ in kg.triples], dtype=torch.long)
        rels = torch.tensor([r for _, r, _ in kg.triples], dtype=torch.long)
        tails = torch.tensor([t for _, _, t in kg.triples], dtype=torch.long)
    else:
        heads = rels = tails = torch.zeros(0, dtype=torch.long)
    return rgcn_propagate(node_reps, heads, rels, tails, rel_weights,
                          self_weight, z_norm)


class RGCNLayer(nn.Module):
    def __init__(self, n_relations: int, d_model: int, z_norm: float):
        super().__init__()
        self.rel_weight = nn.Parameter(torch.empty(n_relations, d_model, d_model))
        self.self_weight = nn.Parameter(torch.empty(d_model, d_model))
        nn.init.xavier_uniform_(self.rel_weight)
        nn.init.xavier_uniform_(self.self_weight)
        self.z_norm = z_norm
        self.edge_count_hook = None

    def forward(self, node_reps, heads, rels, tails):
        if self.edge_count_hook is not None:
            self.edge_count_hook(int(heads.numel()))
        return rgcn_propagate(node_reps, heads, rels, tails,
                              self.rel_weight, self.self_weight, self.z_norm)


class TokenSequenceEncoder(nn.Module):
    """Embedding + sinusoidal positions + pre-norm transformer stack."""

    def __init__(self, vocab_size: int, d_model: int, n_layers: int, n_heads: int,
                 ffn_width: int, pad_id: int, max_positions: int,
                 dropout: float = 0.0):
        super().__init__()
        self.d_model = d_model
        self.embed = nn.Embedding(vocab_size, d_model, padding_idx=pad_id)
        nn.init.normal_(self.embed.weight, std=d_model ** -0.5)
        with torch.no_grad():
            self.embed.weight[pad_id].zero_()
        self.register_buffer("positions", sinusoidal_positions(max_positions, d_model),
                             persistent=False)
        self.layers = nn.ModuleList(
            TransformerEncoderLayer(d_model, n_heads, ffn_width, dropout)
            for _ in range(n_layers))
        self.norm = nn.LayerNorm(d_model)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """tokens (B, L) -> hidden (B, L, D); padded positions carry no
        attention weight but are still emitted (zeroed downstream by masks)."""
        if tokens.shape[1] < 1:
            raise ValueError("cannot encode an empty token sequence")
        pos = self.positions[: tokens.shape[1]].to(self.embed.weight.dtype)
        x = self.embed(tokens) * math.sqrt(self.d_model) + pos
        for layer in self.layers:
            x = layer(x, mask)
        return self.norm(x)


class ConversationEncoder(nn.Module):
    def __init__(self, vocab_size: int, config: ModelConfig, pad_id: int):
        super().__init__()
        self.encoder = TokenSequenceEncoder(
            vocab_size, config.d_conv, config.n_enc_layers, config.n_heads,
            config.ffn_width, pad_id, config.max_positions, config.dropout)
        self.pool = SelfAttentivePool(config.d_conv)

    def forward(self, tokens, mask):
        return self.encoder(tokens, mask)

    def encode_pooled(self, tokens, mask):
        hidden = self.encoder(tokens, mask)
        return hidden, self.pool(hidden, mask)


class GraphEncoder(nn.Module):
    """R-GCN over the inverse-augmented knowledge graph.

    ``forward()`` recomputes representations for every entity; the entity
    embedding table provides layer-0 inputs. Mentions of no entities fall
    back to a learned cold-context vector.
    """

    def __init__(self, kg: KnowledgeGraph, config: ModelConfig):
        super().__init__()
        triples, n_relations = augment_with_inverses(kg)
        self.n_entities = kg.n_entities
        self.embed = nn.Embedding(kg.n_entities, config.d_rec)
        nn.init.normal_(self.embed.weight, std=config.d_rec ** -0.5)
        heads = torch.tensor([h for h, _, _ in triples], dtype=torch.long)
        rels = torch.tensor([r for _, r, _ in triples], dtype=torch.long)
        tails = torch.tensor([t for _, _, t in triples], dtype=torch.long)
        self.register_buffer("edge_heads", heads, persistent=False)
        self.register_buffer("edge_rels", rels, persistent=False)
        self.register_buffer("edge_tails", tails, persistent=False)
        self.layers = nn.ModuleList(
            RGCNLayer(n_relations, config.d_rec, config.z_norm)
            for _ in range(config.n_rgcn_layers))
        self.pool = SelfAttentivePool(config.d_rec)
        self.cold_user = nn.Parameter(torch.empty(config.d_rec))
        nn.init.normal_(self.cold_user, std=config.d_rec ** -0.5)

    def forward(self) -> torch.Tensor:
        x = self.embed.weight
        for layer in self.layers:
            x = layer(x, self.edge_heads, self.edge_rels, self.edge_tails)
        return x

    def pool_entities(self, node_reps: torch.Tensor,
                      entity_lists: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-instance graph-view vector e_G; empty lists get the cold
        vector and are flagged."""
        return pool_entity_lists(node_reps, entity_lists, self.pool, self.cold_user)


def pool_entity_lists(node_reps, entity_lists, pool: SelfAttentivePool,
                      cold_default: torch.Tensor):
    width = max((len(e) for e in entity_lists), default=0)
    cold = torch.tensor([not e for e in entity_lists], dtype=torch.bool)
    if width == 0:
        pooled = cold_default.unsqueeze(0).expand(len(entity_lists), -1)
        return pooled, cold
    d = node_reps.shape[1]
    stacked = torch.zeros(len(entity_lists), width, d, dtype=node_reps.dtype)
    mask = torch.zeros(len(entity_lists), width, dtype=torch.bool)
    for i, ents in enumerate(entity_lists):
        if ents:
            stacked[i, :len(ents)] = node_reps[torch.tensor(ents, dtype=torch.long)]
            mask[i, :len(ents)] = True
        else:
            mask[i, 0] = True  # keep softmax finite; row replaced below
    pooled = pool(stacked, mask)
    if cold.any():
        pooled = torch.where(cold.unsqueeze(1), cold_default.unsqueeze(0), pooled)
    return pooled, cold


def encode_graph_view(context_entities: list[int], node_reps: torch.Tensor,
                      pool: SelfAttentivePool,
                      cold_default: torch.Tensor) -> tuple[torch.Tensor, bool]:
    pooled, cold = pool_entity_lists(node_reps, [list(context_entities)],
                                     pool, cold_default)
    return pooled[0], bool(cold[0])


class ReviewEncoder(nn.Module):
    """Sentence transformer with token-level then sentence-level pooling;
    parameters are disjoint from the conversation encoder's."""

    def __init__(self, vocab_size: int, config: ModelConfig, pad_id: int):
        super().__init__()
        self.encoder = TokenSequenceEncoder(
            vocab_size, config.d_conv, config.n_enc_layers, config.n_heads,
            config.ffn_width, pad_id, config.max_positions, config.dropout)
        self.token_pool = SelfAttentivePool(config.d_conv)
        self.sentence_pool = SelfAttentivePool(config.d_conv)
        self.cold_doc = nn.Parameter(torch.empty(config.d_conv))
        nn.init.normal_(self.cold_doc, std=config.d_conv ** -0.5)

    def encode_sentences(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """tokens (S, L) -> one vector per sentence (S, D)."""
        hidden = self.encoder(tokens, mask)
        return self.token_pool(hidden, mask)

    def pool_document(self, sentence_vectors: torch.Tensor) -> torch.Tensor:
        """(S, D) -> e_R; zero sentences yields the cold vector."""
        if sentence_vectors.shape[0] == 0:
            return self.cold_doc
        return self.sentence_pool(sentence_vectors.unsqueeze(0))[0]


def encode_reviews(sentences: list[list[int]], encoder: ReviewEncoder,
                   pad_id: int = 0) -> tuple[torch.Tensor, torch.Tensor, bool]:
    """Encode raw sentence token lists into (E, e_R); E has one column per
    sentence. Returns the cold flag for the zero-sentence case."""
    if not sentences:
        d = encoder.cold_doc.shape[0]
        return torch.zeros(d, 0, dtype=encoder.cold_doc.dtype), encoder.cold_doc, True
    width = max(len(s) for s in sentences)
    if width == 0:
        raise ValueError("review sentences must contain at least one token")
    tokens = torch.full((len(sentences), width), pad_id, dtype=torch.long)
    mask = torch.zeros(len(sentences), width, dtype=torch.bool)
    for i, sent in enumerate(sentences):
        tokens[i, :len(sent)] = torch.tensor(sent, dtype=torch.long)
        mask[i, :len(sent)] = True
    vectors = encoder.encode_sentences(tokens, mask)
    return vectors.T, encoder.pool_document(vectors), False


def transformer_encode(token_ids: list[int] | torch.Tensor, mask,
                       encoder: TokenSequenceEncoder | ConversationEncoder) -> torch.Tensor:
    """Single-sequence encode returning the token matrix F with one column
    per input position (d x m)."""
    if isinstance(encoder, ConversationEncoder):
        encoder = encoder.encoder
    tokens = torch.as_tensor(token_ids, dtype=torch.long)
    if tokens.numel() == 0:
        raise ValueError("cannot encode an empty token sequence")
    if tokens.max() >= encoder.embed.num_embeddings:
        raise ValueError(f"token id {int(tokens.max())} outside the vocabulary")
    if mask is None:
        mask = torch.ones(tokens.shape[0], dtype=torch.bool)
    else:
        mask = torch.as_tensor(mask, dtype=torch.bool)
    hidden = encoder(tokens.unsqueeze(0), mask.unsqueeze(0))
    return hidden[0].T


class ViewProjections(nn.Module):
    """One learned map per view into the shared contrastive space."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.conv = nn.Linear(config.d_conv, config.d_cl)
        self.graph = nn.Linear(config.d_rec, config.d_cl)
        self.review = nn.Linear(config.d_conv, config.d_cl)


class ContextEncoders(nn.Module):
    """Container giving the three encoders their checkpoint namespaces
    (encoder.conv.*, encoder.rgcn.*, encoder.review.*)."""

    def __init__(self, vocab_size: int, kg: KnowledgeGraph, config: ModelConfig,
                 pad_id: int):
        super().__init__()
        self.conv = ConversationEncoder(vocab_size, config, pad_id)
        self.rgcn = GraphEncoder(kg, config)
        self.review = ReviewEncoder(vocab_size, config, pad_id)


@dataclass
class EncodedContext:
    """Single-context encoder outputs in matrix form (columns = units)."""

    F: torch.Tensor          # (d_conv, m) token representations
    e_C: torch.Tensor        # (d_conv,)
    N: torch.Tensor          # (d_rec, n_entities)
    e_G: torch.Tensor        # (d_rec,)
    E: torch.Tensor          # (d_conv, n_sentences)
    e_R: torch.Tensor        # (d_conv,)
    context_entities: list[int]
    graph_cold: bool = False
    review_cold: bool = False
