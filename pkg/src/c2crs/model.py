"""The full model: shared encoders plus recommendation and generation heads,
with batched losses for every training stage and single-context paths for
serving."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import torch
import torch.nn as nn

from . import contrastive
from .config import ModelConfig
from .corpus import Batch, KnowledgeGraph, ReviewDoc, Vocabulary
from .encoders import ContextEncoders, EncodedContext, ViewProjections
from .generator import (
    FusionHead,
    GenerationOutput,
    ResponseDecoder,
    decode,
    gen_loss,
)
from .recommender import (
    RecommendationHead,
    RecommendationResult,
    item_logits,
    rank_items,
    rec_loss,
    recommend_top_k,
)


@dataclass
class BatchContext:
    """Batched encoder outputs, (batch, seq, dim) convention."""

    conv_hidden: torch.Tensor          # (B, L, d_conv)
    conv_mask: torch.Tensor            # (B, L)
    e_conv: torch.Tensor               # (B, d_conv)
    node_reps: torch.Tensor            # (n_entities, d_rec)
    e_graph: torch.Tensor              # (B, d_rec)
    graph_cold: torch.Tensor           # (B,) bool
    sent_vecs: torch.Tensor            # (S_total, d_conv)
    e_review: torch.Tensor             # (B, d_conv)
    review_cold: torch.Tensor          # (B,) bool


class C2CRSModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab: Vocabulary, kg: KnowledgeGraph,
                 reviews: dict[int, ReviewDoc] | None = None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.kg = kg
        self.reviews = reviews or {}
        self.pad_id = vocab.pad_id
        self.bos_id = vocab.bos_id
        self.eos_id = vocab.eos_id
        self.item_ids = list(kg.items)

        self.encoder = ContextEncoders(len(vocab), kg, config, self.pad_id)
        self.proj = ViewProjections(config)
        self.rec = RecommendationHead(config)
        self.decoder = ResponseDecoder(len(vocab), config, self.pad_id)
        self.fusion = FusionHead(len(vocab), config)
        self.register_buffer(
            "token_frequency",
            torch.tensor(vocab.frequency, dtype=torch.float32),
            persistent=False)

    @property
    def views(self) -> dict[str, bool]:
        return {"conv": self.config.use_conv_view,
                "graph": self.config.use_graph_view,
                "review": self.config.use_review_view}

    # ---------------------------------------------------------------- encode

    def _group_sentence_rows(self, batch: Batch, sent_vecs: torch.Tensor,
                             default: torch.Tensor):
        """Scatter the flat sentence matrix into per-instance (B, S_max, D)
        memory; instances without sentences get the default as their only
        column."""
        bsz = len(batch)
        dtype = default.dtype
        rows_per_instance: list[list[int]] = [[] for _ in range(bsz)]
        for row, owner in enumerate(batch.sent_owner):
            rows_per_instance[owner].append(row)
        width = max((len(r) for r in rows_per_instance), default=0) or 1
        mem = torch.zeros(bsz, width, default.shape[0], dtype=dtype)
        mask = torch.zeros(bsz, width, dtype=torch.bool)
        cold = torch.zeros(bsz, dtype=torch.bool)
        for i, rows in enumerate(rows_per_instance):
            if rows:
                mem[i, :len(rows)] = sent_vecs[torch.tensor(rows, dtype=torch.long)]
                mask[i, :len(rows)] = True
            else:
                mem[i, 0] = default
                mask[i, 0] = True
                cold[i] = True
        return mem, mask, cold

    def encode_batch(self, batch: Batch) -> BatchContext:
        conv_hidden = self.encoder.conv(batch.context, batch.context_mask)
        e_conv = self.encoder.conv.pool(conv_hidden, batch.context_mask)

        node_reps = self.encoder.rgcn()
        if self.config.use_graph_view:
            e_graph, graph_cold = self.encoder.rgcn.pool_entities(node_reps,
                                                                  batch.entities)
        else:
            e_graph = self.encoder.rgcn.cold_user.unsqueeze(0).expand(len(batch), -1)
            graph_cold = torch.ones(len(batch), dtype=torch.bool)

        if batch.sent_tokens is not None and self.config.use_review_view:
            sent_vecs = self.encoder.review.encode_sentences(batch.sent_tokens,
                                                             batch.sent_mask)
        else:
            sent_vecs = torch.zeros(0, self.config.d_conv,
                                    dtype=self.encoder.review.cold_doc.dtype)
        if self.config.use_review_view:
            mem, mask, review_cold = self._group_sentence_rows(
                batch, sent_vecs, self.encoder.review.cold_doc)
            e_review = self.encoder.review.sentence_pool(mem, mask)
        else:
            e_review = self.encoder.review.cold_doc.unsqueeze(0).expand(len(batch), -1)
            review_cold = torch.ones(len(batch), dtype=torch.bool)

        return BatchContext(conv_hidden=conv_hidden, conv_mask=batch.context_mask,
                            e_conv=e_conv, node_reps=node_reps, e_graph=e_graph,
                            graph_cold=graph_cold, sent_vecs=sent_vecs,
                            e_review=e_review, review_cold=review_cold)

    # ---------------------------------------------------------------- losses

    def projected_coarse(self, ctx: BatchContext):
        return (self.proj.conv(ctx.e_conv), self.proj.graph(ctx.e_graph),
                self.proj.review(ctx.e_review))

    def loss_coarse(self, batch: Batch, ctx: BatchContext | None = None):
        ctx = ctx or self.encode_batch(batch)
        z_c, z_g, z_r = self.projected_coarse(ctx)
        cfg = self.config
        terms = contrastive.coarse_terms(z_c, z_g, z_r, cfg.tau, self.views,
                                         cfg.literal_eq5, cfg.symmetric)
        if terms:
            loss = sum(terms.values())
        else:
            loss = torch.zeros((), dtype=z_c.dtype)
        return loss, {f"coarse_{k}": float(v.detach()) for k, v in terms.items()}, ctx

    def mean_positive_cosine(self, ctx: BatchContext) -> float:
        """Mean diagonal cosine over the enabled coarse view pairs (in the
        shared space); the alignment progress metric."""
        with torch.no_grad():
            z = dict(zip(("conv", "graph", "review"), self.projected_coarse(ctx)))
            views = self.views
            values = []
            for a, b in contrastive.VIEW_PAIRS:
                if views.get(a, True) and views.get(b, True):
                    za = torch.nn.functional.normalize(z[a], dim=1)
                    zb = torch.nn.functional.normalize(z[b], dim=1)
                    values.append(float((za * zb).sum(dim=1).mean()))
        return sum(values) / len(values) if values else 0.0

    def projected_fine(self, batch: Batch, ctx: BatchContext):
        # disabled views fall back to their learned constants; the matching
        # loss terms are dropped, so the placeholders never reach a gradient
        k = batch.n_alignments
        f_sel = ctx.conv_hidden[batch.align_instance, batch.align_position]
        if self.config.use_graph_view:
            n_sel = ctx.node_reps[batch.align_entity]
        else:
            n_sel = self.encoder.rgcn.cold_user.unsqueeze(0).expand(k, -1)
        if self.config.use_review_view:
            e_sel = ctx.sent_vecs[batch.align_sent_row]
        else:
            e_sel = self.encoder.review.cold_doc.unsqueeze(0).expand(k, -1)
        conv_ids = [batch.conversation_ids[i] for i in batch.align_instance.tolist()]
        return (self.proj.conv(f_sel), self.proj.graph(n_sel),
                self.proj.review(e_sel), conv_ids)

    def loss_fine(self, batch: Batch, ctx: BatchContext | None = None,
                  counters: Counter | None = None):
        ctx = ctx or self.encode_batch(batch)
        cfg = self.config
        if batch.n_alignments < 2:
            if counters is not None:
                counters["degenerate_fine_batches"] += 1
            zero = torch.zeros((), dtype=ctx.e_conv.dtype)
            return zero, {}, ctx
        f_sel, n_sel, e_sel, conv_ids = self.projected_fine(batch, ctx)
        loss = contrastive.fine_loss(
            f_sel, n_sel, e_sel, cfg.tau, conversation_ids=conv_ids,
            exclude_same_conversation=cfg.exclude_same_conversation,
            views=self.views, literal=cfg.literal_eq5, symmetric=cfg.symmetric,
            counters=counters)
        return loss, {"fine": float(loss.detach())}, ctx

    def rec_logits(self, batch: Batch, ctx: BatchContext | None = None):
        ctx = ctx or self.encode_batch(batch)
        e_u, _ = self.rec.user_representation(ctx.node_reps, batch.entities)
        return item_logits(e_u, ctx.node_reps, self.item_ids), ctx

    def loss_rec(self, batch: Batch, ctx: BatchContext | None = None):
        targets = [t for t in batch.target_items if t is not None]
        if len(targets) != len(batch):
            raise ValueError("recommendation loss needs a target item "
                             "for every instance in the batch")
        logits, ctx = self.rec_logits(batch, ctx)
        loss = rec_loss(logits, targets, self.item_ids, from_logits=True)
        return loss, {"rec": float(loss.detach())}, ctx

    def loss_rec_subset(self, batch: Batch, ctx: BatchContext,
                        indices: list[int]):
        """Recommendation loss over the batch rows that carry a target,
        reusing already-computed node representations."""
        e_u, _ = self.rec.user_representation(
            ctx.node_reps, [batch.entities[i] for i in indices])
        logits = item_logits(e_u, ctx.node_reps, self.item_ids)
        targets = [batch.target_items[i] for i in indices]
        loss = rec_loss(logits, targets, self.item_ids, from_logits=True)
        return loss, {"rec": float(loss.detach())}

    def _decoder_memories(self, batch: Batch, ctx: BatchContext):
        bsz = len(batch)
        width = max((len(e) for e in batch.entities), default=0) or 1
        graph_mem = torch.zeros(bsz, width, self.config.d_rec,
                                dtype=ctx.node_reps.dtype)
        graph_mask = torch.zeros(bsz, width, dtype=torch.bool)
        for i, ents in enumerate(batch.entities):
            if ents:
                graph_mem[i, :len(ents)] = ctx.node_reps[
                    torch.tensor(ents, dtype=torch.long)]
                graph_mask[i, :len(ents)] = True
            else:
                graph_mem[i, 0] = self.encoder.rgcn.cold_user
                graph_mask[i, 0] = True
        review_mem, review_mask, _ = self._group_sentence_rows(
            batch, ctx.sent_vecs, self.encoder.review.cold_doc)
        return graph_mem, graph_mask, review_mem, review_mask

    def gen_log_probs(self, batch: Batch, ctx: BatchContext | None = None):
        ctx = ctx or self.encode_batch(batch)
        bsz, resp_len = batch.response.shape
        bos = torch.full((bsz, 1), self.bos_id, dtype=torch.long)
        dec_input = torch.cat([bos, batch.response], dim=1)
        eos_col = torch.full((bsz, 1), self.pad_id, dtype=torch.long)
        targets = torch.cat([batch.response, eos_col], dim=1)
        lengths = batch.response_mask.sum(dim=1)
        targets[torch.arange(bsz), lengths] = self.eos_id
        target_mask = torch.cat(
            [batch.response_mask,
             torch.zeros(bsz, 1, dtype=torch.bool)], dim=1)
        target_mask[torch.arange(bsz), lengths] = True

        graph_mem, graph_mask, review_mem, review_mask = \
            self._decoder_memories(batch, ctx)
        hidden = self.decoder(dec_input, ctx.conv_hidden, ctx.conv_mask,
                              graph_mem, graph_mask, review_mem, review_mask)
        log_probs = self.fusion(hidden, review_mem, review_mask, log=True)
        return log_probs, targets, target_mask, ctx

    def loss_gen(self, batch: Batch, ctx: BatchContext | None = None):
        log_probs, targets, target_mask, ctx = self.gen_log_probs(batch, ctx)
        loss = gen_loss(log_probs, targets, self.token_frequency,
                        self.config.beta, self.config.gamma,
                        mask=target_mask, log_input=True)
        return loss, {"gen": float(loss.detach())}, ctx

    # ------------------------------------------------------------- inference

    def rank_for_batch(self, batch: Batch) -> list[tuple[list[int], list[float]]]:
        with torch.no_grad():
            logits, _ = self.rec_logits(batch)
            probs = torch.softmax(logits, dim=-1)
        return [rank_items(probs[i], self.item_ids) for i in range(len(batch))]

    def encode_single(self, context_token_ids: list[int], context_entities: list[int],
                      review_sentences: list[list[int]]) -> EncodedContext:
        """Single-context encode for serving and decoding; matrices come
        back with one column per unit."""
        from .corpus import TrainingInstance, collate

        instance = TrainingInstance(
            conversation_id="live", turn_index=0,
            context_token_ids=list(context_token_ids),
            context_entities=list(context_entities),
            target_item=None, target_response=[], alignment=[])
        batch = collate([instance], pad_id=self.pad_id)
        if review_sentences:
            width = max(len(s) for s in review_sentences)
            tokens = torch.full((len(review_sentences), width), self.pad_id,
                                dtype=torch.long)
            mask = torch.zeros(len(review_sentences), width, dtype=torch.bool)
            for i, sent in enumerate(review_sentences):
                tokens[i, :len(sent)] = torch.tensor(sent, dtype=torch.long)
                mask[i, :len(sent)] = True
            batch.sent_tokens, batch.sent_mask = tokens, mask
            batch.sent_owner = [0] * len(review_sentences)
        ctx = self.encode_batch(batch)
        return EncodedContext(
            F=ctx.conv_hidden[0, batch.context_mask[0]].T,
            e_C=ctx.e_conv[0],
            N=ctx.node_reps.T,
            e_G=ctx.e_graph[0],
            E=ctx.sent_vecs.T,
            e_R=ctx.e_review[0],
            context_entities=list(context_entities),
            graph_cold=bool(ctx.graph_cold[0]),
            review_cold=bool(ctx.review_cold[0]),
        )

    def generate(self, enc: EncodedContext, mode: str = "greedy",
                 max_len: int = 30, beam_width: int | None = None,
                 min_len: int = 0) -> GenerationOutput:
        conv_mem = enc.F.T.unsqueeze(0)
        conv_mask = torch.ones(1, conv_mem.shape[1], dtype=torch.bool)
        if enc.context_entities:
            graph_mem = enc.N.T[torch.tensor(enc.context_entities,
                                             dtype=torch.long)].unsqueeze(0)
        else:
            graph_mem = self.encoder.rgcn.cold_user.view(1, 1, -1)
        graph_mask = torch.ones(1, graph_mem.shape[1], dtype=torch.bool)
        if enc.E.shape[1] > 0:
            review_mem = enc.E.T.unsqueeze(0)
        else:
            review_mem = self.encoder.review.cold_doc.view(1, 1, -1)
        review_mask = torch.ones(1, review_mem.shape[1], dtype=torch.bool)
        memories = (conv_mem, conv_mask, graph_mem, graph_mask,
                    review_mem, review_mask)
        return decode(self.decoder, self.fusion, memories,
                      self.bos_id, self.eos_id, self.pad_id,
                      mode=mode, max_len=max_len, beam_width=beam_width,
                      min_len=min_len)

    def recommend(self, context_entities: list[int], k: int) -> RecommendationResult:
        with torch.no_grad():
            node_reps = self.encoder.rgcn()
            e_u, _ = self.rec.user_representation(node_reps,
                                                  [list(context_entities)])
            return recommend_top_k(e_u[0], node_reps, self.item_ids, k)
