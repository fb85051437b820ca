"""Padded batches over training instances, with per-instance review bundles."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import torch

from .types import ReviewDoc, TrainingInstance


@dataclass
class Batch:
    """Tensors padded to the batch max lengths; ragged fields stay as lists.

    The review bundle collects every sentence of the review docs referenced
    by an instance (context items plus alignment targets) into a flat
    sentence matrix shared across the batch; ``sent_row`` maps
    ``(instance_idx, item_id, sentence_idx)`` to its row.
    """

    instances: list[TrainingInstance]
    context: torch.Tensor
    context_mask: torch.Tensor
    context_lengths: torch.Tensor
    entities: list[list[int]]
    target_items: list[int | None]
    response: torch.Tensor
    response_mask: torch.Tensor
    conversation_ids: list[str]
    sent_tokens: torch.Tensor | None = None
    sent_mask: torch.Tensor | None = None
    sent_owner: list[int] = field(default_factory=list)
    sent_row: dict[tuple[int, int, int], int] = field(default_factory=dict)
    align_instance: torch.Tensor | None = None
    align_position: torch.Tensor | None = None
    align_entity: torch.Tensor | None = None
    align_sent_row: torch.Tensor | None = None

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def n_alignments(self) -> int:
        return 0 if self.align_instance is None else int(self.align_instance.shape[0])


def _pad(seqs: list[list[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max((len(s) for s in seqs), default=0) or 1
    out = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for i, seq in enumerate(seqs):
        if seq:
            out[i, :len(seq)] = torch.tensor(seq, dtype=torch.long)
            mask[i, :len(seq)] = True
    return out, mask


def _bundle_items(instance: TrainingInstance, reviews: dict[int, ReviewDoc]) -> list[int]:
    items = [e for e in instance.context_entities if e in reviews]
    for record in instance.alignment:
        if record.review_item_id not in items:
            items.append(record.review_item_id)
    return items


def collate(instances: list[TrainingInstance], pad_id: int,
            reviews: dict[int, ReviewDoc] | None = None) -> Batch:
    contexts = [inst.context_token_ids for inst in instances]
    context, context_mask = _pad(contexts, pad_id)
    response, response_mask = _pad([inst.target_response for inst in instances], pad_id)

    batch = Batch(
        instances=list(instances),
        context=context,
        context_mask=context_mask,
        context_lengths=torch.tensor([len(c) for c in contexts], dtype=torch.long),
        entities=[list(inst.context_entities) for inst in instances],
        target_items=[inst.target_item for inst in instances],
        response=response,
        response_mask=response_mask,
        conversation_ids=[inst.conversation_id for inst in instances],
    )
    if reviews is None:
        return batch

    sentences: list[list[int]] = []
    for i, inst in enumerate(instances):
        for item in _bundle_items(inst, reviews):
            doc = reviews[item]
            for sidx, sent in enumerate(doc.sentences):
                batch.sent_row[(i, item, sidx)] = len(sentences)
                batch.sent_owner.append(i)
                sentences.append(sent)
    if sentences:
        batch.sent_tokens, batch.sent_mask = _pad(sentences, pad_id)

    ai, ap, ae, ar = [], [], [], []
    for i, inst in enumerate(instances):
        for record in inst.alignment:
            row = batch.sent_row.get((i, record.review_item_id,
                                      record.review_sentence_index))
            if row is None:
                continue
            ai.append(i)
            ap.append(record.flat_position)
            ae.append(record.entity_id)
            ar.append(row)
    if ai:
        batch.align_instance = torch.tensor(ai, dtype=torch.long)
        batch.align_position = torch.tensor(ap, dtype=torch.long)
        batch.align_entity = torch.tensor(ae, dtype=torch.long)
        batch.align_sent_row = torch.tensor(ar, dtype=torch.long)
    return batch


def make_batches(instances: list[TrainingInstance], batch_size: int,
                 seed: int = 0, shuffle: bool = True, *,
                 pad_id: int = 0,
                 reviews: dict[int, ReviewDoc] | None = None,
                 contrastive: bool = False):
    """Yield batches in a seed-deterministic order; the final short batch is
    emitted. Contrastive stages need in-batch negatives, so they refuse
    batch_size < 2."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if contrastive and batch_size < 2:
        raise ValueError("contrastive training needs batch_size >= 2 "
                         "for in-batch negatives")
    order = list(range(len(instances)))
    if shuffle:
        random.Random(seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [instances[i] for i in order[start:start + batch_size]]
        yield collate(chunk, pad_id=pad_id, reviews=reviews)
