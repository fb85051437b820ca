"""Turn-by-turn training instances from conversation records."""

from __future__ import annotations

from .types import (
    AlignmentTriple,
    ConversationRecord,
    ContextAlignment,
    TrainingInstance,
)


def build_instances(record: ConversationRecord, max_context_len: int,
                    sep_id: int,
                    alignment: list[AlignmentTriple] | None = None,
                    ) -> list[TrainingInstance]:
    """One instance per turn t >= 1, predicting turn t+1.

    A turn whose reply recommends k items yields k instances (one per
    ground-truth item); a turn without recommendations yields one instance
    with no target item. Context tokens are the utterances so far joined by
    the separator token, truncated to the newest ``max_context_len`` tokens.
    Entity mentions accumulate in first-mention order.
    """
    if max_context_len < 1:
        raise ValueError(f"max_context_len must be >= 1, got {max_context_len}")
    conv_alignment = [a for a in (alignment or [])
                      if a.conversation_id == record.conversation_id]
    # one alignment per word occurrence: keep the first triple per position
    by_position: dict[tuple[int, int], AlignmentTriple] = {}
    for triple in conv_alignment:
        key = (triple.utterance_index, triple.token_position)
        by_position.setdefault(key, triple)

    instances: list[TrainingInstance] = []
    flat_tokens: list[int] = []
    flat_alignment: list[tuple[int, AlignmentTriple]] = []
    entities: list[int] = []
    seen = set()

    for t, utterance in enumerate(record.utterances[:-1]):
        if t > 0:
            flat_tokens.append(sep_id)
        offset = len(flat_tokens)
        flat_tokens.extend(utterance.token_ids)
        for pos, entity in utterance.entity_mentions:
            if entity not in seen:
                seen.add(entity)
                entities.append(entity)
            triple = by_position.get((t, pos))
            if triple is not None:
                flat_alignment.append((offset + pos, triple))

        cut = max(0, len(flat_tokens) - max_context_len)
        context = flat_tokens[cut:]
        context_alignment = [
            ContextAlignment(
                flat_position=fp - cut,
                entity_id=tr.entity_id,
                review_item_id=tr.review_item_id,
                review_sentence_index=tr.review_sentence_index,
            )
            for fp, tr in flat_alignment
            if fp >= cut
        ]

        target = record.utterances[t + 1]
        targets = target.recommended_items or [None]
        for item in targets:
            instances.append(TrainingInstance(
                conversation_id=record.conversation_id,
                turn_index=t,
                context_token_ids=list(context),
                context_entities=list(entities),
                target_item=item,
                target_response=list(target.token_ids),
                alignment=list(context_alignment),
            ))
    return instances
