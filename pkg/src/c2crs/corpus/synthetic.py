"""Deterministic synthetic corpus for desk-scale experiments.

Every item gets two attribute entities and a two-sentence review; each
conversation's seeker asks about one item's attributes before the
recommender names that item, so the mapping from mentioned entities to the
ground-truth item is learnable from the corpus alone.
"""

from __future__ import annotations

import random

from .io import CorpusTuple
from .types import (
    AlignmentTriple,
    ConversationRecord,
    KnowledgeGraph,
    ReviewDoc,
    Utterance,
    Vocabulary,
    tokenize,
)

_OPENERS = [
    "hi i want a movie about {p} and {s}",
    "looking for something with {p} and {s}",
    "any film about {p} and a bit of {s}",
]
_RECOMMENDS = [
    "you should watch {film} it is about {p}",
    "try {film} it has great {p}",
    "i think {film} fits it covers {p}",
]
_THANKS = [
    "thanks {film} sounds great",
    "nice {film} looks perfect",
]
_CLOSERS = [
    "enjoy the movie",
    "have fun watching",
]


def item_name(item_id: int) -> str:
    return f"film{item_id}"


def attribute_name(entity_id: int) -> str:
    return f"topic{entity_id}"


def synthetic_entity_names(n_items: int, n_entities: int) -> dict[int, str]:
    names = {i: item_name(i) for i in range(n_items)}
    names.update({e: attribute_name(e) for e in range(n_items, n_entities)})
    return names


def _attributes_for(item: int, n_items: int, n_entities: int) -> tuple[int, int]:
    n_attr = n_entities - n_items
    if n_attr == 0:
        other = (item + 1) % n_items
        return other, other
    if n_attr == 1:
        return n_items, n_items
    primary = n_items + (2 * item) % n_attr
    secondary = n_items + (2 * item + 1) % n_attr
    return primary, secondary


def _fill(template: str, names: dict[str, str]) -> tuple[list[str], dict[str, int]]:
    tokens, positions = [], {}
    for word in template.split():
        if word.startswith("{") and word.endswith("}"):
            key = word[1:-1]
            positions[key] = len(tokens)
            tokens.append(names[key])
        else:
            tokens.append(word)
    return tokens, positions


def generate_synthetic_corpus(n_items: int, n_entities: int, n_conversations: int,
                              seed: int) -> CorpusTuple:
    if n_items < 2:
        raise ValueError(f"need n_items >= 2, got {n_items}")
    if n_entities < n_items:
        raise ValueError(f"need n_entities >= n_items, got {n_entities} < {n_items}")
    if n_conversations < 1:
        raise ValueError(f"need n_conversations >= 1, got {n_conversations}")
    rng = random.Random(seed)
    names = synthetic_entity_names(n_items, n_entities)

    attrs = {i: _attributes_for(i, n_items, n_entities) for i in range(n_items)}
    triples: list[tuple[int, int, int]] = []
    seen = set()
    for i in range(n_items):
        primary, secondary = attrs[i]
        for triple in ((primary, 0, i), (secondary, 0, i), (i, 1, primary)):
            if triple not in seen and triple[0] != triple[2]:
                seen.add(triple)
                triples.append(triple)
    kg = KnowledgeGraph(n_entities=n_entities, n_relations=2,
                        triples=triples, items=list(range(n_items)))

    # owner item + sentence index used when aligning an attribute mention
    attr_owner: dict[int, tuple[int, int]] = {}
    for i in range(n_items):
        primary, secondary = attrs[i]
        attr_owner.setdefault(primary, (i, 0))
        attr_owner.setdefault(secondary, (i, 1))

    review_texts: dict[int, list[str]] = {}
    for i in range(n_items):
        primary, secondary = attrs[i]
        review_texts[i] = [
            f"{names[i]} is a story about {names[primary]}",
            f"{names[i]} also features {names[secondary]} moments",
        ]

    conversations_raw = []
    for j in range(n_conversations):
        target = j % n_items
        primary, secondary = attrs[target]
        fillers = {"film": names[target], "p": names[primary], "s": names[secondary]}
        mention_entity = {"film": target, "p": primary, "s": secondary}

        utterances = []
        for speaker, template, items in (
            ("seeker", rng.choice(_OPENERS), []),
            ("recommender", rng.choice(_RECOMMENDS), [target]),
            ("seeker", rng.choice(_THANKS), []),
            ("recommender", rng.choice(_CLOSERS), []),
        ):
            tokens, positions = _fill(template, fillers)
            mentions = [(pos, mention_entity[key]) for key, pos in sorted(
                positions.items(), key=lambda kv: kv[1])]
            utterances.append((speaker, tokens, mentions, items))
        conversations_raw.append((f"conv{j}", utterances))

    streams = []
    for _, utterances in conversations_raw:
        for _, tokens, _, _ in utterances:
            streams.append([t.lower() for t in tokens])
    for i in range(n_items):
        for sent in review_texts[i]:
            streams.append(tokenize(sent))
    vocab = Vocabulary.build(streams)

    reviews = {
        i: ReviewDoc(item_id=i,
                     sentences=[vocab.encode(tokenize(s)) for s in review_texts[i]])
        for i in range(n_items)
    }

    conversations: list[ConversationRecord] = []
    alignment: list[AlignmentTriple] = []
    for conv_id, utterances in conversations_raw:
        converted = []
        for u_idx, (speaker, tokens, mentions, items) in enumerate(utterances):
            converted.append(Utterance(
                speaker=speaker,
                token_ids=vocab.encode([t.lower() for t in tokens]),
                entity_mentions=mentions,
                recommended_items=items,
            ))
            for pos, entity in mentions:
                if entity in reviews:
                    review_item, sentence = entity, 0
                else:
                    review_item, sentence = attr_owner[entity]
                alignment.append(AlignmentTriple(
                    conversation_id=conv_id,
                    utterance_index=u_idx,
                    token_position=pos,
                    entity_id=entity,
                    review_item_id=review_item,
                    review_sentence_index=sentence,
                ))
        conversations.append(ConversationRecord(conversation_id=conv_id,
                                                utterances=converted))

    return conversations, kg, reviews, alignment, vocab
