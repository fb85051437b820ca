"""Core data model: conversations, knowledge graph, reviews and alignments."""

from __future__ import annotations

from dataclasses import dataclass, field

PAD, UNK, BOS, EOS, SEP = "<pad>", "<unk>", "<bos>", "<eos>", "<sep>"
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, SEP)

SPEAKERS = ("seeker", "recommender")


class CorpusError(ValueError):
    """Malformed corpus file or dangling cross-reference."""


def tokenize(text: str) -> list[str]:
    """Whitespace split plus lowercasing; the fixture-friendly default."""
    return text.lower().split()


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int]
    frequency: list[int]

    @classmethod
    def build(cls, token_streams) -> "Vocabulary":
        """Build from an iterable of token lists, specials first.

        Non-special ids follow first occurrence order, which makes the
        vocabulary a pure function of the corpus files.
        """
        tokens = list(SPECIAL_TOKENS)
        index = {t: i for i, t in enumerate(tokens)}
        frequency = [0] * len(tokens)
        for stream in token_streams:
            for tok in stream:
                if tok not in index:
                    index[tok] = len(tokens)
                    tokens.append(tok)
                    frequency.append(0)
                frequency[index[tok]] += 1
        return cls(tokens=tokens, index=index, frequency=frequency)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.unk_id
        return [self.index.get(t, unk) for t in tokens]

    def decode(self, ids, skip_special: bool = True) -> list[str]:
        special = set(SPECIAL_TOKENS)
        out = []
        for i in ids:
            tok = self.tokens[i]
            if skip_special and tok in special:
                continue
            out.append(tok)
        return out


@dataclass
class Utterance:
    speaker: str
    token_ids: list[int]
    entity_mentions: list[tuple[int, int]] = field(default_factory=list)
    recommended_items: list[int] = field(default_factory=list)


@dataclass
class ConversationRecord:
    conversation_id: str
    utterances: list[Utterance]


@dataclass
class KnowledgeGraph:
    n_entities: int
    n_relations: int
    triples: list[tuple[int, int, int]]
    items: list[int]

    def __post_init__(self):
        self._item_set = set(self.items)

    def is_item(self, entity_id: int) -> bool:
        return entity_id in self._item_set

    def validate(self):
        seen = set()
        for head, rel, tail in self.triples:
            for endpoint in (head, tail):
                if not 0 <= endpoint < self.n_entities:
                    raise CorpusError(f"unknown entity {endpoint}")
            if not 0 <= rel < self.n_relations:
                raise CorpusError(f"unknown relation {rel}")
            if (head, rel, tail) in seen:
                raise CorpusError(f"duplicate triple {(head, rel, tail)}")
            seen.add((head, rel, tail))
        for item in self.items:
            if not 0 <= item < self.n_entities:
                raise CorpusError(f"unknown entity {item} in item list")


@dataclass
class ReviewDoc:
    item_id: int
    sentences: list[list[int]]


@dataclass
class AlignmentTriple:
    """Links one word occurrence to its KG entity and a review sentence."""

    conversation_id: str
    utterance_index: int
    token_position: int
    entity_id: int
    review_item_id: int
    review_sentence_index: int


@dataclass
class ContextAlignment:
    """An alignment triple realized inside a flattened training context.

    ``flat_position`` indexes into the instance's ``context_token_ids``
    after separator insertion and truncation.
    """

    flat_position: int
    entity_id: int
    review_item_id: int
    review_sentence_index: int


@dataclass
class TrainingInstance:
    conversation_id: str
    turn_index: int
    context_token_ids: list[int]
    context_entities: list[int]
    target_item: int | None
    target_response: list[int]
    alignment: list[ContextAlignment]
