"""Line-delimited corpus file formats: load, validate, save.

Formats:
  conversations.jsonl  one conversation per line
  kg.tsv               header "#entities=N relations=R items=i1,i2,..." then
                       head<TAB>relation<TAB>tail lines
  reviews.jsonl        {"item_id": ..., "sentences": [...]}
  alignment.jsonl      {"conversation_id", "utterance", "pos", "entity",
                        "review_item", "sentence"}
"""

from __future__ import annotations

import json
from pathlib import Path

from .types import (
    AlignmentTriple,
    ConversationRecord,
    CorpusError,
    KnowledgeGraph,
    ReviewDoc,
    Utterance,
    Vocabulary,
    SPEAKERS,
    tokenize,
)

CorpusTuple = tuple[
    list[ConversationRecord],
    KnowledgeGraph,
    dict[int, ReviewDoc],
    list[AlignmentTriple],
    Vocabulary,
]


def _jsonl_records(path: Path):
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path.name}:{lineno}: malformed JSON: {exc}") from exc


def load_kg(path: str | Path) -> KnowledgeGraph:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise CorpusError(f"{path.name}:1: missing header line")
    header = lines[0][1:].split()
    fields = {}
    for part in header:
        if "=" not in part:
            raise CorpusError(f"{path.name}:1: malformed header field {part!r}")
        key, value = part.split("=", 1)
        fields[key] = value
    try:
        n_entities = int(fields["entities"])
        n_relations = int(fields["relations"])
        items = [int(x) for x in fields["items"].split(",") if x]
    except (KeyError, ValueError) as exc:
        raise CorpusError(f"{path.name}:1: malformed header: {exc}") from exc

    triples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CorpusError(f"{path.name}:{lineno}: expected 3 tab-separated ids")
        try:
            head, rel, tail = (int(p) for p in parts)
        except ValueError as exc:
            raise CorpusError(f"{path.name}:{lineno}: non-integer id: {exc}") from exc
        triples.append((head, rel, tail))
    kg = KnowledgeGraph(n_entities=n_entities, n_relations=n_relations,
                        triples=triples, items=items)
    kg.validate()
    return kg


def load_corpus(conversations_path, kg_path, reviews_path, alignment_path) -> CorpusTuple:
    """Load and cross-validate the four corpus files, building the vocabulary
    from conversation plus review tokens."""
    kg = load_kg(kg_path)

    conv_texts: list[tuple[str, list[dict]]] = []
    for lineno, obj in _jsonl_records(Path(conversations_path)):
        try:
            conv_texts.append((obj["id"], obj["utterances"]))
        except (KeyError, TypeError) as exc:
            raise CorpusError(
                f"{Path(conversations_path).name}:{lineno}: missing field: {exc}") from exc

    review_texts: list[tuple[int, list[str]]] = []
    for lineno, obj in _jsonl_records(Path(reviews_path)):
        try:
            review_texts.append((int(obj["item_id"]), list(obj["sentences"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(
                f"{Path(reviews_path).name}:{lineno}: missing field: {exc}") from exc

    streams = []
    for _, raw_utts in conv_texts:
        for utt in raw_utts:
            streams.append(tokenize(utt.get("text", "")))
    for _, sentences in review_texts:
        for sent in sentences:
            streams.append(tokenize(sent))
    vocab = Vocabulary.build(streams)

    reviews: dict[int, ReviewDoc] = {}
    for item_id, sentences in review_texts:
        if not kg.is_item(item_id):
            raise CorpusError(f"unknown item {item_id} in reviews")
        if not sentences:
            raise CorpusError(f"review doc for item {item_id} has no sentences")
        if item_id in reviews:
            raise CorpusError(f"duplicate review doc for item {item_id}")
        reviews[item_id] = ReviewDoc(
            item_id=item_id,
            sentences=[vocab.encode(tokenize(s)) for s in sentences],
        )

    conversations: list[ConversationRecord] = []
    for conv_id, raw_utts in conv_texts:
        if not raw_utts:
            raise CorpusError(f"conversation {conv_id} has no utterances")
        utterances = []
        for u_idx, utt in enumerate(raw_utts):
            speaker = utt.get("speaker")
            if speaker not in SPEAKERS:
                raise CorpusError(
                    f"conversation {conv_id} utterance {u_idx}: bad speaker {speaker!r}")
            token_ids = vocab.encode(tokenize(utt.get("text", "")))
            mentions = []
            for pos, entity in utt.get("entities", []):
                if not 0 <= pos < len(token_ids):
                    raise CorpusError(
                        f"conversation {conv_id} utterance {u_idx}: "
                        f"mention position {pos} out of bounds")
                if not 0 <= entity < kg.n_entities:
                    raise CorpusError(f"unknown entity {entity}")
                mentions.append((int(pos), int(entity)))
            items = []
            for item in utt.get("items", []):
                if not kg.is_item(item):
                    raise CorpusError(f"unknown item {item} recommended in {conv_id}")
                items.append(int(item))
            utterances.append(Utterance(speaker=speaker, token_ids=token_ids,
                                        entity_mentions=mentions,
                                        recommended_items=items))
        conversations.append(ConversationRecord(conversation_id=conv_id,
                                                utterances=utterances))

    by_id = {c.conversation_id: c for c in conversations}
    alignment: list[AlignmentTriple] = []
    for lineno, obj in _jsonl_records(Path(alignment_path)):
        try:
            triple = AlignmentTriple(
                conversation_id=obj["conversation_id"],
                utterance_index=int(obj["utterance"]),
                token_position=int(obj["pos"]),
                entity_id=int(obj["entity"]),
                review_item_id=int(obj["review_item"]),
                review_sentence_index=int(obj["sentence"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(
                f"{Path(alignment_path).name}:{lineno}: missing field: {exc}") from exc
        conv = by_id.get(triple.conversation_id)
        if conv is None:
            raise CorpusError(f"alignment references unknown conversation "
                              f"{triple.conversation_id}")
        if not 0 <= triple.utterance_index < len(conv.utterances):
            raise CorpusError(f"alignment references utterance "
                              f"{triple.utterance_index} outside {triple.conversation_id}")
        utt = conv.utterances[triple.utterance_index]
        if (triple.token_position, triple.entity_id) not in utt.entity_mentions:
            raise CorpusError(
                f"alignment ({triple.conversation_id}, {triple.utterance_index}, "
                f"{triple.token_position}) does not match an entity mention")
        doc = reviews.get(triple.review_item_id)
        if doc is None:
            raise CorpusError(f"alignment references item {triple.review_item_id} "
                              f"with no review doc")
        if not 0 <= triple.review_sentence_index < len(doc.sentences):
            raise CorpusError(
                f"alignment sentence index {triple.review_sentence_index} exceeds "
                f"review doc for item {triple.review_item_id}")
        alignment.append(triple)

    return conversations, kg, reviews, alignment, vocab


def save_corpus(corpus: CorpusTuple, out_dir: str | Path,
                entity_names: dict[int, str] | None = None) -> None:
    """Write the four corpus files (plus the optional entity-name sidecar)."""
    conversations, kg, reviews, alignment, vocab = corpus
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with (out / "conversations.jsonl").open("w", encoding="utf-8") as fh:
        for conv in conversations:
            obj = {
                "id": conv.conversation_id,
                "utterances": [
                    {
                        "speaker": u.speaker,
                        "text": " ".join(vocab.tokens[t] for t in u.token_ids),
                        "entities": [[p, e] for p, e in u.entity_mentions],
                        "items": list(u.recommended_items),
                    }
                    for u in conv.utterances
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")

    with (out / "kg.tsv").open("w", encoding="utf-8") as fh:
        items = ",".join(str(i) for i in kg.items)
        fh.write(f"#entities={kg.n_entities} relations={kg.n_relations} items={items}\n")
        for head, rel, tail in kg.triples:
            fh.write(f"{head}\t{rel}\t{tail}\n")

    with (out / "reviews.jsonl").open("w", encoding="utf-8") as fh:
        for item_id in sorted(reviews):
            doc = reviews[item_id]
            obj = {
                "item_id": doc.item_id,
                "sentences": [" ".join(vocab.tokens[t] for t in s) for s in doc.sentences],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")

    with (out / "alignment.jsonl").open("w", encoding="utf-8") as fh:
        for tr in alignment:
            obj = {
                "conversation_id": tr.conversation_id,
                "utterance": tr.utterance_index,
                "pos": tr.token_position,
                "entity": tr.entity_id,
                "review_item": tr.review_item_id,
                "sentence": tr.review_sentence_index,
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")

    if entity_names is not None:
        with (out / "entity_names.tsv").open("w", encoding="utf-8") as fh:
            for entity_id in sorted(entity_names):
                fh.write(f"{entity_id}\t{entity_names[entity_id]}\n")


def load_corpus_dir(data_dir: str | Path) -> CorpusTuple:
    data_dir = Path(data_dir)
    return load_corpus(
        data_dir / "conversations.jsonl",
        data_dir / "kg.tsv",
        data_dir / "reviews.jsonl",
        data_dir / "alignment.jsonl",
    )


def load_entity_names(data_dir: str | Path) -> dict[int, str]:
    path = Path(data_dir) / "entity_names.tsv"
    names: dict[int, str] = {}
    if not path.exists():
        return names
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{path.name}:{lineno}: expected id<TAB>name")
        names[int(parts[0])] = parts[1]
    return names
