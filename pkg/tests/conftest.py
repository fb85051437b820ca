import json

import pytest
import torch

from c2crs.config import ModelConfig, TrainConfig
from c2crs.corpus import generate_synthetic_corpus, load_corpus

torch.set_num_threads(1)


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(d_conv=32, d_rec=16, d_cl=16, n_enc_layers=1, n_dec_layers=1,
                n_heads=2, ffn_width=32, max_positions=128)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_train_config(**overrides) -> TrainConfig:
    model = overrides.pop("model", tiny_model_config())
    base = dict(model=model, batch_size=8, seed=7, max_context_len=64,
                max_response_len=16)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def synth_corpus():
    return generate_synthetic_corpus(8, 24, 16, seed=1)


@pytest.fixture
def tiny_config():
    return tiny_train_config()


FIXTURE_CONVERSATIONS = [
    {
        "id": "c0",
        "utterances": [
            {"speaker": "seeker", "text": "i like space films",
             "entities": [[2, 1]], "items": []},
            {"speaker": "recommender", "text": "watch solaris then",
             "entities": [[1, 0]], "items": [0]},
            {"speaker": "seeker", "text": "thanks a lot", "entities": [],
             "items": []},
        ],
    },
    {
        "id": "c1",
        "utterances": [
            {"speaker": "seeker", "text": "something romantic please",
             "entities": [[1, 2]], "items": []},
            {"speaker": "recommender", "text": "amelie is lovely",
             "entities": [[0, 0]], "items": [0]},
        ],
    },
]

FIXTURE_KG = "#entities=3 relations=1 items=0\n1\t0\t0\n2\t0\t0\n"

FIXTURE_REVIEWS = [
    {"item_id": 0, "sentences": ["solaris is about space", "a slow film"]},
]

FIXTURE_ALIGNMENT = [
    {"conversation_id": "c0", "utterance": 0, "pos": 2, "entity": 1,
     "review_item": 0, "sentence": 0},
    {"conversation_id": "c0", "utterance": 1, "pos": 1, "entity": 0,
     "review_item": 0, "sentence": 0},
]


def write_fixture_corpus(tmp_path, conversations=None, kg_text=None,
                         reviews=None, alignment=None):
    conversations = FIXTURE_CONVERSATIONS if conversations is None else conversations
    reviews = FIXTURE_REVIEWS if reviews is None else reviews
    alignment = FIXTURE_ALIGNMENT if alignment is None else alignment
    (tmp_path / "conversations.jsonl").write_text(
        "".join(json.dumps(c) + "\n" for c in conversations), encoding="utf-8")
    (tmp_path / "kg.tsv").write_text(kg_text or FIXTURE_KG, encoding="utf-8")
    (tmp_path / "reviews.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in reviews), encoding="utf-8")
    (tmp_path / "alignment.jsonl").write_text(
        "".join(json.dumps(a) + "\n" for a in alignment), encoding="utf-8")
    return tmp_path


@pytest.fixture
def fixture_corpus(tmp_path):
    write_fixture_corpus(tmp_path)
    return load_corpus(tmp_path / "conversations.jsonl", tmp_path / "kg.tsv",
                       tmp_path / "reviews.jsonl", tmp_path / "alignment.jsonl")
