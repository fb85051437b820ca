"""Conversation service: a trained checkpoint behind a small JSON API.

Sessions live in memory with TTL eviction; entity linking is an exact
lowercase surface-form match against the ``entity_names.tsv`` sidecar, and
misses degrade to text-only context.
"""

from __future__ import annotations

import hashlib
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .checkpoint import apply_params, load_checkpoint
from .config import config_from_manifest
from .corpus import CorpusTuple, load_corpus_dir, load_entity_names, tokenize
from .model import C2CRSModel

DEFAULT_TTL_SECONDS = 30 * 60


@dataclass
class SessionState:
    session_id: str
    history: list[tuple[str, list[int]]] = field(default_factory=list)
    entities: list[int] = field(default_factory=list)
    created: float = 0.0
    last_active: float = 0.0
    turn: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add_entities(self, mentioned: list[int]):
        known = set(self.entities)
        for entity in mentioned:
            if entity not in known:
                known.add(entity)
                self.entities.append(entity)


class ConversationService:
    def __init__(self, model: C2CRSModel, corpus: CorpusTuple,
                 entity_names: dict[int, str], checkpoint_id: str,
                 max_context_len: int = 256, max_response_len: int = 30,
                 session_ttl: float = DEFAULT_TTL_SECONDS):
        _, kg, reviews, _, vocab = corpus
        self.model = model
        self.vocab = vocab
        self.kg = kg
        self.reviews = reviews
        self.entity_names = entity_names
        self.checkpoint_id = checkpoint_id
        self.max_context_len = max_context_len
        self.max_response_len = max_response_len
        self.session_ttl = session_ttl
        self.name_to_entity = {name.lower(): eid
                               for eid, name in entity_names.items()}
        self.sessions: dict[str, SessionState] = {}
        self.store_lock = threading.Lock()
        model.eval()

    # ------------------------------------------------------------- sessions

    def _purge_expired(self, now: float):
        expired = [sid for sid, s in self.sessions.items()
                   if now - s.last_active > self.session_ttl]
        for sid in expired:
            del self.sessions[sid]

    def _session(self, session_id: str) -> SessionState:
        now = time.monotonic()
        with self.store_lock:
            self._purge_expired(now)
            state = self.sessions.get(session_id)
            if state is None:
                state = SessionState(session_id=session_id, created=now,
                                     last_active=now)
                self.sessions[session_id] = state
            state.last_active = now
            return state

    def reset(self, session_id: str):
        with self.store_lock:
            self.sessions.pop(session_id, None)

    # ------------------------------------------------------------ inference

    def _link_entities(self, tokens: list[str]) -> list[int]:
        return [self.name_to_entity[t] for t in tokens if t in self.name_to_entity]

    def _context_tokens(self, state: SessionState) -> list[int]:
        flat: list[int] = []
        for idx, (_, token_ids) in enumerate(state.history):
            if idx > 0:
                flat.append(self.vocab.sep_id)
            flat.extend(token_ids)
        return flat[-self.max_context_len:]

    def item_name(self, item_id: int) -> str:
        return self.entity_names.get(item_id, f"item{item_id}")

    def converse(self, session_id: str, utterance: str, k: int) -> dict:
        text = utterance.strip()
        if not text:
            raise ValueError("utterance must be non-empty")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        state = self._session(session_id)
        with state.lock:
            tokens = tokenize(text)
            token_ids = self.vocab.encode(tokens)
            state.history.append(("seeker", token_ids))
            state.add_entities(self._link_entities(tokens))
            state.turn += 1

            context = self._context_tokens(state)
            sentences = [s for e in state.entities if e in self.reviews
                         for s in self.reviews[e].sentences]
            enc = self.model.encode_single(context, state.entities, sentences)
            output = self.model.generate(enc, mode="greedy",
                                         max_len=self.max_response_len,
                                         min_len=1)
            response_tokens = self.vocab.decode(output.token_ids)
            response = " ".join(response_tokens)

            result = self.model.recommend(state.entities, k)
            recommendations = [
                {"item_id": item, "name": self.item_name(item),
                 "score": round(score, 6)}
                for item, score in zip(result.ranked_items, result.scores)
            ]

            state.history.append(("recommender", output.token_ids))
            state.add_entities(self._link_entities(response_tokens))
            return {"response": response, "recommendations": recommendations,
                    "turn": state.turn}

    def health(self) -> dict:
        return {"status": "ok", "checkpoint": self.checkpoint_id,
                "n_items": len(self.kg.items),
                "n_sessions": len(self.sessions)}

    def items(self, limit: int | None = None) -> list[dict]:
        out = [{"item_id": item, "name": self.item_name(item)}
               for item in self.kg.items]
        return out[:limit] if limit is not None else out


def load_service(ckpt_path: str | Path, data_dir: str | Path,
                 session_ttl: float = DEFAULT_TTL_SECONDS) -> ConversationService:
    params, manifest = load_checkpoint(ckpt_path)
    config = config_from_manifest(manifest["config"])
    corpus = load_corpus_dir(data_dir)
    _, kg, reviews, _, vocab = corpus
    model = C2CRSModel(config.model, vocab, kg, reviews)
    apply_params(model, params)
    names = load_entity_names(data_dir)
    if not names:
        warnings.warn(f"no entity_names.tsv under {data_dir}; "
                      "entity linking disabled", stacklevel=2)
    digest = hashlib.sha256(Path(ckpt_path).read_bytes()).hexdigest()[:12]
    checkpoint_id = f"{manifest.get('stage', '?')}@{manifest.get('step', '?')}:{digest}"
    return ConversationService(
        model, corpus, names, checkpoint_id,
        max_context_len=config.max_context_len,
        max_response_len=config.max_response_len,
        session_ttl=session_ttl)


class ConverseRequest(BaseModel):
    session_id: str
    utterance: str
    k: int = 10


class ResetRequest(BaseModel):
    session_id: str


def create_app(service: ConversationService) -> FastAPI:
    app = FastAPI(title="c2crs conversation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"])
    app.state.service = service

    @app.post("/api/converse")
    def converse(request: ConverseRequest):
        try:
            return service.converse(request.session_id, request.utterance,
                                    request.k)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/api/reset")
    def reset(request: ResetRequest):
        service.reset(request.session_id)
        return {"status": "ok"}

    @app.get("/api/health")
    def health():
        return service.health()

    @app.get("/api/items")
    def items(limit: int | None = None):
        return {"items": service.items(limit)}

    return app
