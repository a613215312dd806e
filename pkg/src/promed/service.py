"""HTTP service exposing dialogue sessions with durable persistence.

Sessions persist as an append-only JSONL event log plus a snapshot per
session. Replaying a session's events through the (deterministic) engine
reconstructs the exact snapshot, which gives crash-restart safety without a
database. A per-session lock serializes turns; the graph and config are
shared read-only.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import dialogue, fusion
from .backends import BackendConfig
from .dialogue import (
    DialogueState,
    EngineConfig,
    Phase,
    SessionClosedError,
    begin_session,
    next_turn,
    transcript_lines,
)
from .kgraph import KnowledgeGraph

FUSION_D_OUT = 32


class CreateSessionBody(BaseModel):
    medical_history: str = ""
    config: dict = {}
    seed: int = 0


class MessageBody(BaseModel):
    text: str
    image_ref: Optional[str] = None
    image_embedding: Optional[list[float]] = None


@dataclass
class SessionRecord:
    state: DialogueState
    lock: threading.Lock
    event_count: int


class SessionStore:
    """Event-log + snapshot persistence for dialogue sessions."""

    def __init__(self, root: Path, graph: KnowledgeGraph, backend: BackendConfig):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.graph = graph
        self.backend = backend
        self._sessions: dict[str, SessionRecord] = {}
        self._registry_lock = threading.Lock()

    def _events_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.events.jsonl"

    def _snapshot_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.snapshot.json"

    def _append_event(self, session_id: str, event: dict) -> None:
        with open(self._events_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def _write_snapshot(self, record: SessionRecord) -> None:
        doc = {
            "event_count": record.event_count,
            "state": record.state.to_dict(),
        }
        path = self._snapshot_path(record.state.session_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)

    def create(self, body: CreateSessionBody) -> str:
        config = EngineConfig(**body.config)
        session_id = uuid.uuid4().hex
        state = begin_session(
            body.medical_history, config, self.graph, seed=body.seed, session_id=session_id
        )
        record = SessionRecord(state=state, lock=threading.Lock(), event_count=1)
        with self._registry_lock:
            self._sessions[session_id] = record
        self._append_event(
            session_id,
            {
                "type": "created",
                "medical_history": body.medical_history,
                "config": config.to_dict(),
                "seed": body.seed,
            },
        )
        self._write_snapshot(record)
        return session_id

    def get(self, session_id: str) -> SessionRecord:
        with self._registry_lock:
            record = self._sessions.get(session_id)
        if record is None:
            state = self.replay(session_id)  # crash-restart path
            record = SessionRecord(state=state, lock=threading.Lock(), event_count=self._count_events(session_id))
            with self._registry_lock:
                record = self._sessions.setdefault(session_id, record)
        return record

    def _count_events(self, session_id: str) -> int:
        path = self._events_path(session_id)
        with open(path, encoding="utf-8") as fh:
            return sum(1 for line in fh if line.strip())

    def post_message(self, session_id: str, body: MessageBody) -> dialogue.EngineAction:
        record = self.get(session_id)
        with record.lock:
            label_probs = None
            if body.image_embedding is not None:
                label_probs = self._embedding_probs(body.image_embedding)
            _, action = next_turn(
                record.state,
                body.text,
                self.graph,
                self.backend,
                image_ref=body.image_ref,
                label_probs=label_probs,
            )
            self._append_event(
                session_id,
                {
                    "type": "message",
                    "text": body.text,
                    "image_ref": body.image_ref,
                    "label_probs": list(label_probs) if label_probs is not None else None,
                },
            )
            record.event_count += 1
            self._write_snapshot(record)
            return action

    def _embedding_probs(self, embedding: list[float]) -> tuple[float, ...]:
        e = np.asarray(embedding, dtype=float)
        if e.shape != (fusion.VISUAL_DIM,):
            raise HTTPException(422, f"image_embedding must have {fusion.VISUAL_DIM} entries")
        params = _default_fusion_params()
        z = fusion.align(e, params.alignment)
        return tuple(float(p) for p in fusion.classify(z, params.classifier))

    def replay(self, session_id: str) -> DialogueState:
        """Rebuild the session state by replaying the event log."""
        path = self._events_path(session_id)
        if not path.exists():
            raise KeyError(session_id)
        events = [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        created = events[0]
        state = begin_session(
            created["medical_history"],
            EngineConfig(**created["config"]),
            self.graph,
            seed=created["seed"],
            session_id=session_id,
        )
        for ev in events[1:]:
            next_turn(
                state,
                ev["text"],
                self.graph,
                self.backend,
                image_ref=ev.get("image_ref"),
                label_probs=ev.get("label_probs"),
            )
        return state

    def load_snapshot(self, session_id: str) -> dict:
        return json.loads(self._snapshot_path(session_id).read_text(encoding="utf-8"))


_FUSION_PARAMS: Optional[fusion.FusionParams] = None
_FUSION_LOCK = threading.Lock()


def _default_fusion_params() -> fusion.FusionParams:
    global _FUSION_PARAMS
    with _FUSION_LOCK:
        if _FUSION_PARAMS is None:
            rng = np.random.default_rng(0)
            _FUSION_PARAMS = fusion.FusionParams.init_random(
                fusion.VISUAL_DIM, FUSION_D_OUT, rng
            )
    return _FUSION_PARAMS


def create_app(
    graph: KnowledgeGraph,
    backend: BackendConfig,
    store_dir: str | Path,
    cors_origins: Optional[list[str]] = None,
) -> FastAPI:
    app = FastAPI(title="promed", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = SessionStore(Path(store_dir), graph, backend)
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/graph")
    def get_graph():
        return graph.to_document()

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        try:
            session_id = store.create(body)
        except (dialogue.ConfigError, TypeError) as exc:
            raise HTTPException(400, f"invalid config: {exc}")
        return {"session_id": session_id}

    def _get_or_404(session_id: str) -> SessionRecord:
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(404, f"unknown session {session_id}")

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        _get_or_404(session_id)
        if not body.text.strip():
            raise HTTPException(422, "text must be non-empty")
        try:
            action = store.post_message(session_id, body)
        except SessionClosedError:
            raise HTTPException(409, "session is terminated")
        out = {"action": action.type.value}
        if action.type is dialogue.ActionType.ASK:
            out["question"] = action.text
            out["target_symptom"] = action.target_symptom
        elif action.type is dialogue.ActionType.REQUEST_IMAGE:
            out["question"] = action.text
        else:
            out["report"] = action.report
            out["label_probabilities"] = list(action.label_probs or ())
        return out

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        record = _get_or_404(session_id)
        with record.lock:
            snapshot = record.state.to_dict()
            snapshot["transcript"] = transcript_lines(record.state)
        return snapshot

    @app.get("/v1/sessions/{session_id}/candidates")
    def get_candidates(session_id: str):
        record = _get_or_404(session_id)
        with record.lock:
            return {"candidates": list(record.state.last_candidates)}

    @app.get("/v1/sessions/{session_id}/report")
    def get_report(session_id: str):
        record = _get_or_404(session_id)
        with record.lock:
            if record.state.phase is not Phase.TERMINATED or record.state.report_text is None:
                raise HTTPException(409, "session has not emitted a report yet")
            return {
                "report": record.state.report_text,
                "label_probabilities": list(record.state.report_probs or ()),
            }

    return app
