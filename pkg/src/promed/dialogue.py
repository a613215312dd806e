"""Proactive multi-round dialogue loop.

Each call to :func:`next_turn` ingests one patient utterance, updates the
symptom base, re-ranks the candidate diseases, and either asks the single
best follow-up question, requests a medical image, or emits the final
report. The loop is fully deterministic under the stub backend and a fixed
session seed.
"""

from __future__ import annotations

import datetime as dt
import json
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from . import backends, labels
from .backends import BackendConfig, BackendUnavailableError, Prompt
from .kgraph import ConceptKind, KnowledgeGraph, tokenize

# Deterministic logical clock: turn timestamps advance one second per turn
# from a fixed epoch so transcripts are byte-identical across runs.
CLOCK_EPOCH = dt.datetime(2000, 1, 1, tzinfo=dt.timezone.utc)

NEGATION_CUES = frozenset({"no", "not", "never", "denies", "without"})
NEGATION_WINDOW = 3

_AFFIRM_TOKENS = frozenset({"yes", "yeah", "yep", "correct", "definitely"})
_DENY_TOKENS = frozenset({"no", "nope", "none", "nothing"})
_END_PHRASES = ("goodbye", "bye", "that's all", "thats all", "stop now", "i want to stop")

DISCLAIMER = (
    "This assistant provides informational triage support only and is not a "
    "substitute for professional medical advice."
)


class SessionClosedError(RuntimeError):
    """next_turn was called on a terminated session."""


class ConfigError(ValueError):
    pass


class Role(str, Enum):
    PATIENT = "patient"
    SYSTEM = "system"


class TurnKind(str, Enum):
    UTTERANCE = "utterance"
    QUESTION = "question"
    IMAGE_REQUEST = "image_request"
    REPORT = "report"


class Phase(str, Enum):
    COLLECTING = "collecting"
    AWAITING_VISUAL = "awaiting_visual"
    DIAGNOSING = "diagnosing"
    TERMINATED = "terminated"


class SymptomStatus(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"
    ASKED_UNANSWERED = "asked_unanswered"


class TerminationReason(str, Enum):
    CONFIDENCE_REACHED = "confidence_reached"
    SYMPTOMS_EXHAUSTED = "symptoms_exhausted"
    MAX_ROUNDS = "max_rounds"
    PATIENT_ENDED = "patient_ended"
    NONE = "none"


@dataclass(frozen=True)
class TerminationDecision:
    terminate: bool
    reason: TerminationReason

    def __post_init__(self):
        if (self.reason is TerminationReason.NONE) == self.terminate:
            raise ValueError("reason must be 'none' exactly when not terminating")


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str
    timestamp: dt.datetime
    kind: TurnKind
    round: int = 0

    def __post_init__(self):
        if not self.text:
            raise ValueError("turn text must be non-empty")
        if self.role is Role.SYSTEM and self.kind is TurnKind.UTTERANCE:
            raise ValueError("system turns must carry a non-utterance kind")

    def to_record(self) -> dict:
        return {
            "role": self.role.value,
            "kind": self.kind.value,
            "text": self.text,
            "timestamp": self.timestamp.isoformat().replace("+00:00", "Z"),
            "round": self.round,
        }


class SymptomBase:
    """Per-session record of confirmed, denied, and asked symptoms."""

    def __init__(self, entries: Optional[dict[str, SymptomStatus]] = None):
        self._entries: dict[str, SymptomStatus] = dict(entries or {})

    @property
    def entries(self) -> dict[str, SymptomStatus]:
        return dict(self._entries)

    def status(self, symptom_id: str) -> Optional[SymptomStatus]:
        return self._entries.get(symptom_id)

    def checked_ids(self) -> set[str]:
        """Every symptom with any recorded status (asked ones included)."""
        return set(self._entries)

    def answered_ids(self) -> set[str]:
        return {s for s, st in self._entries.items() if st is not SymptomStatus.ASKED_UNANSWERED}

    def record_answer(self, symptom_id: str, status: SymptomStatus) -> None:
        """Set present/absent from a new patient turn; always allowed."""
        self._entries[symptom_id] = status

    def mark_asked(self, symptom_id: str) -> None:
        """Flag a symptom as asked; never downgrades an answered status."""
        self._entries.setdefault(symptom_id, SymptomStatus.ASKED_UNANSWERED)

    def to_dict(self) -> dict[str, str]:
        return {s: st.value for s, st in sorted(self._entries.items())}

    @classmethod
    def from_dict(cls, data: dict[str, str]) -> "SymptomBase":
        return cls({s: SymptomStatus(v) for s, v in data.items()})


@dataclass(frozen=True)
class EngineConfig:
    n_candidates: int = 5
    max_rounds: int = 10
    confidence_threshold: float = 0.9
    top_k_symptoms: int = 3
    min_score: int = 3
    report_threshold: float = 0.25

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ConfigError("n_candidates must be >= 1")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ConfigError("confidence_threshold must be in (0, 1]")
        if self.top_k_symptoms < 1:
            raise ConfigError("top_k_symptoms must be >= 1")
        if not 0 <= self.min_score <= 10:
            raise ConfigError("min_score must be in [0, 10]")

    def to_dict(self) -> dict:
        return {
            "n_candidates": self.n_candidates,
            "max_rounds": self.max_rounds,
            "confidence_threshold": self.confidence_threshold,
            "top_k_symptoms": self.top_k_symptoms,
            "min_score": self.min_score,
            "report_threshold": self.report_threshold,
        }


class CandidateSource(str, Enum):
    BACKEND = "backend"
    TEMPLATE = "template"


@dataclass(frozen=True)
class QueryCandidate:
    text: str
    target_symptom: str
    score: int = 0
    source: CandidateSource = CandidateSource.BACKEND

    def __post_init__(self):
        if not 0 <= self.score <= 10:
            raise ValueError("score must be in [0, 10]")


class ActionType(str, Enum):
    ASK = "ask"
    REQUEST_IMAGE = "request_image"
    EMIT_REPORT = "emit_report"


@dataclass(frozen=True)
class EngineAction:
    type: ActionType
    text: str
    target_symptom: Optional[str] = None
    report: Optional[str] = None
    label_probs: Optional[tuple[float, ...]] = None


@dataclass
class DialogueState:
    session_id: str
    config: EngineConfig
    medical_history: str = ""
    seed: int = 0
    history: list[Turn] = field(default_factory=list)
    base: SymptomBase = field(default_factory=SymptomBase)
    target_disease: Optional[str] = None
    exhausted_diseases: set[str] = field(default_factory=set)
    round: int = 0
    phase: Phase = Phase.COLLECTING
    confidence: float = 0.0
    termination_reason: TerminationReason = TerminationReason.NONE
    visuals_requested: bool = False
    has_image: bool = False
    pending_symptom: Optional[str] = None
    pending_reason: Optional[TerminationReason] = None
    last_candidates: list[dict] = field(default_factory=list)
    report_text: Optional[str] = None
    report_probs: Optional[tuple[float, ...]] = None

    def _now(self) -> dt.datetime:
        return CLOCK_EPOCH + dt.timedelta(seconds=len(self.history))

    def append_turn(self, role: Role, text: str, kind: TurnKind) -> Turn:
        turn = Turn(role=role, text=text, timestamp=self._now(), kind=kind, round=self.round)
        self.history.append(turn)
        return turn

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "config": self.config.to_dict(),
            "medical_history": self.medical_history,
            "seed": self.seed,
            "history": [t.to_record() for t in self.history],
            "base": self.base.to_dict(),
            "target_disease": self.target_disease,
            "exhausted_diseases": sorted(self.exhausted_diseases),
            "round": self.round,
            "phase": self.phase.value,
            "confidence": self.confidence,
            "termination_reason": self.termination_reason.value,
            "visuals_requested": self.visuals_requested,
            "has_image": self.has_image,
            "pending_symptom": self.pending_symptom,
            "pending_reason": self.pending_reason.value if self.pending_reason else None,
            "last_candidates": self.last_candidates,
            "report_text": self.report_text,
            "report_probs": list(self.report_probs) if self.report_probs else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DialogueState":
        turns = [
            Turn(
                role=Role(t["role"]),
                text=t["text"],
                timestamp=dt.datetime.fromisoformat(t["timestamp"].replace("Z", "+00:00")),
                kind=TurnKind(t["kind"]),
                round=t["round"],
            )
            for t in data["history"]
        ]
        return cls(
            session_id=data["session_id"],
            config=EngineConfig(**data["config"]),
            medical_history=data["medical_history"],
            seed=data["seed"],
            history=turns,
            base=SymptomBase.from_dict(data["base"]),
            target_disease=data["target_disease"],
            exhausted_diseases=set(data["exhausted_diseases"]),
            round=data["round"],
            phase=Phase(data["phase"]),
            confidence=data["confidence"],
            termination_reason=TerminationReason(data["termination_reason"]),
            visuals_requested=data["visuals_requested"],
            has_image=data["has_image"],
            pending_symptom=data.get("pending_symptom"),
            pending_reason=TerminationReason(data["pending_reason"]) if data.get("pending_reason") else None,
            last_candidates=list(data.get("last_candidates", [])),
            report_text=data.get("report_text"),
            report_probs=tuple(data["report_probs"]) if data.get("report_probs") else None,
        )


def transcript_lines(state: DialogueState) -> list[str]:
    """Line-delimited JSON export of the transcript, one record per turn."""
    return [json.dumps(t.to_record(), ensure_ascii=False) for t in state.history]


# ----------------------------------------------------------------------
def begin_session(
    medical_history: str,
    config: EngineConfig,
    graph: KnowledgeGraph,
    seed: int = 0,
    session_id: Optional[str] = None,
) -> DialogueState:
    """Open a session. The patient speaks first, so nothing is asked yet."""
    del graph  # validated lazily; sessions share one immutable graph
    return DialogueState(
        session_id=session_id or uuid.uuid4().hex,
        config=config,
        medical_history=medical_history,
        seed=seed,
    )


def extract_symptoms(utterance: str, graph: KnowledgeGraph) -> list[tuple[str, SymptomStatus]]:
    """Alias-match symptoms in an utterance, longest alias first.

    A negation cue within NEGATION_WINDOW tokens before the match flips the
    polarity to absent. Duplicate mentions keep the last polarity.
    """
    tokens = tokenize(utterance)
    consumed = [False] * len(tokens)
    hits: list[tuple[int, str, SymptomStatus]] = []

    for alias_tokens, concept_id in graph.alias_index():
        if graph.concept(concept_id).kind is not ConceptKind.SYMPTOM:
            continue
        n = len(alias_tokens)
        for start in range(0, len(tokens) - n + 1):
            if any(consumed[start : start + n]):
                continue
            if tuple(tokens[start : start + n]) != alias_tokens:
                continue
            window = tokens[max(0, start - NEGATION_WINDOW) : start]
            polarity = (
                SymptomStatus.ABSENT
                if any(t in NEGATION_CUES for t in window)
                else SymptomStatus.PRESENT
            )
            for i in range(start, start + n):
                consumed[i] = True
            hits.append((start, concept_id, polarity))

    hits.sort(key=lambda h: h[0])
    result: dict[str, SymptomStatus] = {}
    order: list[str] = []
    for _, sid, pol in hits:
        if sid not in result:
            order.append(sid)
        result[sid] = pol  # last mention wins
    return [(sid, result[sid]) for sid in order]


def generate_candidates(
    state: DialogueState,
    graph: KnowledgeGraph,
    backend: BackendConfig,
    n: int,
) -> list[QueryCandidate]:
    """One candidate question per unchecked symptom of the target disease.

    Returns min(n, available) candidates ordered by symptom weight. Backend
    failures fall back to the template source; generation never fails.
    """
    if state.target_disease is None:
        ranked = graph.rank_diseases(state.base.entries)
        remaining = [(d, s) for d, s in ranked if d not in state.exhausted_diseases]
        if not remaining:
            return []
        state.target_disease = remaining[0][0]

    unchecked = graph.top_symptoms(
        state.target_disease, exclude=state.base.checked_ids(), k=max(n, 1)
    )
    out: list[QueryCandidate] = []
    for sid, _weight in unchecked[:n]:
        display = graph.concept(sid).display_name
        prompt = backends.question_prompt(display, seed=state.seed)
        try:
            text = backends.complete(backend, prompt)
            source = (
                CandidateSource.TEMPLATE
                if backend.kind is backends.BackendKind.TEMPLATE
                else CandidateSource.BACKEND
            )
        except BackendUnavailableError:
            text = backends.complete(
                BackendConfig(kind=backends.BackendKind.TEMPLATE), prompt
            )
            source = CandidateSource.TEMPLATE
        out.append(QueryCandidate(text=text, target_symptom=sid, source=source))
    return out


def rank_candidates(
    candidates: Sequence[QueryCandidate],
    state: DialogueState,
    graph: KnowledgeGraph,
    ranker: BackendConfig,
) -> list[QueryCandidate]:
    """Score candidates 0-10, reject repeats, filter low scores, and sort.

    Candidates targeting already-answered symptoms are removed first; the
    full decision trail (including rejections) lands in
    ``state.last_candidates`` for inspection.
    """
    disease = state.target_disease or ""
    disease_name = graph.concept(disease).display_name if disease else ""
    trail: list[dict] = []
    kept: list[tuple[QueryCandidate, float]] = []
    for cand in candidates:
        status = state.base.status(cand.target_symptom)
        weight = graph.correlation(disease, cand.target_symptom) if disease else 0.0
        if status in (SymptomStatus.PRESENT, SymptomStatus.ABSENT):
            trail.append(
                {"text": cand.text, "target_symptom": cand.target_symptom,
                 "score": None, "rejected": True, "reason": "repeat"}
            )
            continue
        score = backends.score_relevance(ranker, cand.text, disease_name, weight)
        scored = replace(cand, score=score)
        if score < state.config.min_score:
            trail.append(
                {"text": cand.text, "target_symptom": cand.target_symptom,
                 "score": score, "rejected": True, "reason": "low_score"}
            )
            continue
        kept.append((scored, weight))

    kept.sort(key=lambda cw: (-cw[0].score, -cw[1], cw[0].target_symptom))
    for cand, _w in kept:
        trail.append(
            {"text": cand.text, "target_symptom": cand.target_symptom,
             "score": cand.score, "rejected": False, "reason": None}
        )
    state.last_candidates = trail
    return [c for c, _ in kept]


def _patient_ended(utterance: str) -> bool:
    lower = " ".join(tokenize(utterance))
    return any(phrase.replace("'", "") in lower for phrase in _END_PHRASES)


def _all_diseases_exhausted(state: DialogueState, graph: KnowledgeGraph, config: EngineConfig) -> bool:
    checked = state.base.checked_ids()
    for did in graph.disease_ids():
        top = graph.top_symptoms(did, k=config.top_k_symptoms)
        if any(sid not in checked for sid, _ in top):
            return False
    return True


def should_terminate(
    state: DialogueState, graph: KnowledgeGraph, config: EngineConfig
) -> TerminationDecision:
    if state.confidence >= config.confidence_threshold:
        return TerminationDecision(True, TerminationReason.CONFIDENCE_REACHED)
    if state.round >= config.max_rounds:
        return TerminationDecision(True, TerminationReason.MAX_ROUNDS)
    if _all_diseases_exhausted(state, graph, config):
        return TerminationDecision(True, TerminationReason.SYMPTOMS_EXHAUSTED)
    last_patient = next((t for t in reversed(state.history) if t.role is Role.PATIENT), None)
    if last_patient is not None and _patient_ended(last_patient.text):
        return TerminationDecision(True, TerminationReason.PATIENT_ENDED)
    return TerminationDecision(False, TerminationReason.NONE)


def advance_target_disease(
    state: DialogueState, graph: KnowledgeGraph, config: EngineConfig
) -> DialogueState:
    """Exhaust the current target and move to the next best disease."""
    if state.target_disease is not None:
        state.exhausted_diseases.add(state.target_disease)
        state.target_disease = None
    ranked = graph.rank_diseases(state.base.entries)
    for did, _score in ranked:
        if did not in state.exhausted_diseases:
            state.target_disease = did
            break
    return state


def _refresh_target(state: DialogueState, graph: KnowledgeGraph, config: EngineConfig) -> None:
    """Keep target = ranking argmax over non-exhausted diseases, advancing
    past diseases whose top-k symptoms are all checked."""
    checked = state.base.checked_ids()
    ranked = graph.rank_diseases(state.base.entries)
    state.target_disease = None
    for did, _score in ranked:
        if did in state.exhausted_diseases:
            continue
        top = graph.top_symptoms(did, k=config.top_k_symptoms)
        if top and all(sid in checked for sid, _ in top):
            state.exhausted_diseases.add(did)
            continue
        state.target_disease = did
        break


def _update_confidence(state: DialogueState, graph: KnowledgeGraph) -> None:
    ranked = graph.rank_diseases(state.base.entries)
    total = sum(score for _, score in ranked)
    if state.target_disease is None or total <= 0.0:
        state.confidence = 0.0
        return
    target_score = dict(ranked).get(state.target_disease, 0.0)
    state.confidence = target_score / total


def build_report(state: DialogueState, graph: KnowledgeGraph) -> tuple[str, tuple[float, ...]]:
    """Findings summary plus a 14-dim label probability vector.

    Probabilities come from normalized disease scores mapped onto the label
    vocabulary (or from an attached classifier output when present).
    """
    from .fusion import assemble_report

    present = sorted(
        s for s, st in state.base.entries.items() if st is SymptomStatus.PRESENT
    )
    absent = sorted(s for s, st in state.base.entries.items() if st is SymptomStatus.ABSENT)

    def names(ids):
        return ", ".join(graph.concept(s).display_name for s in ids)

    sentences = []
    if state.medical_history:
        sentences.append(f"Medical history: {state.medical_history}.")
    if present:
        sentences.append(f"The patient reports {names(present)}.")
    for sid in absent:
        sentences.append(f"No {graph.concept(sid).display_name} reported.")
    if not present and not absent:
        sentences.append("No symptoms were confirmed during the interview.")
    findings = " ".join(sentences)

    if state.report_probs is not None:
        probs = state.report_probs
    else:
        ranked = dict(graph.rank_diseases(state.base.entries))
        total = sum(ranked.values())
        probs_list = [0.0] * labels.NUM_CATEGORIES
        if total > 0:
            for did, score in ranked.items():
                cat = labels.category_for_disease(did)
                if cat is not None:
                    probs_list[labels.category_index(cat)] = score / total
        probs = tuple(probs_list)

    report = assemble_report(findings, probs, list(labels.CATEGORIES), state.config.report_threshold)
    return report, probs


def next_turn(
    state: DialogueState,
    patient_utterance: str,
    graph: KnowledgeGraph,
    backend: BackendConfig,
    config: Optional[EngineConfig] = None,
    image_ref: Optional[str] = None,
    label_probs: Optional[Sequence[float]] = None,
) -> tuple[DialogueState, EngineAction]:
    """Advance the dialogue by one round.

    Appends the patient turn, updates the symptom base and target disease,
    then either asks the best ranked question, requests a medical image, or
    emits the final report. ``label_probs`` (from an attached image run
    through the classifier) replaces the graph-based confidence when given.
    """
    config = config or state.config
    if state.phase is Phase.TERMINATED:
        raise SessionClosedError(f"session {state.session_id} is terminated")
    if not patient_utterance:
        raise ValueError("patient utterance must be non-empty")

    state.round += 1
    state.append_turn(Role.PATIENT, patient_utterance, TurnKind.UTTERANCE)

    extracted = extract_symptoms(patient_utterance, graph)
    for sid, status in extracted:
        state.base.record_answer(sid, status)

    # Resolve a bare yes/no answer to the last asked symptom.
    if state.pending_symptom and state.pending_symptom not in dict(extracted):
        head = tokenize(patient_utterance)[:2]
        if any(t in _AFFIRM_TOKENS for t in head):
            state.base.record_answer(state.pending_symptom, SymptomStatus.PRESENT)
        elif any(t in _DENY_TOKENS for t in head):
            state.base.record_answer(state.pending_symptom, SymptomStatus.ABSENT)
    state.pending_symptom = None

    if image_ref is not None:
        state.has_image = True
    if label_probs is not None:
        state.report_probs = tuple(float(p) for p in label_probs)

    _refresh_target(state, graph, config)
    if label_probs is not None:
        state.confidence = max(float(p) for p in label_probs)
    else:
        _update_confidence(state, graph)

    if state.phase is Phase.AWAITING_VISUAL:
        # The image was already requested; this call closes the session.
        reason = state.pending_reason or TerminationReason.SYMPTOMS_EXHAUSTED
        return state, _terminate(state, graph, reason)

    decision = should_terminate(state, graph, config)
    if not decision.terminate:
        while True:
            if state.target_disease is None:
                decision = TerminationDecision(True, TerminationReason.SYMPTOMS_EXHAUSTED)
                break
            cands = generate_candidates(state, graph, backend, config.n_candidates)
            ranked = rank_candidates(cands, state, graph, backend)
            if ranked:
                best = ranked[0]
                state.base.mark_asked(best.target_symptom)
                state.pending_symptom = best.target_symptom
                state.append_turn(Role.SYSTEM, best.text, TurnKind.QUESTION)
                return state, EngineAction(
                    type=ActionType.ASK, text=best.text, target_symptom=best.target_symptom
                )
            # Nothing askable for this target (all filtered or repeats):
            # exhaust it and move on.
            advance_target_disease(state, graph, config)

    # Termination path. An image is requested once, provided the budget
    # allows one more call; otherwise the report is emitted immediately so
    # every session closes within max_rounds calls.
    if (
        not state.has_image
        and not state.visuals_requested
        and state.round < config.max_rounds
        and decision.reason is not TerminationReason.PATIENT_ENDED
    ):
        state.visuals_requested = True
        state.pending_reason = decision.reason
        state.phase = Phase.AWAITING_VISUAL
        text = (
            "Could you share a relevant medical image (for example a chest "
            "X-ray), or reply to continue without one?"
        )
        state.append_turn(Role.SYSTEM, text, TurnKind.IMAGE_REQUEST)
        return state, EngineAction(type=ActionType.REQUEST_IMAGE, text=text)

    return state, _terminate(state, graph, decision.reason)


def _terminate(
    state: DialogueState, graph: KnowledgeGraph, reason: TerminationReason
) -> EngineAction:
    state.phase = Phase.TERMINATED
    state.termination_reason = reason
    report, probs = build_report(state, graph)
    state.report_text = report
    state.report_probs = probs
    state.append_turn(Role.SYSTEM, report, TurnKind.REPORT)
    return EngineAction(
        type=ActionType.EMIT_REPORT, text=report, report=report, label_probs=probs
    )
