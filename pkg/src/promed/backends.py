"""Generative-model backends behind a single completion interface.

Three interchangeable backends:

* ``stub`` -- fully deterministic; picks from a fixed template bank by a
  stable hash of (seed, messages). Used for tests and reproducible runs.
* ``template`` -- fills fixed question patterns; the degradation target when
  a remote backend is unavailable.
* ``remote`` -- one chat-completion HTTP round-trip with retry and
  exponential backoff.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

logger = logging.getLogger(__name__)

BACKOFF_BASE_SECONDS = 0.25
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2


class BackendError(RuntimeError):
    """Raised when a backend cannot produce a completion."""


class BackendUnavailableError(BackendError):
    """Remote backend failed after all retries; callers should fall back."""


class BackendKind(str, Enum):
    STUB = "stub"
    TEMPLATE = "template"
    REMOTE = "remote"


@dataclass(frozen=True)
class Prompt:
    """A completion request: system text plus ordered chat messages."""

    system_text: str = ""
    messages: tuple[tuple[str, str], ...] = ()
    max_tokens: int = 256
    temperature: float = 0.0
    seed: Optional[int] = None


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.STUB
    endpoint: str = ""
    model_name: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    auth_env_var: str = "PROMED_API_KEY"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.kind is BackendKind.REMOTE and not (self.endpoint and self.model_name):
            raise ValueError("remote backend requires endpoint and model_name")


# Question phrasings for the stub backend; indexed by a stable hash so the
# same prompt always yields the same wording.
_QUESTION_BANK = (
    "Have you experienced {symptom} recently?",
    "Have you noticed any {symptom} lately?",
    "Are you currently having {symptom}?",
    "Has {symptom} been bothering you?",
    "Do you have {symptom} at the moment?",
)

_SYMPTOM_SLOT = re.compile(r"symptom:\s*(.+)", re.IGNORECASE)


def question_prompt(symptom_display: str, context: str = "", seed: Optional[int] = None) -> Prompt:
    """Build the prompt asking for one question about a symptom."""
    messages = []
    if context:
        messages.append(("user", context))
    messages.append(("user", f"Ask the patient one short question. symptom: {symptom_display}"))
    return Prompt(
        system_text="You are a doctor collecting symptoms from a patient. Ask one concise question.",
        messages=tuple(messages),
        seed=seed,
    )


def _stable_hash(*parts: object) -> int:
    digest = hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _slot_symptom(p: Prompt) -> Optional[str]:
    for _, text in reversed(p.messages):
        m = _SYMPTOM_SLOT.search(text)
        if m:
            return m.group(1).strip()
    return None


def _template_complete(p: Prompt) -> str:
    symptom = _slot_symptom(p)
    if symptom:
        return f"Have you experienced {symptom} recently?"
    # Non-question prompts get a neutral canned reply.
    return "Could you tell me more about how you have been feeling?"


def _stub_complete(p: Prompt) -> str:
    symptom = _slot_symptom(p)
    if symptom:
        idx = _stable_hash(p.seed, p.messages) % len(_QUESTION_BANK)
        return _QUESTION_BANK[idx].format(symptom=symptom)
    return _template_complete(p)


def _remote_complete(cfg: BackendConfig, p: Prompt) -> str:
    import requests

    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.auth_env_var, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"

    messages = []
    if p.system_text:
        messages.append({"role": "system", "content": p.system_text})
    messages.extend({"role": role, "content": text} for role, text in p.messages)
    body = {
        "model": cfg.model_name,
        "messages": messages,
        "max_tokens": p.max_tokens,
        "temperature": p.temperature,
    }
    if p.seed is not None:
        body["seed"] = p.seed

    rng = random.Random(p.seed)
    last_error: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            resp = requests.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001 - any transport/shape failure retries
            last_error = exc
            if attempt < cfg.max_retries:
                delay = BACKOFF_BASE_SECONDS * (BACKOFF_FACTOR**attempt)
                delay *= 1.0 + rng.uniform(-BACKOFF_JITTER, BACKOFF_JITTER)
                logger.warning("remote backend attempt %d failed: %s", attempt + 1, exc)
                time.sleep(delay)
    raise BackendUnavailableError(
        f"remote backend failed after {cfg.max_retries + 1} attempts: {last_error}"
    )


def complete(cfg: BackendConfig, p: Prompt) -> str:
    """Produce one completion for the prompt with the configured backend."""
    if not p.messages:
        raise BackendError("prompt has no messages")
    if cfg.kind is BackendKind.STUB:
        return _stub_complete(p)
    if cfg.kind is BackendKind.TEMPLATE:
        return _template_complete(p)
    return _remote_complete(cfg, p)


_SCORE_RE = re.compile(r"\b(10|[0-9])\b")


def score_relevance(
    cfg: BackendConfig, candidate_text: str, disease_name: str, graph_weight: float
) -> int:
    """Score a candidate question's relevance to the target disease, 0-10.

    Remote backends are asked for a single integer; anything that fails to
    parse (or any backend failure) degrades to the deterministic fallback
    round(10 * graph_weight), so ranking never aborts a session.
    """
    if not 0.0 <= graph_weight <= 1.0:
        raise ValueError(f"graph_weight must be in [0, 1], got {graph_weight}")
    fallback = round(10 * graph_weight)
    if cfg.kind is not BackendKind.REMOTE:
        return fallback
    prompt = Prompt(
        system_text=(
            "Rate how relevant the question is for diagnosing the disease. "
            "Reply with a single integer from 0 (irrelevant) to 10 (most relevant)."
        ),
        messages=(("user", f"Disease: {disease_name}\nQuestion: {candidate_text}"),),
        max_tokens=8,
    )
    try:
        reply = _remote_complete(cfg, prompt)
    except BackendUnavailableError:
        return fallback
    m = _SCORE_RE.search(reply)
    if not m:
        return fallback
    return max(0, min(10, int(m.group(1))))
