"""Synthetic proactive-dialogue corpus generation.

Each dialogue is grounded in one history record: the virtual patient opens
with concepts drawn from the record, the virtual doctor asks backend-
generated questions, and the patient affirms or denies depending on whether
the asked concept appears in the record. A consistency score measures how
many of the record's clinical concepts surface in the dialogue, and hybrid
mixing combines synthetic and real dialogues deterministically.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Optional, Sequence

from . import backends
from .backends import BackendConfig
from .kgraph import ConceptKind, KnowledgeGraph, tokenize
from .labels import NUM_CATEGORIES

CORPUS_VERSION = 1
DEFAULT_CONSISTENCY_THRESHOLD = 0.6

# Counts from the reference hybrid corpus, recorded as metadata only.
REFERENCE_SYNTHETIC_COUNT = 66149
REFERENCE_REAL_COUNT = 12250


class CorpusError(ValueError):
    pass


class DialogueSource(str, Enum):
    SYNTHETIC = "synthetic"
    REAL = "real"


@dataclass(frozen=True)
class HistoryRecord:
    record_id: str
    medical_history: str
    findings: str
    label_vector: tuple[bool, ...]

    def __post_init__(self):
        if len(self.label_vector) != NUM_CATEGORIES:
            raise CorpusError(f"label_vector must have {NUM_CATEGORIES} entries")
        if not self.findings and any(self.label_vector):
            raise CorpusError("findings may be empty only when all labels are false")


@dataclass
class DialogueRecord:
    dialogue_id: str
    source: DialogueSource
    turns: list[tuple[str, str]]  # (role, text), alternating, patient first
    concept_tags: set[str] = field(default_factory=set)
    origin_record: Optional[str] = None

    def __post_init__(self):
        for i, (role, _text) in enumerate(self.turns):
            expected = "patient" if i % 2 == 0 else "doctor"
            if role != expected:
                raise CorpusError(f"turn {i} must have role {expected!r}, got {role!r}")
        if self.source is DialogueSource.SYNTHETIC and not self.origin_record:
            raise CorpusError("synthetic dialogues must carry origin_record")

    def to_json(self) -> str:
        return json.dumps(
            {
                "dialogue_id": self.dialogue_id,
                "source": self.source.value,
                "turns": [[r, t] for r, t in self.turns],
                "concept_tags": sorted(self.concept_tags),
                "origin_record": self.origin_record,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "DialogueRecord":
        d = json.loads(line)
        return cls(
            dialogue_id=d["dialogue_id"],
            source=DialogueSource(d["source"]),
            turns=[(r, t) for r, t in d["turns"]],
            concept_tags=set(d.get("concept_tags", ())),
            origin_record=d.get("origin_record"),
        )


def find_concepts(text: str, graph: KnowledgeGraph) -> list[str]:
    """Graph concept ids whose aliases occur in the text, in mention order."""
    tokens = tokenize(text)
    consumed = [False] * len(tokens)
    hits: list[tuple[int, str]] = []
    for alias_tokens, concept_id in graph.alias_index():
        n = len(alias_tokens)
        for start in range(0, len(tokens) - n + 1):
            if any(consumed[start : start + n]):
                continue
            if tuple(tokens[start : start + n]) == alias_tokens:
                for i in range(start, start + n):
                    consumed[i] = True
                hits.append((start, concept_id))
    hits.sort()
    seen: set[str] = set()
    out = []
    for _, cid in hits:
        if cid not in seen:
            seen.add(cid)
            out.append(cid)
    return out


def generate_dialogue(
    rec: HistoryRecord,
    backend: BackendConfig,
    graph: KnowledgeGraph,
    rounds: int = 3,
    seed: int = 0,
) -> DialogueRecord:
    """Generate one patient-initiated dialogue of `rounds` (patient, doctor)
    turn pairs grounded in the record's concepts.

    Each patient turn reveals at most two not-yet-revealed record concepts
    and answers the doctor's previous question (affirm when the asked
    concept is in the record, deny otherwise). Backend failures degrade to
    template questions, so generation never fails.
    """
    if rounds < 1:
        raise CorpusError("rounds must be >= 1")

    record_concepts = find_concepts(f"{rec.medical_history} {rec.findings}", graph)
    unrevealed = list(record_concepts)
    record_set = set(record_concepts)
    rng = random.Random((seed, rec.record_id).__repr__())

    # Symptoms the doctor may probe, biased toward the record's diseases.
    probe_pool: list[str] = [c for c in record_concepts if graph.concept(c).kind is ConceptKind.SYMPTOM]
    for did in record_concepts:
        if graph.concept(did).kind is ConceptKind.DISEASE:
            probe_pool.extend(s for s, _ in graph.top_symptoms(did, k=5))
    probe_pool.extend(graph.symptom_ids())
    probe_order: list[str] = []
    for s in probe_pool:
        if s not in probe_order:
            probe_order.append(s)

    turns: list[tuple[str, str]] = []
    tags: set[str] = set()
    asked: Optional[str] = None

    for rnd in range(rounds):
        # patient turn
        parts: list[str] = []
        if asked is not None:
            name = graph.concept(asked).display_name
            if asked in record_set:
                parts.append(f"Yes, I do have {name}.")
                tags.add(asked)
            else:
                parts.append(f"No, I have not had {name}.")
            unrevealed = [c for c in unrevealed if c != asked]
        reveal = unrevealed[:2]
        del unrevealed[:2]
        if reveal:
            names = " and ".join(graph.concept(c).display_name for c in reveal)
            opener = "Hello doctor, I have been dealing with" if rnd == 0 else "I should also mention"
            parts.append(f"{opener} {names}.")
            tags.update(reveal)
        if not parts:
            parts.append("Nothing else comes to mind." if rnd else "Hello doctor, I have not been feeling well lately.")
        turns.append(("patient", " ".join(parts)))

        # doctor turn
        target = next((s for s in probe_order if s not in tags and s != asked), None)
        if target is None:
            target = probe_order[rng.randrange(len(probe_order))] if probe_order else None
        if target is not None:
            probe_order = [s for s in probe_order if s != target]
            display = graph.concept(target).display_name
            prompt = backends.question_prompt(display, seed=seed)
            try:
                text = backends.complete(backend, prompt)
            except backends.BackendUnavailableError:
                text = backends.complete(BackendConfig(kind=backends.BackendKind.TEMPLATE), prompt)
            asked = target
        else:
            text = "Is there anything else you would like to tell me?"
            asked = None
        turns.append(("doctor", text))

    # Tags cover concepts mentioned in any turn, doctor questions included.
    for _, text in turns:
        tags.update(find_concepts(text, graph))

    return DialogueRecord(
        dialogue_id=f"{rec.record_id}-dlg",
        source=DialogueSource.SYNTHETIC,
        turns=turns,
        concept_tags=tags,
        origin_record=rec.record_id,
    )


def validate_consistency(
    d: DialogueRecord, rec: HistoryRecord, graph: KnowledgeGraph
) -> float:
    """Fraction of the record's clinical concepts that appear in the
    dialogue; vacuously 1.0 for records with no recognizable concepts."""
    if d.origin_record != rec.record_id:
        raise CorpusError(
            f"dialogue origin {d.origin_record!r} does not match record {rec.record_id!r}"
        )
    record_concepts = set(find_concepts(f"{rec.medical_history} {rec.findings}", graph))
    if not record_concepts:
        return 1.0
    return len(record_concepts & d.concept_tags) / len(record_concepts)


def mix_hybrid(
    synthetic: Sequence[DialogueRecord],
    real: Sequence[DialogueRecord],
    seed: int,
) -> list[DialogueRecord]:
    """Concatenate then deterministically shuffle; counts preserved exactly."""
    ids = [d.dialogue_id for d in synthetic] + [d.dialogue_id for d in real]
    if len(ids) != len(set(ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise CorpusError(f"duplicate dialogue ids across inputs: {dupes[:5]}")
    mixed = list(synthetic) + list(real)
    random.Random(seed).shuffle(mixed)
    return mixed


def corpus_metadata(
    backend: BackendConfig,
    seed: int,
    threshold: float,
    synthetic_count: int,
    real_count: int,
) -> dict:
    return {
        "prodial_version": CORPUS_VERSION,
        "backend": backend.kind.value,
        "seed": seed,
        "consistency_threshold": threshold,
        "synthetic_count": synthetic_count,
        "real_count": real_count,
        "reference_ratio": f"{REFERENCE_SYNTHETIC_COUNT}:{REFERENCE_REAL_COUNT}",
    }


def write_corpus(out: IO[str], records: Iterable[DialogueRecord], metadata: dict) -> int:
    """Write the JSONL corpus with a leading metadata line; returns count."""
    out.write(json.dumps(metadata, ensure_ascii=False) + "\n")
    n = 0
    for rec in records:
        out.write(rec.to_json() + "\n")
        n += 1
    return n


def read_corpus(source: IO[str]) -> tuple[dict, list[DialogueRecord]]:
    lines = [ln for ln in source.read().splitlines() if ln.strip()]
    if not lines:
        raise CorpusError("empty corpus file")
    metadata = json.loads(lines[0])
    if "prodial_version" not in metadata:
        raise CorpusError("corpus file missing metadata line")
    return metadata, [DialogueRecord.from_json(ln) for ln in lines[1:]]


def load_history_records(source: IO[str]) -> list[HistoryRecord]:
    records = []
    for i, line in enumerate(source.read().splitlines()):
        if not line.strip():
            continue
        d = json.loads(line)
        records.append(
            HistoryRecord(
                record_id=d["record_id"],
                medical_history=d.get("medical_history", ""),
                findings=d.get("findings", ""),
                label_vector=tuple(bool(x) for x in d["label_vector"]),
            )
        )
    ids = [r.record_id for r in records]
    if len(ids) != len(set(ids)):
        raise CorpusError("duplicate record_id in history records")
    return records
