"""Weighted bipartite disease-symptom knowledge graph.

The graph stores diseases, symptoms, and weighted correlation edges between
them. It is immutable after load and answers the ranking queries that drive
question selection: which disease best explains the collected symptoms, and
which of its symptoms are worth asking about next.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping, Sequence, Union

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    """Raised for malformed graph documents or invalid queries."""


class ConceptKind(str, Enum):
    DISEASE = "disease"
    SYMPTOM = "symptom"


@dataclass(frozen=True)
class ClinicalConcept:
    """A disease or symptom node."""

    id: str
    display_name: str
    kind: ConceptKind
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise GraphError("concept id must be non-empty")
        if any(not a for a in self.aliases):
            raise GraphError(f"concept {self.id!r}: aliases must be non-empty")


@dataclass(frozen=True)
class ConceptEdge:
    """Disease-to-symptom correlation edge; weight in (0, 1]."""

    disease_id: str
    symptom_id: str
    weight: float


class KnowledgeGraph:
    """Immutable bipartite graph over clinical concepts.

    Adjacency lists are precomputed per disease, sorted by weight descending
    then symptom id ascending, so every ranking query is deterministic.
    """

    def __init__(self, concepts: Iterable[ClinicalConcept], edges: Iterable[ConceptEdge]):
        self._concepts: dict[str, ClinicalConcept] = {}
        for c in concepts:
            if c.id in self._concepts:
                raise GraphError(f"duplicate concept id {c.id!r}")
            self._concepts[c.id] = c

        self._edges: list[ConceptEdge] = []
        self._weights: dict[tuple[str, str], float] = {}
        for e in edges:
            d = self._concepts.get(e.disease_id)
            s = self._concepts.get(e.symptom_id)
            if d is None or s is None:
                missing = e.disease_id if d is None else e.symptom_id
                raise GraphError(f"dangling endpoint {missing!r} on edge ({e.disease_id}, {e.symptom_id})")
            if d.kind is not ConceptKind.DISEASE or s.kind is not ConceptKind.SYMPTOM:
                raise GraphError(
                    f"edge ({e.disease_id}, {e.symptom_id}) must link a disease to a symptom"
                )
            if not (0.0 < e.weight <= 1.0):
                raise GraphError(
                    f"edge ({e.disease_id}, {e.symptom_id}): weight out of range (0, 1]: {e.weight}"
                )
            key = (e.disease_id, e.symptom_id)
            if key in self._weights:
                raise GraphError(f"duplicate edge ({e.disease_id}, {e.symptom_id})")
            self._weights[key] = e.weight
            self._edges.append(e)

        self._adjacency: dict[str, list[tuple[str, float]]] = {
            d: [] for d in self.disease_ids()
        }
        for e in self._edges:
            self._adjacency[e.disease_id].append((e.symptom_id, e.weight))
        for sid in self._adjacency:
            self._adjacency[sid].sort(key=lambda sw: (-sw[1], sw[0]))

        # Alias index for symptom extraction: token tuple -> symptom id,
        # longest aliases matched first.
        self._alias_index: list[tuple[tuple[str, ...], str]] = []
        for c in self._concepts.values():
            names = set(c.aliases) | {c.display_name.lower(), c.id.replace("_", " ")}
            for name in names:
                toks = tuple(tokenize(name))
                if toks:
                    self._alias_index.append((toks, c.id))
        self._alias_index.sort(key=lambda t: (-len(t[0]), t[0]))

    # ------------------------------------------------------------------
    def concept(self, concept_id: str) -> ClinicalConcept:
        try:
            return self._concepts[concept_id]
        except KeyError:
            raise GraphError(f"unknown concept id {concept_id!r}") from None

    def has_concept(self, concept_id: str) -> bool:
        return concept_id in self._concepts

    @property
    def concepts(self) -> Mapping[str, ClinicalConcept]:
        return dict(self._concepts)

    @property
    def edges(self) -> Sequence[ConceptEdge]:
        return tuple(self._edges)

    def disease_ids(self) -> list[str]:
        return sorted(c.id for c in self._concepts.values() if c.kind is ConceptKind.DISEASE)

    def symptom_ids(self) -> list[str]:
        return sorted(c.id for c in self._concepts.values() if c.kind is ConceptKind.SYMPTOM)

    def alias_index(self) -> list[tuple[tuple[str, ...], str]]:
        """(token tuple, concept id) pairs, longest alias first."""
        return list(self._alias_index)

    # ------------------------------------------------------------------
    def correlation(self, disease_id: str, symptom_id: str) -> float:
        """Edge weight for (disease, symptom), or 0.0 when no edge exists."""
        d = self.concept(disease_id)
        s = self.concept(symptom_id)
        if d.kind is not ConceptKind.DISEASE:
            raise GraphError(f"{disease_id!r} is not a disease")
        if s.kind is not ConceptKind.SYMPTOM:
            raise GraphError(f"{symptom_id!r} is not a symptom")
        return self._weights.get((disease_id, symptom_id), 0.0)

    def rank_diseases(self, base: Mapping[str, object]) -> list[tuple[str, float]]:
        """Rank every disease by the summed correlation with present symptoms.

        `base` maps symptom id -> status; only entries whose status is
        "present" (string or enum with that value) contribute. Absent and
        asked-but-unanswered symptoms contribute zero. Unknown symptom ids
        are ignored with a warning so noisy extraction never aborts a
        session. Ties break by disease id ascending.
        """
        present: list[str] = []
        for sid, status in base.items():
            value = getattr(status, "value", status)
            if value != "present":
                continue
            if not self.has_concept(sid) or self.concept(sid).kind is not ConceptKind.SYMPTOM:
                logger.warning("ignoring unknown symptom %r in symptom base", sid)
                continue
            present.append(sid)
        present.sort()  # fixed summation order keeps scores reproducible

        scores = []
        for did in self.disease_ids():
            score = sum(self._weights.get((did, sid), 0.0) for sid in present)
            scores.append((did, score))
        scores.sort(key=lambda ds: (-ds[1], ds[0]))
        return scores

    def top_symptoms(
        self, disease_id: str, exclude: Iterable[str] = (), k: int = 3
    ) -> list[tuple[str, float]]:
        """Up to k strongest symptoms of a disease, skipping excluded ids."""
        if k < 1:
            raise GraphError(f"k must be >= 1, got {k}")
        d = self.concept(disease_id)
        if d.kind is not ConceptKind.DISEASE:
            raise GraphError(f"{disease_id!r} is not a disease")
        excluded = set(exclude)
        out = [(s, w) for s, w in self._adjacency[disease_id] if s not in excluded]
        return out[:k]

    # ------------------------------------------------------------------
    def to_document(self) -> dict:
        """Serialize back to the JSON graph document shape."""
        return {
            "concepts": [
                {
                    "id": c.id,
                    "display_name": c.display_name,
                    "kind": c.kind.value,
                    "aliases": list(c.aliases),
                }
                for c in sorted(self._concepts.values(), key=lambda c: c.id)
            ],
            "edges": [
                {"disease": e.disease_id, "symptom": e.symptom_id, "weight": e.weight}
                for e in self._edges
            ],
        }


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens (alphanumerics plus apostrophes)."""
    import re

    return re.findall(r"[a-z0-9']+", text.lower())


def load_graph(source: Union[IO, str, bytes, dict]) -> KnowledgeGraph:
    """Load and validate a graph from a JSON document or readable stream."""
    if isinstance(source, dict):
        doc = source
    else:
        raw = source.read() if hasattr(source, "read") else source
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise GraphError(f"graph document is not valid JSON: {exc}") from exc

    if not isinstance(doc, dict) or "concepts" not in doc or "edges" not in doc:
        raise GraphError("graph document must be an object with 'concepts' and 'edges'")

    concepts = []
    for i, c in enumerate(doc["concepts"]):
        try:
            kind = ConceptKind(c["kind"])
            concepts.append(
                ClinicalConcept(
                    id=c["id"],
                    display_name=c.get("display_name", c["id"]),
                    kind=kind,
                    aliases=tuple(c.get("aliases", ())),
                )
            )
        except (KeyError, ValueError) as exc:
            raise GraphError(f"concepts[{i}]: {exc}") from exc

    edges = []
    for i, e in enumerate(doc["edges"]):
        try:
            edges.append(
                ConceptEdge(disease_id=e["disease"], symptom_id=e["symptom"], weight=float(e["weight"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"edges[{i}]: {exc}") from exc

    return KnowledgeGraph(concepts, edges)


def build_graph_from_cooccurrence(
    records: Sequence[tuple[Iterable[str], Iterable[str]]],
    disease_vocab: Mapping[str, str],
    symptom_vocab: Mapping[str, str],
) -> KnowledgeGraph:
    """Estimate edge weights from (disease labels, symptom mentions) records.

    weight(d, s) = count(d and s co-occur) / count(d occurs), so weights land
    in (0, 1] by construction; zero co-occurrence yields no edge. The vocab
    maps give id -> display name for every admissible label.
    """
    if not records:
        raise GraphError("empty record list")
    if not disease_vocab or not symptom_vocab:
        raise GraphError("empty vocabulary")

    disease_count: dict[str, int] = {d: 0 for d in disease_vocab}
    pair_count: dict[tuple[str, str], int] = {}
    for diseases, symptoms in records:
        dset = set(diseases) & set(disease_vocab)
        sset = set(symptoms) & set(symptom_vocab)
        for d in dset:
            disease_count[d] += 1
            for s in sset:
                pair_count[(d, s)] = pair_count.get((d, s), 0) + 1

    concepts = [
        ClinicalConcept(id=d, display_name=name, kind=ConceptKind.DISEASE)
        for d, name in disease_vocab.items()
    ] + [
        ClinicalConcept(id=s, display_name=name, kind=ConceptKind.SYMPTOM)
        for s, name in symptom_vocab.items()
    ]
    edges = [
        ConceptEdge(d, s, min(1.0, count / disease_count[d]))
        for (d, s), count in sorted(pair_count.items())
        if count > 0
    ]
    return KnowledgeGraph(concepts, edges)
