import json
import random

import pytest

from promed import kgraph
from promed.backends import BackendConfig, BackendKind
from promed.cli import PersonaScript, default_graph
from promed.dialogue import EngineConfig
from promed.kgraph import ClinicalConcept, ConceptEdge, ConceptKind, KnowledgeGraph


@pytest.fixture(scope="session")
def graph():
    """The bundled 6-disease fixture graph."""
    return default_graph()


@pytest.fixture(scope="session")
def tiny_graph():
    """3 diseases, 8 symptoms, 12 edges; mirrors the documented example
    weights (pneumonia-cough 0.9, pneumonia-fever 0.8, edema-cough 0.2)."""
    doc = {
        "concepts": [
            {"id": "pneumonia", "display_name": "pneumonia", "kind": "disease", "aliases": ["pneumonia"]},
            {"id": "edema", "display_name": "edema", "kind": "disease", "aliases": ["edema"]},
            {"id": "flu", "display_name": "flu", "kind": "disease", "aliases": ["flu"]},
            {"id": "cough", "display_name": "cough", "kind": "symptom", "aliases": ["cough"]},
            {"id": "fever", "display_name": "fever", "kind": "symptom", "aliases": ["fever"]},
            {"id": "fatigue", "display_name": "fatigue", "kind": "symptom", "aliases": ["fatigue"]},
            {"id": "headache", "display_name": "headache", "kind": "symptom", "aliases": ["headache"]},
            {"id": "chills", "display_name": "chills", "kind": "symptom", "aliases": ["chills"]},
            {"id": "leg_swelling", "display_name": "leg swelling", "kind": "symptom", "aliases": ["leg swelling"]},
            {"id": "orthopnea", "display_name": "orthopnea", "kind": "symptom", "aliases": ["orthopnea"]},
            {"id": "chest_pain", "display_name": "chest pain", "kind": "symptom", "aliases": ["chest pain"]},
        ],
        "edges": [
            {"disease": "pneumonia", "symptom": "cough", "weight": 0.9},
            {"disease": "pneumonia", "symptom": "fever", "weight": 0.8},
            {"disease": "pneumonia", "symptom": "fatigue", "weight": 0.4},
            {"disease": "pneumonia", "symptom": "chest_pain", "weight": 0.5},
            {"disease": "edema", "symptom": "cough", "weight": 0.2},
            {"disease": "edema", "symptom": "leg_swelling", "weight": 0.85},
            {"disease": "edema", "symptom": "orthopnea", "weight": 0.6},
            {"disease": "edema", "symptom": "fatigue", "weight": 0.3},
            {"disease": "flu", "symptom": "fever", "weight": 0.9},
            {"disease": "flu", "symptom": "chills", "weight": 0.7},
            {"disease": "flu", "symptom": "headache", "weight": 0.6},
            {"disease": "flu", "symptom": "fatigue", "weight": 0.5},
        ],
    }
    return kgraph.load_graph(json.dumps(doc))


@pytest.fixture
def stub_backend():
    return BackendConfig(kind=BackendKind.STUB)


@pytest.fixture
def engine_config():
    return EngineConfig()


def random_graph(rng: random.Random, max_diseases=50, max_symptoms=200, max_edges=2000):
    """A random bipartite graph for oracle comparisons."""
    n_d = rng.randint(1, max_diseases)
    n_s = rng.randint(1, max_symptoms)
    diseases = [f"d{i:03d}" for i in range(n_d)]
    symptoms = [f"s{i:03d}" for i in range(n_s)]
    concepts = [
        ClinicalConcept(id=d, display_name=d, kind=ConceptKind.DISEASE) for d in diseases
    ] + [ClinicalConcept(id=s, display_name=s, kind=ConceptKind.SYMPTOM) for s in symptoms]
    pairs = [(d, s) for d in diseases for s in symptoms]
    rng.shuffle(pairs)
    n_e = rng.randint(0, min(max_edges, len(pairs)))
    edges = [ConceptEdge(d, s, rng.uniform(1e-6, 1.0)) for d, s in pairs[:n_e]]
    return KnowledgeGraph(concepts, edges), diseases, symptoms


def random_personas(graph, n, seed):
    """Deterministic persona scripts drawn from the graph's symptom pool."""
    rng = random.Random(seed)
    symptoms = graph.symptom_ids()
    personas = []
    for i in range(n):
        true_symptoms = rng.sample(symptoms, k=rng.randint(1, min(5, len(symptoms))))
        mentioned = true_symptoms[: rng.randint(1, len(true_symptoms))]
        names = [graph.concept(s).display_name for s in mentioned]
        opener = "I have been having " + " and ".join(names) + "."
        personas.append(
            PersonaScript(
                persona_id=f"p{i:04d}",
                utterances=(opener,),
                symptoms=frozenset(true_symptoms),
            )
        )
    return personas
