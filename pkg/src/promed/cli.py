"""Batch entry points: simulate, evaluate, build-kg, gen-prodial, serve.

Exit codes: 0 success, 1 validation failure, 2 I/O failure. Every command
is deterministic under a fixed seed and the stub backend.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click

from . import corpus as corpus_mod
from . import dialogue, kgraph, metrics
from .backends import BackendConfig, BackendKind
from .dialogue import ActionType, EngineConfig, Phase

EXIT_VALIDATION = 1
EXIT_IO = 2


@dataclass(frozen=True)
class PersonaScript:
    persona_id: str
    utterances: tuple[str, ...]
    symptoms: frozenset[str] = frozenset()
    label_vector: Optional[tuple[bool, ...]] = None

    def __post_init__(self):
        if not self.utterances:
            raise ValueError(f"persona {self.persona_id!r} has no utterances")


def load_personas(path: Path) -> list[PersonaScript]:
    personas = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        personas.append(
            PersonaScript(
                persona_id=d["persona_id"],
                utterances=tuple(d["utterances"]),
                symptoms=frozenset(d.get("symptoms", ())),
                label_vector=tuple(bool(x) for x in d["label_vector"]) if d.get("label_vector") else None,
            )
        )
    return personas


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_persona_session(
    persona: PersonaScript,
    graph: kgraph.KnowledgeGraph,
    backend: BackendConfig,
    config: EngineConfig,
    seed: int,
) -> dict:
    """Drive one scripted session to termination; returns the result record."""
    state = dialogue.begin_session(
        "", config, graph, seed=seed, session_id=f"sim-{persona.persona_id}"
    )
    script = list(persona.utterances)
    asked_symptoms: list[str] = []
    pending_question: Optional[str] = None

    while state.phase is not Phase.TERMINATED:
        if script:
            utterance = script.pop(0)
        elif pending_question is not None:
            display = graph.concept(pending_question).display_name
            if pending_question in persona.symptoms:
                utterance = f"Yes, I have {display}."
            else:
                utterance = f"No {display}."
        else:
            utterance = "I do not have an image to share right now."
        state, action = dialogue.next_turn(state, utterance, graph, backend)
        if action.type is ActionType.ASK:
            asked_symptoms.append(action.target_symptom)
            pending_question = action.target_symptom
        else:
            pending_question = None

    repeats = len(asked_symptoms) - len(set(asked_symptoms))
    return {
        "persona_id": persona.persona_id,
        "rounds": state.round,
        "termination_reason": state.termination_reason.value,
        "target_disease": state.target_disease,
        "confidence": state.confidence,
        "repeat_questions": repeats,
        "transcript": dialogue.transcript_lines(state),
    }


def _backend_config(name: str, endpoint: str = "", model: str = "") -> BackendConfig:
    return BackendConfig(kind=BackendKind(name), endpoint=endpoint, model_name=model)


def _engine_config(config_path: Optional[str]) -> EngineConfig:
    overrides = {}
    if config_path:
        overrides = json.loads(Path(config_path).read_text(encoding="utf-8")).get("engine", {})
    return EngineConfig(**overrides)


@click.group()
def main():
    """Proactive diagnostic dialogue toolkit."""


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--personas", "personas_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--backend", default="stub", type=click.Choice([k.value for k in BackendKind]))
@click.option("--seed", default=0, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--jobs", default=1, type=int)
def simulate(graph_path, personas_path, out_dir, backend, seed, config_path, jobs):
    """Run scripted persona sessions and write transcripts plus a summary."""
    try:
        graph = kgraph.load_graph(Path(graph_path).read_bytes())
        personas = load_personas(Path(personas_path))
        config = _engine_config(config_path)
        backend_cfg = _backend_config(backend)
    except (kgraph.GraphError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(EXIT_IO)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def run_one(p: PersonaScript) -> dict:
        return run_persona_session(p, graph, backend_cfg, config, seed)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, personas))
    else:
        results = [run_one(p) for p in personas]

    reasons: dict[str, int] = {}
    total_repeats = 0
    rounds: dict[str, int] = {}
    for res in sorted(results, key=lambda r: r["persona_id"]):
        _atomic_write(
            out / f"{res['persona_id']}.jsonl", "\n".join(res["transcript"]) + "\n"
        )
        reasons[res["termination_reason"]] = reasons.get(res["termination_reason"], 0) + 1
        total_repeats += res["repeat_questions"]
        rounds[res["persona_id"]] = res["rounds"]

    summary = {
        "sessions": len(results),
        "termination_reasons": dict(sorted(reasons.items())),
        "rounds": rounds,
        "repeat_questions": total_repeats,
        "seed": seed,
        "backend": backend,
    }
    _atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    click.echo(f"simulated {len(results)} sessions; repeat questions: {total_repeats}")
    if total_repeats > 0:
        sys.exit(EXIT_VALIDATION)


def _load_id_text(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        out[d["id"]] = d["text"]
    return out


@main.command()
@click.option("--candidates", "candidates_path", required=True, type=click.Path(exists=True))
@click.option("--references", "references_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--csv", "csv_path", default=None, type=click.Path())
def evaluate(candidates_path, references_path, out_path, csv_path):
    """Score candidate reports against references (BLEU, ROUGE-L, efficacy)."""
    try:
        cands = _load_id_text(Path(candidates_path))
        refs = _load_id_text(Path(references_path))
        summary = metrics.evaluate_corpus(cands, refs)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(EXIT_IO)

    _atomic_write(Path(out_path), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if csv_path:
        columns = ["bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "f1", "recall", "precision"]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            writer.writerow([f"{summary[c]:.4f}" for c in columns])
    click.echo(json.dumps({k: summary[k] for k in ("bleu1", "rougeL", "f1")}))


@main.command(name="build-kg")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def build_kg(records_path, out_path):
    """Build a graph from co-occurrence records and validate the round-trip.

    The records file is JSONL: a leading vocabulary line
    {"diseases": {id: name}, "symptoms": {id: name}} followed by one
    {"diseases": [...], "symptoms": [...]} line per record.
    """
    try:
        lines = [
            ln for ln in Path(records_path).read_text(encoding="utf-8").splitlines() if ln.strip()
        ]
        if len(lines) < 2:
            raise kgraph.GraphError("records file needs a vocabulary line and at least one record")
        vocab = json.loads(lines[0])
        records = [
            (d.get("diseases", ()), d.get("symptoms", ()))
            for d in map(json.loads, lines[1:])
        ]
        graph = kgraph.build_graph_from_cooccurrence(
            records, vocab.get("diseases", {}), vocab.get("symptoms", {})
        )
        doc = graph.to_document()
        kgraph.load_graph(json.dumps(doc))  # round-trip validation
    except (kgraph.GraphError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(EXIT_IO)
    _atomic_write(Path(out_path), json.dumps(doc, indent=2) + "\n")
    click.echo(f"wrote graph with {len(doc['concepts'])} concepts, {len(doc['edges'])} edges")


@main.command(name="gen-prodial")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--graph", "graph_path", default=None, type=click.Path(exists=True))
@click.option("--rounds", default=3, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--backend", default="stub", type=click.Choice([k.value for k in BackendKind]))
@click.option("--threshold", default=corpus_mod.DEFAULT_CONSISTENCY_THRESHOLD, type=float)
def gen_prodial(records_path, out_path, graph_path, rounds, seed, backend, threshold):
    """Generate the synthetic dialogue corpus from history records."""
    try:
        if graph_path:
            graph = kgraph.load_graph(Path(graph_path).read_bytes())
        else:
            graph = default_graph()
        with open(records_path, encoding="utf-8") as fh:
            records = corpus_mod.load_history_records(fh)
        backend_cfg = _backend_config(backend)
        accepted = []
        rejected = 0
        for rec in records:
            dlg = corpus_mod.generate_dialogue(rec, backend_cfg, graph, rounds=rounds, seed=seed)
            if corpus_mod.validate_consistency(dlg, rec, graph) >= threshold:
                accepted.append(dlg)
            else:
                rejected += 1
        metadata = corpus_mod.corpus_metadata(backend_cfg, seed, threshold, len(accepted), 0)
        metadata["rejected"] = rejected
        sink = io.StringIO()
        corpus_mod.write_corpus(sink, accepted, metadata)
        _atomic_write(Path(out_path), sink.getvalue())
    except (corpus_mod.CorpusError, kgraph.GraphError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        sys.exit(EXIT_IO)
    click.echo(f"wrote {len(accepted)} dialogues ({rejected} rejected below threshold)")


@main.command()
@click.option("--graph", "graph_path", default=None, type=click.Path(exists=True))
@click.option("--listen", default=None, help="host:port (default 127.0.0.1:8000)")
@click.option("--backend", default="stub", type=click.Choice([k.value for k in BackendKind]))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--store-dir", default=None, type=click.Path())
def serve(graph_path, listen, backend, config_path, store_dir):
    """Run the HTTP session service."""
    import uvicorn

    from .service import create_app

    try:
        graph = (
            kgraph.load_graph(Path(graph_path).read_bytes()) if graph_path else default_graph()
        )
        listen = listen or os.environ.get("PROMED_LISTEN") or "127.0.0.1:8000"
        host, _, port = listen.partition(":")
        app = create_app(
            graph,
            _backend_config(backend),
            store_dir or tempfile.mkdtemp(prefix="promed-sessions-"),
        )
    except (kgraph.GraphError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))


def default_graph() -> kgraph.KnowledgeGraph:
    """The bundled fixture graph (top-6 disease set)."""
    from importlib import resources

    raw = resources.files("promed.data").joinpath("graph_fixture.json").read_text("utf-8")
    return kgraph.load_graph(raw)


if __name__ == "__main__":
    main()
