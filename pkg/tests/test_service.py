import json
import threading

import pytest
from fastapi.testclient import TestClient

from promed.backends import BackendConfig, BackendKind
from promed.dialogue import EngineConfig, begin_session, next_turn, transcript_lines
from promed.service import SessionStore, create_app

SCRIPT = [
    "I have had a bad cough for a week.",
    "Yes, and I feel feverish at night.",
    "Yes, quite fatigued too.",
]


@pytest.fixture
def app(graph, stub_backend, tmp_path):
    return create_app(graph, stub_backend, store_dir=tmp_path / "sessions")


@pytest.fixture
def client(app):
    return TestClient(app)


def start_session(client, seed=0, config=None):
    resp = client.post(
        "/v1/sessions", json={"medical_history": "", "seed": seed, "config": config or {}}
    )
    assert resp.status_code == 201
    return resp.json()["session_id"]


def drive_to_report(client, sid, max_posts=30):
    """Answer yes until the session emits a report."""
    reply = client.post(f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]}).json()
    for _ in range(max_posts):
        if reply["action"] == "emit_report":
            return reply
        reply = client.post(f"/v1/sessions/{sid}/messages", json={"text": "Yes."}).json()
    raise AssertionError("session never terminated")


class TestBasics:
    def test_healthz(self, client):
        assert client.get("/healthz").json() == {"status": "ok"}

    def test_graph_document(self, client, graph):
        doc = client.get("/v1/graph").json()
        assert {c["id"] for c in doc["concepts"]} == set(graph.concepts)

    def test_create_returns_201_and_id(self, client):
        resp = client.post("/v1/sessions", json={"medical_history": "", "seed": 1})
        assert resp.status_code == 201
        assert resp.json()["session_id"]

    def test_create_bad_config_400(self, client):
        resp = client.post("/v1/sessions", json={"config": {"max_rounds": 0}})
        assert resp.status_code == 400

    def test_unknown_session_404(self, client):
        assert client.get("/v1/sessions/nope").status_code == 404
        assert (
            client.post("/v1/sessions/nope/messages", json={"text": "hi"}).status_code
            == 404
        )

    def test_empty_text_422(self, client):
        sid = start_session(client)
        resp = client.post(f"/v1/sessions/{sid}/messages", json={"text": "  "})
        assert resp.status_code == 422

    def test_missing_text_422(self, client):
        sid = start_session(client)
        resp = client.post(f"/v1/sessions/{sid}/messages", json={})
        assert resp.status_code == 422


class TestDialogueFlow:
    def test_first_message_yields_question(self, client):
        sid = start_session(client)
        reply = client.post(
            f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]}
        ).json()
        assert reply["action"] == "ask"
        assert reply["question"]
        assert reply["target_symptom"]

    def test_session_snapshot_reflects_turns(self, client):
        sid = start_session(client)
        client.post(f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]})
        snap = client.get(f"/v1/sessions/{sid}").json()
        assert snap["round"] == 1
        assert len(snap["transcript"]) == 2
        assert "cough" in snap["base"]

    def test_candidates_expose_decision_trail(self, client):
        sid = start_session(client)
        reply = client.post(
            f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]}
        ).json()
        cands = client.get(f"/v1/sessions/{sid}/candidates").json()["candidates"]
        assert cands
        surviving = [c for c in cands if not c["rejected"]]
        assert surviving
        # the asked question is the best-scoring survivor
        best = max(surviving, key=lambda c: c["score"])
        assert reply["target_symptom"] == best["target_symptom"]
        for c in cands:
            assert 0 <= c["score"] <= 10
            if c["rejected"]:
                assert c["reason"] in ("repeat", "low_score")

    def test_report_409_before_termination(self, client):
        sid = start_session(client)
        client.post(f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]})
        assert client.get(f"/v1/sessions/{sid}/report").status_code == 409

    def test_full_session_emits_report(self, client):
        sid = start_session(client)
        reply = drive_to_report(client, sid)
        assert "IDENTIFIED CONDITIONS:" in reply["report"]
        assert len(reply["label_probabilities"]) == 14
        report = client.get(f"/v1/sessions/{sid}/report").json()
        assert report["report"] == reply["report"]

    def test_post_after_termination_409(self, client):
        sid = start_session(client)
        drive_to_report(client, sid)
        resp = client.post(f"/v1/sessions/{sid}/messages", json={"text": "hello?"})
        assert resp.status_code == 409

    def test_image_embedding_wrong_dim_422(self, client):
        sid = start_session(client)
        resp = client.post(
            f"/v1/sessions/{sid}/messages",
            json={"text": SCRIPT[0], "image_embedding": [0.0, 1.0]},
        )
        assert resp.status_code == 422


class TestParity:
    def test_http_transcript_matches_library(self, client, graph, stub_backend):
        sid = start_session(client, seed=7)
        for text in SCRIPT:
            client.post(f"/v1/sessions/{sid}/messages", json={"text": text})
        via_http = client.get(f"/v1/sessions/{sid}").json()["transcript"]

        state = begin_session("", EngineConfig(), graph, seed=7, session_id=sid)
        for text in SCRIPT:
            next_turn(state, text, graph, stub_backend)
        assert via_http == transcript_lines(state)

    def test_same_seed_two_http_sessions_differ_only_in_id(self, client):
        sids = [start_session(client, seed=3) for _ in range(2)]
        transcripts = []
        for sid in sids:
            for text in SCRIPT:
                client.post(f"/v1/sessions/{sid}/messages", json={"text": text})
            lines = client.get(f"/v1/sessions/{sid}").json()["transcript"]
            transcripts.append([json.loads(l) for l in lines])
        assert transcripts[0] == transcripts[1]


class TestPersistence:
    def test_replay_reconstructs_snapshot(self, graph, stub_backend, tmp_path):
        store_dir = tmp_path / "sessions"
        app = create_app(graph, stub_backend, store_dir=store_dir)
        client = TestClient(app)
        sid = start_session(client, seed=2)
        for text in SCRIPT:
            client.post(f"/v1/sessions/{sid}/messages", json={"text": text})

        store: SessionStore = app.state.store
        snapshot = store.load_snapshot(sid)
        replayed = store.replay(sid)
        assert replayed.to_dict() == snapshot["state"]

    def test_restart_recovers_session(self, graph, stub_backend, tmp_path):
        store_dir = tmp_path / "sessions"
        client1 = TestClient(create_app(graph, stub_backend, store_dir=store_dir))
        sid = start_session(client1, seed=5)
        client1.post(f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]})
        before = client1.get(f"/v1/sessions/{sid}").json()

        # a fresh app over the same directory simulates a process restart
        client2 = TestClient(create_app(graph, stub_backend, store_dir=store_dir))
        after = client2.get(f"/v1/sessions/{sid}").json()
        assert after == before

    def test_event_log_is_append_only_jsonl(self, graph, stub_backend, tmp_path):
        store_dir = tmp_path / "sessions"
        app = create_app(graph, stub_backend, store_dir=store_dir)
        client = TestClient(app)
        sid = start_session(client)
        client.post(f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]})
        lines = (store_dir / f"{sid}.events.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["type"] == "created"
        assert json.loads(lines[1])["type"] == "message"


class TestConcurrency:
    def test_concurrent_posts_serialize_per_session(self, client):
        sid = start_session(client, config={"max_rounds": 60})
        client.post(f"/v1/sessions/{sid}/messages", json={"text": SCRIPT[0]})

        n = 50
        results = []
        barrier = threading.Barrier(n)

        def post(i):
            barrier.wait()
            resp = client.post(f"/v1/sessions/{sid}/messages", json={"text": f"Yes ({i})."})
            results.append(resp.status_code)

        threads = [threading.Thread(target=post, args=(i,)) for i in range(n)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        accepted = sum(1 for s in results if s == 200)
        rejected = sum(1 for s in results if s == 409)
        assert accepted + rejected == n
        snap = client.get(f"/v1/sessions/{sid}").json()
        # every accepted post advanced the round counter exactly once
        assert snap["round"] == 1 + accepted
