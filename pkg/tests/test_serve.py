import pytest
from fastapi.testclient import TestClient

from c2crs.checkpoint import save_checkpoint
from c2crs.corpus import save_corpus, synthetic_entity_names
from c2crs.serve import create_app, load_service
from c2crs.trainer import manifest_for, run_schedule
from conftest import tiny_train_config


@pytest.fixture(scope="module")
def served(tmp_path_factory, synth_corpus):
    root = tmp_path_factory.mktemp("serve")
    data_dir = root / "data"
    save_corpus(synth_corpus, data_dir,
                entity_names=synthetic_entity_names(8, 24))
    config = tiny_train_config(coarse_steps=6, rec_steps=30, conv_steps=12,
                               learning_rate=0.01)
    results = run_schedule(synth_corpus, config,
                           schedule=["pretrain_coarse", "finetune_rec",
                                     "finetune_conv"])
    ckpt = root / "model.ckpt"
    save_checkpoint(results[-1].params,
                    manifest_for(config, results[-1].stage, 12), ckpt)
    service = load_service(ckpt, data_dir, session_ttl=60.0)
    return service, TestClient(create_app(service))


def converse(client, session, text, k=10):
    return client.post("/api/converse", json={"session_id": session,
                                              "utterance": text, "k": k})


class TestConverse:
    def test_round_trip_contract(self, served):
        _, client = served
        response = converse(client, "s1", "i want a movie about topic8 and topic9",
                            k=5)
        assert response.status_code == 200
        body = response.json()
        assert isinstance(body["response"], str) and body["response"]
        assert len(body["recommendations"]) == 5
        for row in body["recommendations"]:
            assert set(row) == {"item_id", "name", "score"}
        assert body["turn"] == 1
        scores = [r["score"] for r in body["recommendations"]]
        assert scores == sorted(scores, reverse=True)

    def test_identical_sessions_identical_outputs(self, served):
        _, client = served
        transcripts = []
        for session in ("twin-a", "twin-b"):
            rows = []
            for text in ("hi i want something with topic10",
                         "more of topic11 please"):
                rows.append(converse(client, session, text).json())
            transcripts.append(rows)
        assert transcripts[0] == transcripts[1]

    def test_k_clamped_to_item_count(self, served):
        _, client = served
        body = converse(client, "s-clamp", "any film about topic12", k=500).json()
        assert len(body["recommendations"]) == 8

    def test_cold_context_still_recommends(self, served):
        _, client = served
        body = converse(client, "s-cold", "hello there friend", k=6).json()
        assert len(body["recommendations"]) == 6
        assert body["response"]

    def test_empty_utterance_rejected(self, served):
        _, client = served
        response = converse(client, "s-err", "   ")
        assert response.status_code == 400

    def test_bad_k_rejected(self, served):
        _, client = served
        response = converse(client, "s-err", "hello", k=0)
        assert response.status_code == 400

    def test_entity_linking_accumulates(self, served):
        service, client = served
        converse(client, "s-link", "give me topic8 films")
        converse(client, "s-link", "maybe topic9 too")
        state = service.sessions["s-link"]
        assert 8 in state.entities and 9 in state.entities

    def test_turn_counter_advances(self, served):
        _, client = served
        first = converse(client, "s-turn", "hello topic8").json()
        second = converse(client, "s-turn", "and topic9").json()
        assert (first["turn"], second["turn"]) == (1, 2)


class TestResetHealthItems:
    def test_reset_clears_session(self, served):
        service, client = served
        converse(client, "s-reset", "films about topic8")
        assert "s-reset" in service.sessions
        response = client.post("/api/reset", json={"session_id": "s-reset"})
        assert response.status_code == 200
        assert "s-reset" not in service.sessions

    def test_reset_then_converse_fresh(self, served):
        _, client = served
        first = converse(client, "s-fresh", "films about topic8").json()
        client.post("/api/reset", json={"session_id": "s-fresh"})
        again = converse(client, "s-fresh", "films about topic8").json()
        assert again == first

    def test_reset_unknown_session_idempotent(self, served):
        _, client = served
        for _ in range(2):
            response = client.post("/api/reset",
                                   json={"session_id": "never-seen"})
            assert response.status_code == 200

    def test_health(self, served):
        service, client = served
        body = client.get("/api/health").json()
        assert body["status"] == "ok"
        assert body["checkpoint"] == service.checkpoint_id
        assert body["n_items"] == 8

    def test_items_endpoint_with_limit(self, served):
        _, client = served
        body = client.get("/api/items", params={"limit": 3}).json()
        assert len(body["items"]) == 3
        assert body["items"][0] == {"item_id": 0, "name": "film0"}

    def test_session_ttl_eviction(self, served, monkeypatch):
        import c2crs.serve as serve_module

        service, client = served
        converse(client, "s-ttl", "hello topic8")
        assert "s-ttl" in service.sessions
        real = serve_module.time.monotonic
        monkeypatch.setattr(serve_module.time, "monotonic",
                            lambda: real() + service.session_ttl + 1)
        converse(client, "s-other", "hello topic9")
        assert "s-ttl" not in service.sessions


def test_cors_headers_present(served):
    _, client = served
    response = client.get("/api/health",
                          headers={"Origin": "http://localhost:5173"})
    assert response.headers.get("access-control-allow-origin") == "*"
