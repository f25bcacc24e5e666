import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services import experiment_service
from app.sim.trace import dumps_trace

CONFIG = {
    "protocol": "raft",
    "nodes": 3,
    "seed": 2,
    "workload": {"op_count": 20, "client_concurrency": 2},
    "check": True,
}


@pytest.fixture
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json()["status"] == "ok"
    assert {"raft", "paxos", "ct", "baseline"} <= set(r.json()["protocols"])


def test_run(client):
    r = client.post("/api/v1/experiments/run", json=CONFIG)
    assert r.status_code == 200
    body = r.json()
    assert body["summary"]["ops_completed"] == 20
    assert body["check"]["violations"] == []
    assert "trace" not in body


def test_run_rejects_invalid_body(client):
    r = client.post("/api/v1/experiments/run", json={**CONFIG, "nodes": 0})
    assert r.status_code == 422


def test_compare_mismatch_is_conflict(client):
    r = client.post("/api/v1/experiments/compare", json=[CONFIG, {**CONFIG, "protocol": "paxos", "nodes": 5}])
    assert r.status_code == 409


def test_replay_and_check(client, make_config):
    result = experiment_service.run_experiment(make_config("ct"))
    body = dumps_trace(result.trace)

    r = client.post("/api/v1/traces/replay", content=body)
    assert r.status_code == 200
    assert r.json()["ok"] is True

    r = client.post("/api/v1/traces/check", content=body)
    assert r.status_code == 200
    assert r.json()["violations"] == []


def test_truncated_trace_is_bad_request(client, make_config):
    body = dumps_trace(experiment_service.run_experiment(make_config()).trace)
    r = client.post("/api/v1/traces/check", content=body[: len(body) // 2])
    assert r.status_code == 400
    assert r.json()["detail"]
