import pytest
from fastapi.testclient import TestClient

from endpoints import experiments_endpoint
from main import app

CYCLE = {"kind": "cycle", "m": 4, "laziness": 0.5}


@pytest.fixture
def client(storage, monkeypatch):
    monkeypatch.setattr(experiments_endpoint, "storage", storage)
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["stored_runs"] == 0


def test_bisector(client):
    response = client.get("/api/bisector", params={"a": 1 / 3, "b": 0.2, "samples": 200})
    assert response.status_code == 200
    body = response.json()
    assert body["case"] == "singular_no_reflection"
    assert body["singular"] is True
    assert body["max_residual"] <= 1e-12


def test_bisector_validates_query(client):
    assert client.get("/api/bisector", params={"a": 0.7, "b": 0.2}).status_code == 422
    assert client.get("/api/bisector", params={"b": 0.2}).status_code == 422


def test_describe_chain(client):
    response = client.post("/api/chains", json={"kind": "tree", "m": 2})
    assert response.status_code == 200
    body = response.json()
    assert body["states"] == 19
    assert len(body["labels"]) == 19
    assert client.post("/api/chains", json={"kind": "cycle", "m": 6}).status_code == 400


def test_verify(client):
    assert "maximality" in client.get("/api/verify").json()["checks"]
    response = client.post("/api/verify", json={"check": "hahn", "params": {"t_max": 4, "chains": [CYCLE]}})
    assert response.status_code == 200
    assert response.json()["pass"] is True
    assert client.post("/api/verify", json={"check": "nope"}).status_code == 422


def test_experiment_lifecycle(client):
    response = client.post("/api/experiments", json={"pipeline": "exact", "chain": CYCLE, "t_grid": [1, 2]})
    assert response.status_code == 200
    run_id = response.json()["run_id"]
    assert [r["run_id"] for r in client.get("/api/experiments").json()["runs"]] == [run_id]
    manifest = client.get(f"/api/experiments/{run_id}").json()
    assert manifest["pipeline"] == "exact"
    assert client.get("/health").json()["stored_runs"] == 1


def test_experiment_errors(client):
    assert client.get("/api/experiments/missing").status_code == 404
    assert client.post("/api/experiments", json={"pipeline": "simulate"}).status_code == 422
    bad = {"pipeline": "simulate", "seed": 1, "trials": 2, "coupling": "kc", "chain": CYCLE}
    response = client.post("/api/experiments", json=bad)
    assert response.status_code == 400
    assert "manifold" in response.json()["detail"]
