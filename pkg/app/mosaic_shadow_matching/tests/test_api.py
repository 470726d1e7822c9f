import pytest
from fastapi.testclient import TestClient

import main
from errors import InvalidGeometry
from harness import generate_canyon
from main import app


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def scenario_body():
    return generate_canyon(n_satellites=3, seed=5).model_dump(mode="json")


def test_root_lists_endpoints(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "build_mosaic" in response.json()["endpoints"]


def test_build_mosaic(client, scenario_body):
    response = client.post("/mosaic/", json=scenario_body)
    assert response.status_code == 200
    body = response.json()
    assert body["report"]["leaf_counts"][0] == 1
    assert len(body["leaves"]) == body["report"]["leaf_counts"][-1]
    total = sum(leaf["conditional_mass"] for leaf in body["leaves"])
    assert total == pytest.approx(1.0)


def test_invalid_scenario_is_rejected(client, scenario_body):
    scenario_body["satellites"][0]["elevation"] = 0
    assert client.post("/mosaic/", json=scenario_body).status_code == 422


def test_bad_footprint_is_unprocessable(client, scenario_body):
    scenario_body["buildings"][0]["footprint"] = [[0, 0], [2, 2], [2, 0], [0, 2]]
    response = client.post("/mosaic/", json=scenario_body)
    assert response.status_code == 422
    assert "invalid" in response.json()["detail"].lower()


def test_sweep(client, scenario_body):
    response = client.post("/sweep/", json={
        "scenario": scenario_body,
        "posteriors": [0.85],
        "gammas": [0.68],
        "grid_resolutions": [30.0],
        "gmm_ks": [1],
        "gmm_samples": 1000,
    })
    assert response.status_code == 200
    assert [row["kind"] for row in response.json()] == ["mosaic", "gmm", "collection"]


def test_validate(client, scenario_body):
    response = client.post("/validate/?orderings=2", json=scenario_body)
    assert response.status_code == 200
    assert response.json()["passed"] is True


def test_generate_canyon(client):
    response = client.get("/generate/canyon", params={"satellites": 5, "seed": 1})
    assert response.status_code == 200
    assert len(response.json()["satellites"]) == 5


def test_generate_canyon_rejects_negative_seed(client):
    response = client.get("/generate/canyon", params={"satellites": 3, "seed": -1})
    assert response.status_code == 422


def test_generate_canyon_failure_is_unprocessable(client, monkeypatch):
    def broken(**kwargs):
        raise InvalidGeometry("footprint self-intersects")

    monkeypatch.setattr(main, "generate_canyon", broken)
    response = client.get("/generate/canyon")
    assert response.status_code == 422
    assert "self-intersects" in response.json()["detail"]
