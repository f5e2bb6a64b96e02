import pytest
from fastapi.testclient import TestClient

from main import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_exact(client):
    response = client.get("/exact", params={"n": 4, "p": 2, "seed": 1})
    assert response.status_code == 200
    body = response.json()
    assert body["method"] == "dense"
    assert body["lambda_max_over_sqrt_n"] == pytest.approx(body["lambda_max"] / 2)


def test_domain_errors_are_bad_requests(client):
    assert client.get("/exact", params={"n": 2, "p": 3}).status_code == 400
    assert client.get("/exact", params={"n": 3, "disorder": "sparse_rademacher"}).status_code == 400
    assert client.get("/theta", params={"graph": "bogus"}).status_code == 400
    assert client.get("/net", params={"epsilon": 0.2, "kind": "bogus"}).status_code == 400


def test_capacity_errors_are_413(client):
    response = client.get("/exact", params={"n": 21, "p": 2})
    assert response.status_code == 413


def test_trace_sum(client):
    body = client.get("/trace_sum", params={"pairs": "1,3;2,4"}).json()
    assert body["trace_sum"] == -3
    assert body["trace_sum_recursive"] == -3
    assert client.get("/trace_sum", params={"pairs": "1,x"}).status_code == 400
    assert client.get("/trace_sum", params={"pairs": "1,2;2,3"}).status_code == 400


def test_expected_trace_sum(client):
    body = client.get("/expected_trace_sum", params={"d": 3}).json()
    assert body["expected"] == 7.0
    assert body["holds"] is True
    assert client.get("/expected_trace_sum", params={"d": 9}).status_code == 413


def test_gamma(client):
    body = client.get("/gamma", params={"n": 6, "p": 2, "r": 1, "samples": 5}).json()
    assert body["ratio"] == 1.0
    assert body["per_r_ratio"] == 1.0


def test_poisson(client):
    body = client.get("/poisson", params={"n": 20, "p": 2, "r": 5, "samples": 200}).json()
    assert body["lambda"] == pytest.approx(0.5)
    assert 0.0 <= body["tv_distance"] <= 1.0


def test_gbound(client):
    body = client.get("/gbound", params={"p": 1e6, "C": 1.0}).json()
    assert body["ratio_to_sqrt"] <= 1.25
    assert body["witness_terms"]["total"] == pytest.approx(body["bound_value"], abs=1e-12)
    assert client.get("/gbound", params={"p": 1e6, "C": 0.1}).status_code == 400


def test_variance(client):
    body = client.get("/variance", params={"n": 3, "p": 2, "samples": 20}).json()
    assert body["haar"]["target"] == pytest.approx(1.0)
    assert len(body["rows"]) == 20


def test_theta_and_net(client):
    assert client.get("/theta", params={"graph": "complete", "size": 4}).json()["value"] == pytest.approx(1.0, abs=1e-3)
    body = client.get("/net", params={"epsilon": 0.2}).json()
    assert body["size"] == len(body["points"])


def test_optimize(client):
    body = client.get("/optimize", params={"n": 4, "p": 2, "restarts": 2}).json()
    assert body["energy"] <= body["lambda_max"] + 1e-9
    assert len(body["bloch_vectors"]) == 4


def test_verify(client):
    response = client.get("/verify", params=[("only", "swap_identity"), ("only", "pauli_oracles")])
    body = response.json()
    assert body["passed"] is True
    assert [c["name"] for c in body["checks"]] == ["pauli_oracles", "swap_identity"]
