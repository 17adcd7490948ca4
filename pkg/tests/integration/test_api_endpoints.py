#!/usr/bin/env python3
"""
API endpoint tests for the MX simulator service, run against the app in-process.
"""

import asyncio
import json

import pytest
from fastapi.testclient import TestClient

from app.api.job_status import clear_jobs
from app.api.main import app

API_BASE = "/api/v1"


@pytest.fixture
def client():
    with TestClient(app) as c:
        yield c


@pytest.fixture
def tiny_layers():
    return {"name": "tiny", "layers": [[4, 16], [16, 4]], "batch": 8}


class TestHealth:

    def test_root(self, client):
        response = client.get("/")
        assert response.status_code == 200
        assert response.json()["status"] == "healthy"

    def test_health(self, client):
        data = client.get("/health").json()
        assert data["version"] == "1.0.0"
        assert "freq_mhz" in data["settings"]


class TestQuantizeAndFormats:

    def test_formats(self, client):
        data = client.get(f"{API_BASE}/formats").json()
        assert len(data) == 6
        assert data[-1]["name"] == "FP4_E2M1"
        assert data[-1]["max_finite"] == 6.0

    def test_quantize(self, client):
        matrix = [[float(i + j) for j in range(10)] for i in range(9)]
        response = client.post(f"{API_BASE}/quantize", json={"matrix": matrix, "format": "INT8"})
        assert response.status_code == 200
        data = response.json()
        assert data["stats"]["blocks"] == 4
        assert data["dump"]["grid"] == [2, 2]

    def test_quantize_errors(self, client):
        response = client.post(f"{API_BASE}/quantize", json={"matrix": [[1.0]], "format": "FP5"})
        assert response.status_code == 400
        response = client.post(f"{API_BASE}/quantize", json={"matrix": [[1.0, 2.0], [3.0]], "format": "INT8"})
        assert response.status_code == 400
        response = client.post(
            f"{API_BASE}/quantize",
            json={"matrix": [[1.0]], "format": "INT8", "geometry": "square", "orientation": "row"},
        )
        assert response.status_code == 422


class TestMacTrace:

    def test_fp4_ones_matches_golden(self, client, golden_dir):
        body = {"mode": "fp4", "codes": True, "steps": [{"a": [2] * 8, "b": [2] * 8}]}
        response = client.post(f"{API_BASE}/mac-trace", json=body)
        assert response.status_code == 200
        data = response.json()
        assert data["accumulator"] == 8.0
        golden = json.loads((golden_dir / "fp4_ones.jsonl").read_text(encoding="utf-8"))
        assert data["traces"][0] == golden

    def test_value_steps(self, client):
        body = {"mode": "int8", "steps": [{"a": [1.5], "b": [-0.5], "scale_exp": 2}]}
        data = client.post(f"{API_BASE}/mac-trace", json=body).json()
        assert data["accumulator"] == -3.0
        assert data["steps"] == 1

    def test_wrong_pair_count(self, client):
        body = {"mode": "fp4", "steps": [{"a": [1.0], "b": [1.0]}]}
        assert client.post(f"{API_BASE}/mac-trace", json=body).status_code == 422

    def test_empty_script_rejected(self, client):
        assert client.post(f"{API_BASE}/mac-trace", json={"steps": []}).status_code == 422


class TestSimulateFootprintCompare:

    def test_simulate_default(self, client):
        data = client.post(f"{API_BASE}/simulate", json={}).json()
        assert data["report"]["total_cycles"] == 5151
        assert data["core"]["mac_count"] == 4096

    def test_simulate_custom_workload(self, client, tiny_layers):
        body = {"workload": tiny_layers, "format": "FP4_E2M1", "overlap_writeback": True}
        data = client.post(f"{API_BASE}/simulate", json=body).json()
        assert data["report"]["mode"] == "Fp4"
        assert data["report"]["batch"] == 8

    def test_simulate_bad_workload(self, client):
        response = client.post(f"{API_BASE}/simulate", json={"workload": {"layers": [[4, 8], [16, 4]]}})
        assert response.status_code == 400

    def test_footprint(self, client):
        rows = client.get(f"{API_BASE}/footprint", params={"batch": 16}).json()
        assert [r["display_total"] for r in rows] == pytest.approx([642.0, 347.1, 163.1])
        assert client.get(f"{API_BASE}/footprint", params={"batch": 0}).status_code == 422

    def test_compare(self, client):
        data = client.get(f"{API_BASE}/compare").json()
        modes = {m["mode"]: m for m in data["modes"]}
        assert modes["Int8"]["total_cycles"] == 5151
        assert data["bandwidth_gb_s"] == pytest.approx(330.0)


class TestTraining:

    @pytest.fixture(autouse=True)
    def _reset_jobs(self):
        asyncio.run(clear_jobs())

    def test_train_sync(self, client):
        body = {"format": "INT8", "epochs": 1, "iterations_per_epoch": 1, "batch": 8, "seed": 1}
        response = client.post(f"{API_BASE}/train", json=body)
        assert response.status_code == 200
        data = response.json()
        assert data["format"] == "INT8"
        assert len(data["curve"]) == 2

    def test_train_background_job(self, client):
        body = {"format": "fp32", "epochs": 1, "iterations_per_epoch": 1, "batch": 8, "background": "true"}
        response = client.post(f"{API_BASE}/train", json=body)
        assert response.status_code == 200
        job = response.json()
        assert job["status"] == "pending"
        status = client.get(f"{API_BASE}/jobs/{job['job_id']}").json()
        assert status["status"] == "completed"
        assert status["result"]["format"] == "FP32"

    def test_train_validation(self, client):
        assert client.post(f"{API_BASE}/train", json={"epochs": 0}).status_code == 422
        assert client.post(f"{API_BASE}/train", json={"format": "FP5"}).status_code == 400

    def test_unknown_job(self, client):
        assert client.get(f"{API_BASE}/jobs/does-not-exist").status_code == 404

    def test_background_job_failure_recorded(self, client, mocker):
        mocker.patch("app.api.endpoints.run_training", side_effect=RuntimeError("boom"))
        body = {"epochs": 1, "iterations_per_epoch": 1, "background": True}
        job = client.post(f"{API_BASE}/train", json=body).json()
        status = client.get(f"{API_BASE}/jobs/{job['job_id']}").json()
        assert status["status"] == "failed"
        assert status["error"] == "boom"

    def test_unexpected_error_is_500(self, client, mocker):
        mocker.patch("app.api.endpoints.run_training", side_effect=RuntimeError("boom"))
        response = client.post(f"{API_BASE}/train", json={"epochs": 1, "iterations_per_epoch": 1})
        assert response.status_code == 500
        assert "boom" in response.json()["detail"]
