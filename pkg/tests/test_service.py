"""Tests for the HTTP service endpoints."""

import base64
import io

import numpy as np
from fastapi.testclient import TestClient

from smoothrast.service.app import app

client = TestClient(app)

FAST_CONFIG = {
    "camera": {"image_size": [16, 16]},
    "task": {"trials": 2, "magnitudes_deg": [5.0]},
    "optimizer": {"iterations": 5},
    "seed": 4,
}


class TestHealth:
    def test_health(self):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["version"]

    def test_default_config(self):
        resp = client.get("/config/default")
        assert resp.status_code == 200
        body = resp.json()
        assert body["smoothing"]["sigma"] == 0.1
        assert body["scene"] == "cube"


class TestRenderEndpoint:
    def test_render_sweep(self):
        resp = client.post("/render", json={"config": FAST_CONFIG})
        assert resp.status_code == 200
        body = resp.json()
        assert body["image_size"] == [16, 16]
        labels = [e["label"] for e in body["entries"]]
        assert labels[0] == "hard"
        assert len(labels) >= 2
        # payloads decode to a PNG and a float32 NPY of the right shape
        from PIL import Image
        entry = body["entries"][0]
        png = Image.open(io.BytesIO(base64.b64decode(entry["png_b64"])))
        assert png.size == (16, 16)
        raw = np.load(io.BytesIO(base64.b64decode(entry["rgb_raw_b64"])))
        assert raw.shape == (16, 16, 3)
        assert raw.dtype == np.float32

    def test_missing_mesh_404(self):
        cfg = dict(FAST_CONFIG)
        cfg["scene"] = "/no/such/mesh.obj"
        resp = client.post("/render", json={"config": cfg})
        assert resp.status_code == 404
        assert "/no/such/mesh.obj" in resp.json()["detail"]

    def test_invalid_config_rejected(self):
        resp = client.post("/render", json={"config": {"bogus_key": 1}})
        assert resp.status_code == 422

    def test_budget_exceeded_413(self):
        cfg = dict(FAST_CONFIG)
        cfg = {**cfg, "budget_mb": 0,
               "smoothing": {"mode": "mc", "samples": 64}}
        resp = client.post("/render", json={"config": cfg})
        assert resp.status_code == 413

    def test_closed_mode_needs_gumbel_422(self):
        cfg = {**FAST_CONFIG,
               "smoothing": {"mode": "closed", "agg_prior": "gaussian"}}
        resp = client.post("/render", json={"config": cfg})
        assert resp.status_code == 422


class TestPoseOptEndpoint:
    def test_rows_and_summary(self):
        resp = client.post("/pose-opt", json={"config": FAST_CONFIG})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["results"]) == 1
        result = body["results"][0]
        assert result["magnitude_deg"] == 5.0
        assert len(result["rows"]) == 2
        for row in result["rows"]:
            assert set(row) == {"seed", "init_err_deg", "final_err_deg",
                                "iterations", "solved"}

    def test_determinism_across_calls(self):
        a = client.post("/pose-opt", json={"config": FAST_CONFIG}).json()
        b = client.post("/pose-opt", json={"config": FAST_CONFIG}).json()
        assert a == b


class TestGradcheckEndpoint:
    def test_fault_injection_reported(self):
        cfg = {**FAST_CONFIG, "camera": {"image_size": [24, 24]}}
        resp = client.post("/gradcheck", json={"config": cfg,
                                               "fault": "sign_flip"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["passed"] is False
        failed = [c["name"] for c in body["checks"] if not c["passed"]]
        assert failed


class TestBenchEndpoint:
    def test_rows_and_csv(self):
        cfg = {**FAST_CONFIG,
               "bench": {"sample_counts": [1, 4], "repeats": 1, "warmup": 0}}
        resp = client.post("/bench", json={"config": cfg})
        assert resp.status_code == 200
        body = resp.json()
        modes = [r["mode"] for r in body["rows"]]
        assert modes == ["mc", "mc", "closed", "hard"]
        hard_row = body["rows"][-1]
        assert hard_row["backward_ms"] is None
        assert body["csv"].startswith("mode,samples,")
