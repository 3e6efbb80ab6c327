"""Service layer: config loading and validation, the HTTP endpoint surface,
API/direct-operation equivalence, and graceful shutdown."""

from __future__ import annotations

import csv
import io
import json
import threading
import time
from pathlib import Path

import pytest
import requests
import yaml

from modelhub.errors import AddrInUse, ConfigInvalid
from modelhub.registry import Status
from modelhub.service import ModelHub, load_config, serve

from conftest import (
    DEFAULT_FIXTURE_FILES,
    deploy_stub_model,
    fast_config,
    make_png,
    write_weight_fixture,
)


@pytest.fixture
def service(tmp_path):
    handle = serve(fast_config(tmp_path))
    yield handle
    handle.stop()


def case_manifest_line(tmp_path, case_id="case-1", dataset="colon") -> str:
    img = tmp_path / "case.png"
    if not img.exists():
        img.write_bytes(make_png())
    return json.dumps({"case_id": case_id, "dataset": dataset,
                       "image_path": str(img), "prompt": "describe",
                       "source_note": ""}) + "\n"


class TestConfig:
    def test_yaml_and_env_overrides(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({
            "listen_addr": "127.0.0.1:9999",
            "data_dir": str(tmp_path / "d"),
            "scale": {"q_hi": 6.0, "q_lo": 1.0},
            "batch": {"max_batch": 4, "window_ms": 10},
        }), "utf-8")
        config = load_config(path, env={"MODELHUB_ALLOW_OUTBOUND": "true",
                                        "MODELHUB_CLINICIAN_ID": "dr-x"})
        assert config.listen_addr == "127.0.0.1:9999"
        assert config.scale.q_hi == 6.0
        assert config.batch.max_batch == 4
        assert config.allow_outbound is True
        assert config.clinician_id == "dr-x"

    def test_q_lo_above_q_hi_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"scale": {"q_lo": 5.0, "q_hi": 4.0}}), "utf-8")
        with pytest.raises(ConfigInvalid) as exc_info:
            load_config(path, env={})
        assert "scale" in exc_info.value.message

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("no_such_key: 1\n", "utf-8")
        with pytest.raises(ConfigInvalid):
            load_config(path, env={})

    def test_distinct_paths_required(self, tmp_path):
        config = fast_config(tmp_path)
        config.audit_log = config.score_journal
        with pytest.raises(ConfigInvalid):
            config.validate()


class TestServe:
    def test_healthz(self, service):
        resp = requests.get(f"{service.base_url}/healthz", timeout=5)
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok"}

    def test_addr_in_use(self, tmp_path, service):
        port = service.base_url.rsplit(":", 1)[1]
        config = fast_config(tmp_path / "second",
                             listen_addr=f"127.0.0.1:{port}")
        with pytest.raises(AddrInUse):
            serve(config)

    def test_ext_reserved(self, service):
        resp = requests.get(f"{service.base_url}/api/ext/ehr", timeout=5)
        assert resp.status_code == 501

    def test_serves_dashboard_assets(self, tmp_path):
        static = tmp_path / "public"
        static.mkdir()
        (static / "index.html").write_text("<html><body>hub ui</body></html>", "utf-8")
        (static / "app.js").write_text("console.log(1)", "utf-8")
        handle = serve(fast_config(tmp_path, static_dir=str(static)))
        try:
            root = requests.get(f"{handle.base_url}/", timeout=5)
            assert root.status_code == 200 and "hub ui" in root.text
            js = requests.get(f"{handle.base_url}/app.js", timeout=5)
            assert js.headers["Content-Type"] == "text/javascript"
            missing = requests.get(f"{handle.base_url}/nope.js", timeout=5)
            assert missing.status_code == 404
        finally:
            handle.stop()

    def test_upload_limit_enforced(self, service):
        resp = requests.post(f"{service.base_url}/api/analyze",
                             files={"image": ("big.png", b"\x00" * (33 * 1024 * 1024))},
                             data={"prompt": "p", "model_id": "m"}, timeout=30)
        assert resp.status_code == 400
        assert "32 MiB" in resp.json()["message"]


class TestModelEndpoints:
    def test_register_and_list(self, service):
        resp = requests.post(f"{service.base_url}/api/models", json={
            "source": {"kind": "hub", "repo_id": "acme/tiny-echo"},
            "display_name": "Tiny Echo", "version": "1.0"}, timeout=5)
        assert resp.status_code == 201
        doc = resp.json()
        assert doc["status"] == "Registered"
        listed = requests.get(f"{service.base_url}/api/models", timeout=5).json()
        assert [m["model_id"] for m in listed] == [doc["model_id"]]
        filtered = requests.get(f"{service.base_url}/api/models",
                                params={"status": "Running"}, timeout=5).json()
        assert filtered == []

    def test_duplicate_conflict(self, service):
        body = {"source": {"kind": "hub", "repo_id": "acme/e"},
                "display_name": "E", "version": "1"}
        requests.post(f"{service.base_url}/api/models", json=body, timeout=5)
        resp = requests.post(f"{service.base_url}/api/models", json=body, timeout=5)
        assert resp.status_code == 409
        assert resp.json()["error_code"] == "DuplicateModelVersion"

    def test_invalid_source_400(self, service):
        resp = requests.post(f"{service.base_url}/api/models", json={
            "source": {"kind": "path", "path": ""},
            "display_name": "X", "version": "1"}, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error_code"] == "InvalidSource"

    def test_acquire_start_stop_lifecycle(self, service, tmp_path):
        src = write_weight_fixture(tmp_path / "weights", DEFAULT_FIXTURE_FILES)
        doc = requests.post(f"{service.base_url}/api/models", json={
            "source": {"kind": "path", "path": str(src)},
            "display_name": "Local Stub", "version": "1"}, timeout=5).json()
        model_id = doc["model_id"]
        resp = requests.post(
            f"{service.base_url}/api/models/{model_id}/1/acquire", timeout=15)
        assert resp.status_code == 200
        assert resp.json()["record"]["status"] == "Containerized"
        resp = requests.post(
            f"{service.base_url}/api/models/{model_id}/1/start", timeout=15)
        assert resp.status_code == 200
        assert resp.json()["state"] == "Healthy"
        resp = requests.post(
            f"{service.base_url}/api/models/{model_id}/1/stop",
            json={"mode": "drain"}, timeout=15)
        assert resp.json()["stopped"] == 1

    def test_unknown_model_404(self, service):
        resp = requests.post(
            f"{service.base_url}/api/models/ghost/1/acquire", timeout=5)
        assert resp.status_code == 404
        assert resp.json()["error_code"] == "UnknownModel"

    def test_bogus_status_filter_400(self, service):
        resp = requests.get(f"{service.base_url}/api/models",
                            params={"status": "Bogus"}, timeout=5)
        assert resp.status_code == 400

    def test_bogus_source_kind_400(self, service):
        resp = requests.post(f"{service.base_url}/api/models", json={
            "source": {"kind": "carrier-pigeon", "repo_id": "x"},
            "display_name": "X", "version": "1"}, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error_code"] == "InvalidSource"

    def test_failed_acquire_retries_via_endpoint(self, service, tmp_path):
        files = dict(DEFAULT_FIXTURE_FILES)
        src = write_weight_fixture(tmp_path / "weights", files)
        good = (src / "weights.bin").read_bytes()
        (src / "weights.bin").write_bytes(good[:-1] + bytes([good[-1] ^ 0xFF]))
        doc = requests.post(f"{service.base_url}/api/models", json={
            "source": {"kind": "path", "path": str(src)},
            "display_name": "Flaky", "version": "1"}, timeout=5).json()
        model_id = doc["model_id"]

        resp = requests.post(
            f"{service.base_url}/api/models/{model_id}/1/acquire", timeout=15)
        assert resp.status_code == 503
        assert resp.json()["error_code"] == "DigestMismatch"
        listed = requests.get(f"{service.base_url}/api/models", timeout=5).json()
        assert listed[0]["status"] == "Failed"
        assert "weights.bin" in listed[0]["failure_reason"]

        (src / "weights.bin").write_bytes(good)  # operator fixes the source
        resp = requests.post(
            f"{service.base_url}/api/models/{model_id}/1/acquire", timeout=15)
        assert resp.status_code == 200
        assert resp.json()["record"]["status"] == "Containerized"

    def test_interrupted_remote_acquire_resumes_via_endpoint(self, tmp_path):
        from modelhub.testing import MockHub
        hub_server = MockHub()
        files = {"weights.bin": bytes(range(256)) * 32, "cfg.json": b"{}"}
        hub_server.add_repo("acme/resume", "1", files)
        hub_server.start()
        handle = serve(fast_config(tmp_path, allow_outbound=True,
                                   hub_base_url=hub_server.base_url))
        try:
            doc = requests.post(f"{handle.base_url}/api/models", json={
                "source": {"kind": "hub", "repo_id": "acme/resume"},
                "display_name": "Resumable", "version": "1"}, timeout=5).json()
            model_id = doc["model_id"]
            # Simulate a prior crash: record stuck Acquiring, one file done.
            handle.hub.registry.transition_status(model_id, "1", Status.ACQUIRING)
            bdir = handle.hub.acquirer.store.bundle_dir(model_id, "1")
            bdir.mkdir(parents=True)
            (bdir / "weights.bin").write_bytes(files["weights.bin"])
            resp = requests.post(
                f"{handle.base_url}/api/models/{model_id}/1/acquire", timeout=15)
            assert resp.status_code == 200
            assert resp.json()["record"]["status"] == "Containerized"
            # Only the missing file's bytes crossed the wire.
            assert hub_server.served_for("acme/resume", "1", "weights.bin") == 0
            assert hub_server.served_for("acme/resume", "1", "cfg.json") == len(b"{}")
        finally:
            handle.stop()
            hub_server.stop()


class TestAnalyze:
    def test_multipart_analyze(self, service, tmp_path):
        record = deploy_stub_model(service.hub, tmp_path)
        prompt = "Can you describe morphology changes in this image?"
        resp = requests.post(
            f"{service.base_url}/api/analyze",
            files={"image": ("tiny.png", make_png())},
            data={"prompt": prompt, "model_id": record.model_id},
            timeout=15)
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["output_text"].endswith(f"]: {prompt}")
        assert doc["version"] == "1"
        assert doc["latency_ms"] >= 0
        # The upload is retained so the interaction can become a case.
        assert Path(doc["image_ref"]).read_bytes() == make_png()

    def test_analyze_rejects_non_image(self, service, tmp_path):
        record = deploy_stub_model(service.hub, tmp_path)
        resp = requests.post(
            f"{service.base_url}/api/analyze",
            files={"image": ("x.bin", b"not an image")},
            data={"prompt": "p", "model_id": record.model_id},
            timeout=15)
        assert resp.status_code == 400

    def test_analyze_unknown_model_404(self, service):
        resp = requests.post(
            f"{service.base_url}/api/analyze",
            files={"image": ("tiny.png", make_png())},
            data={"prompt": "p", "model_id": "ghost"},
            timeout=15)
        assert resp.status_code == 404


class TestEvaluationEndpoints:
    def _setup_case_and_model(self, service, tmp_path):
        record = deploy_stub_model(service.hub, tmp_path, start=False)
        manifest = case_manifest_line(tmp_path)
        resp = requests.post(f"{service.base_url}/api/cases/ingest",
                             data=manifest.encode(), timeout=5)
        assert resp.json() == {"ingested": 1}
        return record

    def test_score_round_trip(self, service, tmp_path):
        record = self._setup_case_and_model(service, tmp_path)
        resp = requests.post(f"{service.base_url}/api/scores", json={
            "case_id": "case-1", "model_id": record.model_id, "version": "1",
            "score": 4}, timeout=5)
        assert resp.status_code == 201
        assert resp.json()["rubric_label"] == "Correct answer with correct reasoning"
        agg = requests.get(f"{service.base_url}/api/scores/aggregate",
                           params={"dataset": "colon"}, timeout=5).json()
        assert agg["counts"]["4"] == 1 and agg["total"] == 1
        export = requests.get(f"{service.base_url}/api/export/scores.csv",
                              timeout=5)
        rows = list(csv.reader(io.StringIO(export.text)))
        assert len(rows) == 2

    def test_score_out_of_range_400(self, service, tmp_path):
        record = self._setup_case_and_model(service, tmp_path)
        resp = requests.post(f"{service.base_url}/api/scores", json={
            "case_id": "case-1", "model_id": record.model_id, "version": "1",
            "score": 7}, timeout=5)
        assert resp.status_code == 400
        assert resp.json()["error_code"] == "ScoreOutOfRange"

    def test_audit_verify_endpoint(self, service, tmp_path):
        self._setup_case_and_model(service, tmp_path)
        doc = requests.get(f"{service.base_url}/api/audit/verify", timeout=5).json()
        assert doc["ok"] is True
        assert doc["entries"] == len(service.hub.audit)

    def test_telemetry_csv_endpoint(self, service, tmp_path):
        record = deploy_stub_model(service.hub, tmp_path)
        service.hub.sampler.run_once()
        resp = requests.get(
            f"{service.base_url}/api/telemetry/{record.model_id}", timeout=5)
        assert resp.status_code == 200
        rows = list(csv.reader(io.StringIO(resp.text)))
        assert rows[0] == list(
            ("ts_ms", "gpu_util_pct", "mem_bytes", "p50_ms", "p95_ms", "p99_ms"))
        assert len(rows) == 2
        windowed = requests.get(
            f"{service.base_url}/api/telemetry/{record.model_id}",
            params={"from_ms": 0, "to_ms": 1}, timeout=5)
        assert len(windowed.text.strip().splitlines()) == 1  # header only
        bad = requests.get(
            f"{service.base_url}/api/telemetry/{record.model_id}",
            params={"from_ms": "yesterday"}, timeout=5)
        assert bad.status_code == 400


ROUTE_COVERAGE = {
    # primary-module public operation -> the one endpoint exposing it
    "registry.register_model": ("POST", "/api/models"),
    "registry.list_models": ("GET", "/api/models"),
    "registry.transition_status": ("POST", "/api/models/{id}/{ver}/acquire"),
    "acquisition.acquire": ("POST", "/api/models/{id}/{ver}/acquire"),
    "acquisition.resume": ("POST", "/api/models/{id}/{ver}/acquire"),
    "runtime.containerize": ("POST", "/api/models/{id}/{ver}/acquire"),
    "runtime.start_replica": ("POST", "/api/models/{id}/{ver}/start"),
    "runtime.stop_replica": ("POST", "/api/models/{id}/{ver}/stop"),
    "gateway.submit": ("POST", "/api/analyze"),
    "gateway.hot_swap": ("POST", "/api/models/{id}/{ver}/swap"),
    "telemetry.export_series": ("GET", "/api/telemetry/{model}"),
    "evaluation.ingest_cases": ("POST", "/api/cases/ingest"),
    "evaluation.submit_score": ("POST", "/api/scores"),
    "evaluation.aggregate_scores": ("GET", "/api/scores/aggregate"),
    "evaluation.export_scores": ("GET", "/api/export/scores.csv"),
    "evaluation.verify_audit": ("GET", "/api/audit/verify"),
}


class TestRouteCoverage:
    def test_every_operation_has_exactly_one_endpoint(self):
        # Each op maps to one endpoint (several ops may share a composite
        # endpoint, e.g. acquire implies containerize).
        assert all(len(v) == 2 for v in ROUTE_COVERAGE.values())
        endpoints = set(ROUTE_COVERAGE.values())
        assert ("POST", "/api/analyze") in endpoints
        assert len({op.split(".")[0] for op in ROUTE_COVERAGE}) == 6

    def test_all_routes_respond(self, service, tmp_path):
        """Fire each endpoint once and check none of them 404 at the
        routing level (missing route returns error_code NotFound)."""
        record = deploy_stub_model(service.hub, tmp_path)
        requests.post(f"{service.base_url}/api/cases/ingest",
                      data=case_manifest_line(tmp_path).encode(), timeout=5)
        base = service.base_url
        m, v = record.model_id, "1"
        calls = [
            ("GET", "/api/models", {}),
            ("POST", f"/api/models/{m}/{v}/swap", {}),
            ("POST", "/api/analyze", {"files": {"image": ("i.png", make_png())},
                                      "data": {"prompt": "p", "model_id": m}}),
            ("GET", f"/api/telemetry/{m}", {}),
            ("POST", "/api/scores", {"json": {"case_id": "case-1", "model_id": m,
                                              "version": v, "score": 2}}),
            ("GET", "/api/scores/aggregate", {}),
            ("GET", "/api/export/scores.csv", {}),
            ("GET", "/api/audit/verify", {}),
        ]
        for method, path, kwargs in calls:
            resp = requests.request(method, base + path, timeout=15, **kwargs)
            assert resp.status_code < 500, (path, resp.text)
            if resp.status_code == 404:
                assert resp.json()["error_code"] != "NotFound", path


class TestStatelessness:
    def test_http_script_equals_direct_script(self, tmp_path):
        """A randomized operation script produces the same observable state
        whether driven over HTTP or directly."""
        import random
        img = tmp_path / "img.png"
        img.write_bytes(make_png())
        rng = random.Random(2026)
        script: list[tuple] = [
            ("register", "hub", "acme/alpha", "Alpha", "1"),
            ("ingest", json.dumps({"case_id": "c1", "dataset": "colon",
                                   "image_path": str(img), "prompt": "p",
                                   "source_note": ""}) + "\n"),
        ]
        case_count = 1
        model_count = 1
        for _ in range(rng.randint(10, 30)):
            roll = rng.random()
            if roll < 0.25:
                model_count += 1
                script.append(("register", "hub", f"acme/m{model_count}",
                               f"Model {model_count}", str(rng.randint(1, 2))))
            elif roll < 0.45:
                case_count += 1
                script.append(("ingest", json.dumps({
                    "case_id": f"c{case_count}",
                    "dataset": rng.choice(["colon", "renal"]),
                    "image_path": str(img), "prompt": "p",
                    "source_note": ""}) + "\n"))
            else:
                script.append(("score", f"c{rng.randint(1, case_count)}",
                               rng.randrange(model_count), str(rng.randint(0, 4))))

        handle = serve(fast_config(tmp_path / "via-http"))
        try:
            models: list[tuple[str, str]] = []  # (model_id, version)
            for op in script:
                if op[0] == "register":
                    doc = requests.post(f"{handle.base_url}/api/models", json={
                        "source": {"kind": op[1], "repo_id": op[2], "path": op[2]},
                        "display_name": op[3], "version": op[4]}, timeout=5).json()
                    models.append((doc["model_id"], doc["version"]))
                elif op[0] == "ingest":
                    requests.post(f"{handle.base_url}/api/cases/ingest",
                                  data=op[1].encode(), timeout=5)
                else:
                    model_id, version = models[op[2]]
                    requests.post(f"{handle.base_url}/api/scores", json={
                        "case_id": op[1], "model_id": model_id,
                        "version": version, "score": int(op[3])}, timeout=5)
            http_models = [(m["model_id"], m["status"]) for m in requests.get(
                f"{handle.base_url}/api/models", timeout=5).json()]
            http_agg = requests.get(f"{handle.base_url}/api/scores/aggregate",
                                    timeout=5).json()
            http_export = requests.get(f"{handle.base_url}/api/export/scores.csv",
                                       timeout=5).text
        finally:
            handle.stop()

        hub = ModelHub(fast_config(tmp_path / "direct"))
        try:
            models = []
            for op in script:
                if op[0] == "register":
                    rec = hub.register_model(op[1], op[2], op[3], op[4])
                    models.append((rec.model_id, rec.version))
                elif op[0] == "ingest":
                    hub.ingest_cases(op[1])
                else:
                    model_id, version = models[op[2]]
                    hub.submit_score(op[1], model_id, version, int(op[3]))
            direct_models = [(m.model_id, m.status.value) for m in hub.list_models()]
            direct = hub.aggregate_scores()
            direct_agg = {"counts": {str(k): v for k, v in direct.counts.items()},
                          "total": direct.total,
                          "percentages": {str(k): v for k, v in direct.percentages.items()}}
            direct_export = hub.export_scores_csv()
        finally:
            hub.close()

        assert http_models == direct_models
        assert http_agg == direct_agg

        def rows_without_timestamps(export: str):
            return [r.rsplit(",", 1)[0] for r in export.strip().split("\r\n")]

        assert rows_without_timestamps(http_export) == rows_without_timestamps(direct_export)


class TestShutdown:
    def test_inflight_requests_complete_on_stop(self, tmp_path):
        handle = serve(fast_config(tmp_path))
        record = deploy_stub_model(handle.hub, tmp_path,
                                   env={"STUB_DELAY_MS": "150"})
        statuses = []

        def fire():
            resp = requests.post(
                f"{handle.base_url}/api/analyze",
                files={"image": ("i.png", make_png())},
                data={"prompt": "slow", "model_id": record.model_id},
                timeout=20)
            statuses.append(resp.status_code)

        threads = [threading.Thread(target=fire) for _ in range(4)]
        for t in threads:
            t.start()
        time.sleep(0.1)
        handle.stop()
        for t in threads:
            t.join(timeout=20)
        assert statuses.count(200) == 4
