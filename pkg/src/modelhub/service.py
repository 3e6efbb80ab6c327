"""Frontend-backend boundary: configuration, the composition root wiring
all planes together, and the HTTP API the dashboard and CLI consume.

Endpoint map (JSON bodies unless noted):

    GET  /healthz
    POST /api/models                          register (hub id or local path)
    GET  /api/models[?status=]                list registry
    POST /api/models/{id}/{ver}/acquire       fetch weights + containerize
    POST /api/models/{id}/{ver}/start         start one replica
    POST /api/models/{id}/{ver}/stop          stop replicas {mode: drain|kill}
    POST /api/models/{id}/{ver}/swap          blue-green hot swap to {ver}
    POST /api/analyze                         multipart image+prompt+model_id
    GET  /api/telemetry/{model}[?from_ms=&to_ms=]   CSV series
    POST /api/cases/ingest                    body = case manifest lines
    POST /api/scores                          submit a rubric score
    GET  /api/scores/aggregate[?dataset=&model_id=&clinician_id=]
    GET  /api/export/scores.csv
    GET  /api/audit/verify
    GET  /                                    dashboard static assets
    /api/ext/...                              reserved EHR extension point

Errors map to ``{error_code, message}`` bodies with the raising error's
HTTP status.
"""

from __future__ import annotations

import dataclasses
import email.parser
import email.policy
import io
import json
import os
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

import yaml
from PIL import Image, UnidentifiedImageError

from . import registry as registry_mod
from .acquisition import AcquireConfig, Acquirer
from .errors import (
    AddrInUse,
    ConfigInvalid,
    ModelHubError,
    PreconditionFailed,
)
from .evaluation import AuditKind, AuditLog, EvaluationStore
from .gateway import (
    BatchPolicy,
    Gateway,
    ImagePayload,
    InferenceResult,
    ScalePolicy,
    SwapReport,
    make_job,
)
from .registry import LocalPath, ModelRecord, Registry, RemoteHub, Status
from .runtime import (
    EngineRuntime,
    MockRuntime,
    ReplicaManager,
    RuntimeConfig,
    StopMode,
)
from .telemetry import Sampler, TelemetryStore

MAX_UPLOAD_BYTES = 32 * 1024 * 1024

_PIL_MEDIA = {"PNG": "png", "JPEG": "jpeg", "TIFF": "tiff"}


# --- configuration ----------------------------------------------------------

@dataclass
class ServiceConfig:
    listen_addr: str = "127.0.0.1:8080"
    data_dir: str = "./modelhub-data"
    blob_root: str = ""          # default: {data_dir}/blobs-root
    registry_journal: str = ""   # default: {data_dir}/registry.journal
    registry_snapshot: str = ""  # default: {data_dir}/registry.snapshot.json
    audit_log: str = ""          # default: {data_dir}/audit.log
    score_journal: str = ""      # default: {data_dir}/scores.journal
    case_store: str = ""         # default: {data_dir}/cases.manifest
    runtime: str = "mock"        # mock | engine
    engine_socket: str = "/var/run/docker.sock"
    allow_outbound: bool = False
    hub_base_url: str = ""
    clinician_id: str = "anonymous"
    autostart: bool = True
    batch: BatchPolicy = field(default_factory=BatchPolicy)
    scale: ScalePolicy = field(default_factory=ScalePolicy)
    startup_timeout_s: float = 5.0
    health_interval_s: float = 5.0
    drain_timeout_s: float = 10.0
    sample_interval_s: float = 1.0
    autoscale_interval_s: float = 1.0
    static_dir: str = ""

    def __post_init__(self):
        data = Path(self.data_dir)
        if not self.blob_root:
            self.blob_root = str(data / "blobs-root")
        if not self.registry_journal:
            self.registry_journal = str(data / "registry.journal")
        if not self.registry_snapshot:
            self.registry_snapshot = str(data / "registry.snapshot.json")
        if not self.audit_log:
            self.audit_log = str(data / "audit.log")
        if not self.score_journal:
            self.score_journal = str(data / "scores.journal")
        if not self.case_store:
            self.case_store = str(data / "cases.manifest")

    def validate(self) -> None:
        if self.runtime not in ("mock", "engine"):
            raise ConfigInvalid("runtime", f"must be mock or engine, got {self.runtime!r}")
        if ":" not in self.listen_addr:
            raise ConfigInvalid("listen_addr", "expected host:port")
        paths = [self.registry_journal, self.registry_snapshot, self.audit_log,
                 self.score_journal, self.case_store]
        if len(set(paths)) != len(paths):
            raise ConfigInvalid("data paths", "journal paths must be distinct")
        try:
            BatchPolicy(self.batch.max_batch, self.batch.window_ms)
        except ValueError as exc:
            raise ConfigInvalid("batch", str(exc)) from exc
        if self.scale.q_lo >= self.scale.q_hi:
            raise ConfigInvalid("scale.q_lo", "q_lo must be < q_hi")
        if self.scale.min_replicas > self.scale.max_replicas:
            raise ConfigInvalid("scale.min_replicas", "min must be <= max")


_ENV_PREFIX = "MODELHUB_"

_BOOL_KEYS = {"allow_outbound", "autostart"}
_FLOAT_KEYS = {"startup_timeout_s", "health_interval_s", "drain_timeout_s",
               "sample_interval_s", "autoscale_interval_s"}


def load_config(path: Optional[Path] = None,
                env: Optional[dict[str, str]] = None) -> ServiceConfig:
    """Load YAML config (tree of plain keys; ``batch:`` and ``scale:``
    subtrees) with ``MODELHUB_*`` environment overrides on top."""
    doc: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text("utf-8"))
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigInvalid("<root>", "config file must be a mapping")
            doc = loaded
    env = dict(os.environ if env is None else env)
    for key, value in env.items():
        if not key.startswith(_ENV_PREFIX):
            continue
        name = key[len(_ENV_PREFIX):].lower()
        if name.startswith("batch_"):
            doc.setdefault("batch", {})[name[len("batch_"):]] = value
        elif name.startswith("scale_"):
            doc.setdefault("scale", {})[name[len("scale_"):]] = value
        else:
            doc[name] = value

    batch_doc = doc.pop("batch", {}) or {}
    scale_doc = doc.pop("scale", {}) or {}
    kwargs = {}
    for f in dataclasses.fields(ServiceConfig):
        if f.name in ("batch", "scale") or f.name not in doc:
            continue
        value = doc[f.name]
        if f.name in _BOOL_KEYS and isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        elif f.name in _FLOAT_KEYS:
            value = float(value)
        kwargs[f.name] = value
    unknown = set(doc) - {f.name for f in dataclasses.fields(ServiceConfig)}
    if unknown:
        raise ConfigInvalid(sorted(unknown)[0], "unknown config key")
    try:
        if batch_doc:
            kwargs["batch"] = BatchPolicy(
                max_batch=int(batch_doc.get("max_batch", 8)),
                window_ms=int(batch_doc.get("window_ms", 50)))
        if scale_doc:
            kwargs["scale"] = ScalePolicy(
                min_replicas=int(scale_doc.get("min_replicas", 1)),
                max_replicas=int(scale_doc.get("max_replicas", 4)),
                q_hi=float(scale_doc.get("q_hi", 4.0)),
                q_lo=float(scale_doc.get("q_lo", 0.5)),
                sustain_ms=int(scale_doc.get("sustain_ms", 3000)),
                cooldown_ms=int(scale_doc.get("cooldown_ms", 10000)))
    except ValueError as exc:
        raise ConfigInvalid("scale" if scale_doc else "batch", str(exc)) from exc
    config = ServiceConfig(**kwargs)
    config.validate()
    return config


# --- composition root -------------------------------------------------------

class ModelHub:
    """Wires registry, acquisition, runtime, gateway, telemetry, and
    evaluation together; every API endpoint and CLI subcommand delegates to
    exactly one method here."""

    def __init__(self, config: ServiceConfig):
        config.validate()
        self.config = config
        Path(config.data_dir).mkdir(parents=True, exist_ok=True)
        self.registry = Registry.open(Path(config.registry_journal),
                                      Path(config.registry_snapshot))
        self.audit = AuditLog(Path(config.audit_log))
        self.evaluation = EvaluationStore(
            audit=self.audit, registry=self.registry,
            case_store_path=Path(config.case_store),
            score_journal_path=Path(config.score_journal))
        if config.runtime == "mock":
            self.runtime = MockRuntime()
        else:
            self.runtime = EngineRuntime(socket_path=config.engine_socket)
        self.manager = ReplicaManager(
            self.runtime, self.registry,
            RuntimeConfig(startup_timeout_s=config.startup_timeout_s,
                          health_interval_s=config.health_interval_s,
                          drain_timeout_s=config.drain_timeout_s))
        self.acquirer = Acquirer(
            AcquireConfig(blob_root=Path(config.blob_root),
                          allow_outbound=config.allow_outbound,
                          hub_base_url=config.hub_base_url,
                          operator_id=config.clinician_id),
            registry=self.registry, audit=self.audit)
        self.telemetry = TelemetryStore(stats_fn=self._replica_stats)
        self.gateway = Gateway(self.manager, self.registry, self.telemetry,
                               self.audit, batch_policy=config.batch,
                               scale_policy=config.scale,
                               autostart=config.autostart)
        self.sampler = Sampler(self.telemetry, self.manager.list_replicas,
                               interval_s=config.sample_interval_s)
        self._autoscaler_stop = threading.Event()
        self._autoscaler: Optional[threading.Thread] = None

    def _replica_stats(self, replica) -> Optional[dict]:
        try:
            container_id = self.manager.container_id_of(replica.replica_id)
            return self.runtime.stats(container_id)
        except ModelHubError:
            return None

    # -- background tasks

    def start_background(self) -> None:
        self.manager.start_prober()
        self.sampler.start()
        self._autoscaler_stop.clear()
        self._autoscaler = threading.Thread(target=self._autoscale_loop, daemon=True)
        self._autoscaler.start()

    def stop_background(self) -> None:
        self._autoscaler_stop.set()
        if self._autoscaler is not None:
            self._autoscaler.join(timeout=2.0)
            self._autoscaler = None
        self.sampler.stop()
        self.manager.stop_prober()

    def _autoscale_loop(self) -> None:
        while not self._autoscaler_stop.wait(self.config.autoscale_interval_s):
            for rec in self.registry.list_models(Status.RUNNING):
                try:
                    self.gateway.autoscale_tick(rec.model_id)
                except ModelHubError:
                    pass

    # -- operations (one per endpoint)

    def register_model(self, source_kind: str, locator: str, display_name: str,
                       version: str) -> ModelRecord:
        from .errors import InvalidSource
        if source_kind == "hub":
            source = RemoteHub(locator)
        elif source_kind == "path":
            source = LocalPath(locator)
        else:
            raise InvalidSource(f"source kind must be hub or path, got {source_kind!r}")
        record = self.registry.register_model(source, display_name, version)
        self.audit.append_json(AuditKind.REGISTRATION, {
            "model_id": record.model_id, "version": record.version,
            "source": registry_mod.source_key(source)})
        return record

    def list_models(self, status: Optional[str] = None) -> list[ModelRecord]:
        try:
            status_enum = Status(status) if status else None
        except ValueError:
            raise PreconditionFailed(f"unknown status filter {status!r}") from None
        return self.registry.list_models(status_enum)

    def acquire(self, model_id: str, version: str) -> tuple[ModelRecord, str]:
        """Retrieve weights and containerize: Registered/Failed -> Acquiring
        -> Containerized; failures land the record in Failed with a reason.
        An interrupted acquisition (record already Acquiring, files on disk)
        resumes instead of restarting."""
        rec = self.registry.get(model_id, version)
        resuming = rec.status is Status.ACQUIRING
        if rec.status in (Status.REGISTERED, Status.FAILED):
            rec = self.registry.transition_status(model_id, version, Status.ACQUIRING)
        try:
            if resuming:
                bundle = self.acquirer.resume(
                    self.acquirer.progress(model_id, version), rec)
            else:
                bundle = self.acquirer.acquire(rec)
            image_ref = self.manager.containerize(bundle)
        except ModelHubError as exc:
            self.registry.transition_status(model_id, version, Status.FAILED,
                                            reason=exc.message)
            raise
        return self.registry.get(model_id, version), image_ref

    def start_model(self, model_id: str, version: str):
        return self.manager.start_replica(model_id, version)

    def stop_model(self, model_id: str, version: str, mode: str = "drain") -> int:
        stop_mode = StopMode.KILL if mode.lower() == "kill" else StopMode.DRAIN
        replicas = self.manager.list_replicas(model_id, version)
        if not replicas:
            # Validate the identifier so unknown models 404 rather than no-op.
            self.registry.get(model_id, version)
            return 0
        for handle in replicas:
            self.manager.stop_replica(handle.replica_id, stop_mode)
        return len(replicas)

    def swap_model(self, model_id: str, new_version: str) -> SwapReport:
        return self.gateway.hot_swap(model_id, new_version)

    def analyze(self, model_id: str, prompt: str, image_bytes: bytes,
                version: str = "") -> tuple[InferenceResult, str]:
        """Run one inference; the uploaded image is kept on disk so the
        interaction can later be ingested as a scored case. Returns the
        result plus the stored image path."""
        payload = image_payload_from_bytes(image_bytes)
        job = make_job(model_id=model_id, prompt=prompt, image=payload,
                       version=version)
        uploads = Path(self.config.data_dir) / "uploads"
        uploads.mkdir(parents=True, exist_ok=True)
        image_ref = uploads / f"{job.job_id}.{payload.media_type}"
        image_ref.write_bytes(image_bytes)
        return self.gateway.submit(job), str(image_ref)

    def telemetry_csv(self, model_id: str, start_ms: Optional[int] = None,
                      end_ms: Optional[int] = None) -> str:
        return self.telemetry.export_series(model_id, start_ms, end_ms).to_csv()

    def ingest_cases(self, manifest_text: str):
        return self.evaluation.ingest_cases(manifest_text)

    def submit_score(self, case_id: str, model_id: str, version: str, score: int,
                     comment: str = "", clinician_id: str = ""):
        return self.evaluation.submit_score(
            clinician_id or self.config.clinician_id, case_id, model_id,
            version, score, comment)

    def aggregate_scores(self, dataset: Optional[str] = None,
                         model_id: Optional[str] = None,
                         clinician_id: Optional[str] = None):
        return self.evaluation.aggregate_scores(dataset, model_id, clinician_id)

    def export_scores_csv(self) -> str:
        return self.evaluation.export_scores()

    def verify_audit(self):
        return self.audit.verify()

    def close(self) -> None:
        self.stop_background()
        self.gateway.close(drain=True)
        self.manager.stop_all()


def image_payload_from_bytes(data: bytes) -> ImagePayload:
    """Decode an uploaded raster image and capture its dimensions; the
    actual media type comes from the bytes, not the client's claim."""
    if len(data) > MAX_UPLOAD_BYTES:
        raise PreconditionFailed(
            f"image exceeds the {MAX_UPLOAD_BYTES // (1024 * 1024)} MiB upload limit")
    try:
        with Image.open(io.BytesIO(data)) as im:
            media_type = _PIL_MEDIA.get(im.format or "")
            if media_type is None:
                raise PreconditionFailed(
                    f"unsupported image format {im.format!r}; need png, jpeg, or tiff")
            return ImagePayload(data=data, media_type=media_type,
                                width=im.width, height=im.height,
                                channels=len(im.getbands()))
    except UnidentifiedImageError as exc:
        raise PreconditionFailed("not a decodable raster image") from exc


# --- HTTP layer -------------------------------------------------------------

def _record_doc(rec: ModelRecord) -> dict:
    return registry_mod._record_to_dict(rec)


def _result_doc(result: InferenceResult) -> dict:
    return dataclasses.asdict(result)


_ROUTE_MODEL_ACTION = re.compile(
    r"^/api/models/(?P<model_id>[^/]+)/(?P<version>[^/]+)/(?P<action>acquire|start|stop|swap)$")
_ROUTE_TELEMETRY = re.compile(r"^/api/telemetry/(?P<model_id>[^/]+)$")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    hub: ModelHub = None  # type: ignore[assignment]
    static_dir: Optional[Path] = None

    def log_message(self, *args):
        pass

    # -- plumbing

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        if length > MAX_UPLOAD_BYTES:
            raise PreconditionFailed("request body exceeds the 32 MiB limit")
        return self.rfile.read(length) if length else b""

    def _json_body(self) -> dict:
        raw = self._read_body()
        if not raw:
            return {}
        try:
            doc = json.loads(raw)
        except ValueError as exc:
            raise PreconditionFailed(f"body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise PreconditionFailed("body must be a JSON object")
        return doc

    def _send_json(self, status: int, doc) -> None:
        raw = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def _send_text(self, status: int, text: str, ctype: str) -> None:
        raw = text.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def _send_error_doc(self, exc: ModelHubError) -> None:
        self._send_json(exc.http_status,
                        {"error_code": exc.error_code, "message": exc.message})

    def _multipart_fields(self) -> dict[str, bytes]:
        ctype = self.headers.get("Content-Type", "")
        if "multipart/form-data" not in ctype:
            raise PreconditionFailed("expected multipart/form-data")
        body = self._read_body()
        msg = email.parser.BytesParser(policy=email.policy.HTTP).parsebytes(
            f"Content-Type: {ctype}\r\n\r\n".encode("ascii") + body)
        fields: dict[str, bytes] = {}
        for part in msg.iter_parts():
            name = part.get_param("name", header="content-disposition")
            if name:
                payload = part.get_payload(decode=True)
                fields[name] = payload if payload is not None else b""
        return fields

    # -- dispatch

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def _dispatch(self, method: str) -> None:
        try:
            self._route(method)
        except ModelHubError as exc:
            self._send_error_doc(exc)
        except Exception as exc:  # unexpected: 500 with the same body shape
            self._send_json(500, {"error_code": "Internal", "message": str(exc)})

    def _route(self, method: str) -> None:
        parsed = urlparse(self.path)
        path = parsed.path
        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        hub = self.hub

        if method == "GET" and path == "/healthz":
            self._send_json(200, {"status": "ok"})
            return
        if method == "POST" and path == "/api/models":
            doc = self._json_body()
            source = doc.get("source", {})
            record = hub.register_model(
                source_kind=source.get("kind", ""),
                locator=source.get("repo_id", source.get("path", "")),
                display_name=doc.get("display_name", ""),
                version=doc.get("version", ""))
            self._send_json(201, _record_doc(record))
            return
        if method == "GET" and path == "/api/models":
            records = hub.list_models(query.get("status"))
            self._send_json(200, [_record_doc(r) for r in records])
            return
        match = _ROUTE_MODEL_ACTION.match(path)
        if match and method == "POST":
            model_id, version, action = match.group("model_id", "version", "action")
            if action == "acquire":
                record, image_ref = hub.acquire(model_id, version)
                self._send_json(200, {"record": _record_doc(record),
                                      "image_ref": image_ref})
            elif action == "start":
                handle = hub.start_model(model_id, version)
                self._send_json(200, dataclasses.asdict(handle))
            elif action == "stop":
                doc = self._json_body()
                stopped = hub.stop_model(model_id, version,
                                         mode=doc.get("mode", "drain"))
                self._send_json(200, {"stopped": stopped})
            else:  # swap
                report = hub.swap_model(model_id, version)
                self._send_json(200, dataclasses.asdict(report))
            return
        if method == "POST" and path == "/api/analyze":
            fields = self._multipart_fields()
            if "image" not in fields:
                raise PreconditionFailed("multipart field 'image' is required")
            result, image_ref = hub.analyze(
                model_id=fields.get("model_id", b"").decode("utf-8"),
                prompt=fields.get("prompt", b"").decode("utf-8"),
                image_bytes=fields["image"],
                version=fields.get("version", b"").decode("utf-8"))
            doc = _result_doc(result)
            doc["image_ref"] = image_ref
            self._send_json(200, doc)
            return
        match = _ROUTE_TELEMETRY.match(path)
        if match and method == "GET":
            try:
                from_ms = int(query["from_ms"]) if "from_ms" in query else None
                to_ms = int(query["to_ms"]) if "to_ms" in query else None
            except ValueError:
                raise PreconditionFailed("from_ms/to_ms must be integers") from None
            csv_text = hub.telemetry_csv(match.group("model_id"), from_ms, to_ms)
            self._send_text(200, csv_text, "text/csv")
            return
        if method == "POST" and path == "/api/cases/ingest":
            cases = hub.ingest_cases(self._read_body().decode("utf-8"))
            self._send_json(200, {"ingested": len(cases)})
            return
        if method == "POST" and path == "/api/scores":
            doc = self._json_body()
            score = doc.get("score")
            if not isinstance(score, int) or isinstance(score, bool):
                from .errors import ScoreOutOfRange
                raise ScoreOutOfRange(f"score must be an integer, got {score!r}")
            event = hub.submit_score(
                case_id=doc.get("case_id", ""),
                model_id=doc.get("model_id", ""),
                version=doc.get("version", ""),
                score=score,
                comment=doc.get("comment", ""),
                clinician_id=doc.get("clinician_id", ""))
            self._send_json(201, dataclasses.asdict(event))
            return
        if method == "GET" and path == "/api/scores/aggregate":
            dist = hub.aggregate_scores(query.get("dataset"),
                                        query.get("model_id"),
                                        query.get("clinician_id"))
            self._send_json(200, {
                "counts": {str(k): v for k, v in dist.counts.items()},
                "total": dist.total,
                "percentages": {str(k): v for k, v in dist.percentages.items()},
            })
            return
        if method == "GET" and path == "/api/export/scores.csv":
            self._send_text(200, hub.export_scores_csv(), "text/csv")
            return
        if method == "GET" and path == "/api/audit/verify":
            verdict = hub.verify_audit()
            self._send_json(200, {"ok": verdict.ok, "entries": verdict.entries,
                                  "broken_at": verdict.broken_at})
            return
        if path.startswith("/api/ext/"):
            self._send_json(501, {"error_code": "NotImplemented",
                                  "message": "reserved EHR extension point"})
            return
        if method == "GET" and self._serve_static(path):
            return
        self._send_json(404, {"error_code": "NotFound",
                              "message": f"no route for {method} {path}"})

    def _serve_static(self, path: str) -> bool:
        if self.static_dir is None:
            return False
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            return False
        ctypes = {".html": "text/html", ".js": "text/javascript",
                  ".css": "text/css", ".svg": "image/svg+xml",
                  ".map": "application/json"}
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctypes.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)
        return True


class ServiceHandle:
    """A running service: the hub, its HTTP server, and background tasks."""

    def __init__(self, hub: ModelHub, server: ThreadingHTTPServer,
                 thread: threading.Thread):
        self.hub = hub
        self._server = server
        self._thread = thread

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        """Graceful shutdown: stop accepting, drain the gateway, stop all
        replicas and background tasks."""
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5.0)
        self.hub.close()


def serve(config: ServiceConfig) -> ServiceHandle:
    """Bring the whole service up; returns once every endpoint is live."""
    config.validate()
    hub = ModelHub(config)
    host, port_text = config.listen_addr.rsplit(":", 1)

    handler = type("BoundHandler", (_Handler,), {
        "hub": hub,
        "static_dir": Path(config.static_dir) if config.static_dir else None,
    })
    try:
        server = ThreadingHTTPServer((host, int(port_text)), handler)
    except OSError as exc:
        raise AddrInUse(f"{config.listen_addr}: {exc}") from exc
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever,
                              kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    hub.start_background()
    return ServiceHandle(hub, server, thread)


def main() -> None:
    """``modelhub-serve``: run the service until interrupted."""
    import argparse
    import signal

    parser = argparse.ArgumentParser(prog="modelhub-serve")
    parser.add_argument("--config", help="YAML config file", default=None)
    args = parser.parse_args()
    config = load_config(Path(args.config) if args.config else None)
    handle = serve(config)
    print(f"listening on {handle.base_url}", flush=True)
    try:
        signal.pause()
    except KeyboardInterrupt:
        pass
    handle.stop()
