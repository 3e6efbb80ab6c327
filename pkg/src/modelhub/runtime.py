"""Container-runtime adapter: builds and runs model containers from sealed
bundles, attaches the no-egress network policy, health-checks replicas, and
exposes uniform replica handles to the gateway.

Two runtimes speak the same verb set: ``EngineRuntime`` talks to a Docker
Engine HTTP API (unix socket or TCP), and ``MockRuntime`` implements the
verbs in-process, backing each "container" with a real loopback
``StubModelServer`` so end-to-end tests exercise genuine HTTP traffic.
"""

from __future__ import annotations

import http.client
import json
import socket
import threading
import time
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import requests

from .acquisition import WeightBundle
from .errors import (
    BuildFailed,
    IllegalTransition,
    PreconditionFailed,
    RuntimeUnavailable,
    StartupTimeout,
    UnknownReplica,
)
from .registry import Registry, Status, now_ms
from .stub_model import StubModelServer

# Network policy attached to every created container: ingress only from the
# gateway network, no outbound route (the isolated inference side).
NO_EGRESS_NETWORK = {"ingress": ["gateway"], "egress": "none"}


class ReplicaState(str, Enum):
    STARTING = "Starting"
    HEALTHY = "Healthy"
    DRAINING = "Draining"
    STOPPED = "Stopped"
    DEAD = "Dead"


class StopMode(str, Enum):
    DRAIN = "Drain"
    KILL = "Kill"


class EventKind(str, Enum):
    CREATED = "Created"
    HEALTH_PASS = "HealthPass"
    HEALTH_FAIL = "HealthFail"
    DRAINED = "Drained"
    STOPPED = "Stopped"
    DIED = "Died"


@dataclass(frozen=True)
class ReplicaHandle:
    replica_id: str
    model_id: str
    version: str
    endpoint: str  # host:port of the replica's inference socket
    state: ReplicaState
    started_at: int
    reason: str = ""  # populated for Dead


@dataclass(frozen=True)
class RuntimeEvent:
    ts_ms: int
    replica_id: str
    kind: EventKind
    detail: str = ""


@dataclass(frozen=True)
class ProbeResult:
    passed: bool
    reason: str = ""


# --- container runtimes -----------------------------------------------------

class MockRuntime:
    """In-process stand-in for the container engine.

    Containers are loopback stub-model servers; every create request payload
    is captured so tests can assert the isolation policy rode along.
    """

    def __init__(self, available: bool = True):
        self.available = available
        self.images: dict[str, dict] = {}
        self.containers: dict[str, dict] = {}
        self.create_requests: list[dict] = []
        self._stats_scripts: dict[str, list] = {}
        self._lock = threading.Lock()

    def _check(self):
        if not self.available:
            raise RuntimeUnavailable("mock runtime marked unavailable")

    def build_image(self, profile: str, bundle: WeightBundle,
                    env: Optional[dict[str, str]] = None) -> str:
        self._check()
        if profile != "stub":
            raise BuildFailed(f"unknown runtime profile {profile!r}")
        digest = bundle.digest()
        image_ref = f"modelhub/stub:{digest[:8]}"
        with self._lock:
            self.images[image_ref] = {
                "profile": profile,
                "bundle_digest": digest,
                "env": dict(env or {}),
            }
        return image_ref

    def create_container(self, spec: dict) -> str:
        self._check()
        with self._lock:
            self.create_requests.append(json.loads(json.dumps(spec)))
            image = self.images.get(spec["image_ref"])
            if image is None:
                raise RuntimeUnavailable(f"image {spec['image_ref']} not found")
            env = dict(image.get("env", {}))
            env.update(spec.get("env", {}))
            container_id = f"c-{uuid.uuid4().hex[:12]}"
            server = StubModelServer(model_id=spec["model_id"],
                                     version=spec["version"], env=env)
            self.containers[container_id] = {
                "spec": spec, "server": server, "state": "created",
                "mem_bytes": 64 * 1024 * 1024,
            }
            return container_id

    def start_container(self, container_id: str) -> None:
        self._check()
        c = self._container(container_id)
        c["server"].start()
        c["state"] = "running"

    def stop_container(self, container_id: str, *, kill: bool = False,
                       drain_timeout_s: float = 10.0) -> None:
        c = self._container(container_id)
        server: StubModelServer = c["server"]
        if c["state"] == "running":
            if kill:
                server.abort()
            else:
                server.drain()
                deadline = time.monotonic() + drain_timeout_s
                while server.in_flight > 0 and time.monotonic() < deadline:
                    time.sleep(0.005)
                server.close()
        c["state"] = "exited"

    def remove_container(self, container_id: str) -> None:
        c = self._container(container_id)
        if c["state"] == "running":
            c["server"].abort()
        with self._lock:
            del self.containers[container_id]

    def endpoint_of(self, container_id: str) -> str:
        return self._container(container_id)["server"].endpoint

    def stats(self, container_id: str) -> Optional[dict]:
        """One stats sample, or None when the source is unreachable.
        Scripted sequences (tests) take precedence over the default."""
        with self._lock:
            c = self.containers.get(container_id)
            script = self._stats_scripts.get(container_id)
            if script:
                return script.pop(0)
        if c is None or c["state"] != "running":
            return None
        return {"mem_bytes": c["mem_bytes"]}

    def set_stats_script(self, container_id: str, samples: list) -> None:
        with self._lock:
            self._stats_scripts[container_id] = list(samples)

    def list_containers(self) -> list[str]:
        with self._lock:
            return list(self.containers)

    def _container(self, container_id: str) -> dict:
        c = self.containers.get(container_id)
        if c is None:
            raise UnknownReplica(container_id)
        return c


class EngineRuntime:
    """Docker Engine HTTP API subset (create/start/stop/remove/stats) over a
    unix socket or TCP endpoint. Image assembly beyond tagging is deployment
    tooling and out of scope; the stub profile assumes its base image is
    available to the engine."""

    def __init__(self, socket_path: str = "/var/run/docker.sock",
                 base_url: Optional[str] = None, timeout_s: float = 10.0):
        self.socket_path = socket_path
        self.base_url = base_url  # e.g. "http://127.0.0.1:2375" for TCP engines
        self.timeout_s = timeout_s

    # -- low-level request plumbing

    def _request(self, method: str, path: str, body: Optional[dict] = None) -> dict:
        raw = json.dumps(body).encode() if body is not None else None
        try:
            if self.base_url:
                url = self.base_url.rstrip("/") + path
                resp = requests.request(method, url, data=raw, timeout=self.timeout_s,
                                        headers={"Content-Type": "application/json"})
                status, text = resp.status_code, resp.text
            else:
                conn = _UnixHTTPConnection(self.socket_path, timeout=self.timeout_s)
                headers = {"Host": "docker", "Content-Type": "application/json"}
                conn.request(method, path, body=raw, headers=headers)
                r = conn.getresponse()
                status, text = r.status, r.read().decode("utf-8", "replace")
                conn.close()
        except (OSError, requests.RequestException) as exc:
            raise RuntimeUnavailable(f"engine unreachable: {exc}") from exc
        if status >= 400:
            raise RuntimeUnavailable(f"engine {method} {path}: status {status} {text[:200]}")
        return json.loads(text) if text.strip() else {}

    def ping(self) -> None:
        self._request("GET", "/version")

    # -- verbs

    def build_image(self, profile: str, bundle: WeightBundle,
                    env: Optional[dict[str, str]] = None) -> str:
        if profile != "stub":
            raise BuildFailed(f"unknown runtime profile {profile!r}")
        self.ping()
        return f"modelhub/stub:{bundle.digest()[:8]}"

    def create_container(self, spec: dict) -> str:
        body = {
            "Image": spec["image_ref"],
            "Env": [f"{k}={v}" for k, v in spec.get("env", {}).items()],
            "Labels": {"modelhub.model_id": spec["model_id"],
                       "modelhub.version": spec["version"]},
            "HostConfig": {
                "NetworkMode": spec["network"].get("mode", "modelhub-internal"),
                "ReadonlyRootfs": True,
                "Binds": spec.get("binds", []),
            },
        }
        doc = self._request("POST", "/containers/create", body)
        return doc["Id"]

    def start_container(self, container_id: str) -> None:
        self._request("POST", f"/containers/{container_id}/start")

    def stop_container(self, container_id: str, *, kill: bool = False,
                       drain_timeout_s: float = 10.0) -> None:
        t = 0 if kill else int(drain_timeout_s)
        self._request("POST", f"/containers/{container_id}/stop?t={t}")

    def remove_container(self, container_id: str) -> None:
        self._request("DELETE", f"/containers/{container_id}?force=true")

    def endpoint_of(self, container_id: str) -> str:
        doc = self._request("GET", f"/containers/{container_id}/json")
        ip = doc["NetworkSettings"]["IPAddress"]
        return f"{ip}:8000"

    def stats(self, container_id: str) -> Optional[dict]:
        try:
            doc = self._request("GET", f"/containers/{container_id}/stats?stream=false")
        except RuntimeUnavailable:
            return None
        mem = doc.get("memory_stats", {}).get("usage", 0)
        return {"mem_bytes": mem}

    def list_containers(self) -> list[str]:
        doc = self._request("GET", "/containers/json?all=true")
        return [c["Id"] for c in doc] if isinstance(doc, list) else []


class _UnixHTTPConnection(http.client.HTTPConnection):
    def __init__(self, socket_path: str, timeout: float):
        super().__init__("localhost", timeout=timeout)
        self._socket_path = socket_path

    def connect(self):
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(self.timeout)
        sock.connect(self._socket_path)
        self.sock = sock


# --- replica lifecycle ------------------------------------------------------

@dataclass
class RuntimeConfig:
    startup_timeout_s: float = 5.0
    health_interval_s: float = 5.0
    health_timeout_s: float = 2.0
    health_fail_threshold: int = 3
    drain_timeout_s: float = 10.0


class ReplicaManager:
    """Owns replica lifecycles on top of a container runtime.

    Lifecycle operations are serialized per replica; handles returned to
    callers are immutable snapshots. An optional background prober marks a
    replica Dead after ``health_fail_threshold`` consecutive failures.
    """

    def __init__(self, runtime, registry: Optional[Registry] = None,
                 config: Optional[RuntimeConfig] = None):
        self.runtime = runtime
        self.registry = registry
        self.config = config or RuntimeConfig()
        self._replicas: dict[str, dict] = {}  # replica_id -> mutable cell
        self._events: list[RuntimeEvent] = []
        self._lock = threading.RLock()
        self._fail_counts: dict[str, int] = {}
        self._prober: Optional[threading.Thread] = None
        self._prober_stop = threading.Event()

    # -- events

    def _emit(self, replica_id: str, kind: EventKind, detail: str = "") -> None:
        with self._lock:
            self._events.append(RuntimeEvent(now_ms(), replica_id, kind, detail))

    def events(self, replica_id: Optional[str] = None) -> list[RuntimeEvent]:
        with self._lock:
            if replica_id is None:
                return list(self._events)
            return [e for e in self._events if e.replica_id == replica_id]

    # -- containerize

    def containerize(self, bundle: WeightBundle, runtime_profile: str = "stub",
                     env: Optional[dict[str, str]] = None) -> str:
        """Build (or tag) an image serving the inference wire contract with
        the sealed bundle mounted read-only; moves the registry record to
        Containerized."""
        if not bundle.sealed:
            raise PreconditionFailed("bundle must be sealed before containerization")
        image_ref = self.runtime.build_image(runtime_profile, bundle, env=env)
        if self.registry is not None:
            self.registry.transition_status(
                bundle.model_id, bundle.version, Status.CONTAINERIZED,
                weights_digest=bundle.digest(), image_ref=image_ref)
        return image_ref

    # -- replica start/stop

    def start_replica(self, model_id: str, version: str,
                      env_overrides: Optional[dict[str, str]] = None) -> ReplicaHandle:
        """Start one replica and wait for it to become Healthy within the
        startup timeout; on timeout the container is torn down and nothing
        lingers."""
        image_ref = "modelhub/stub:unknown"
        if self.registry is not None:
            rec = self.registry.get(model_id, version)
            if rec.status not in (Status.CONTAINERIZED, Status.RUNNING, Status.STOPPED):
                raise PreconditionFailed(
                    f"cannot start {model_id}@{version} from status {rec.status.value}")
            image_ref = rec.image_ref
        replica_id = f"r-{uuid.uuid4().hex[:12]}"
        spec = {
            "image_ref": image_ref,
            "model_id": model_id,
            "version": version,
            "env": {"MODEL_ID": model_id, "MODEL_VERSION": version,
                    "IMAGE_DIGEST": image_ref.rsplit(":", 1)[-1],
                    **(env_overrides or {})},
            "network": dict(NO_EGRESS_NETWORK),
            "labels": {"modelhub.replica_id": replica_id},
        }
        container_id = self.runtime.create_container(spec)
        self._emit(replica_id, EventKind.CREATED, container_id)
        try:
            self.runtime.start_container(container_id)
            endpoint = self.runtime.endpoint_of(container_id)
        except Exception:
            self.runtime.remove_container(container_id)
            raise
        cell = {
            "replica_id": replica_id, "container_id": container_id,
            "model_id": model_id, "version": version, "endpoint": endpoint,
            "state": ReplicaState.STARTING, "started_at": now_ms(), "reason": "",
        }
        with self._lock:
            self._replicas[replica_id] = cell
            self._fail_counts[replica_id] = 0

        deadline = time.monotonic() + self.config.startup_timeout_s
        while time.monotonic() < deadline:
            result = self._probe_endpoint(endpoint)
            self._emit(replica_id,
                       EventKind.HEALTH_PASS if result.passed else EventKind.HEALTH_FAIL,
                       result.reason)
            if result.passed:
                with self._lock:
                    cell["state"] = ReplicaState.HEALTHY
                if self.registry is not None:
                    rec = self.registry.get(model_id, version)
                    if rec.status in (Status.CONTAINERIZED, Status.STOPPED):
                        self.registry.transition_status(model_id, version, Status.RUNNING)
                return self._snapshot(cell)
            time.sleep(min(0.05, self.config.startup_timeout_s / 10))
        # Teardown: no lingering container on failure.
        with self._lock:
            self._replicas.pop(replica_id, None)
            self._fail_counts.pop(replica_id, None)
        self.runtime.stop_container(container_id, kill=True)
        self.runtime.remove_container(container_id)
        self._emit(replica_id, EventKind.DIED, "startup timeout")
        raise StartupTimeout(
            f"{model_id}@{version} not healthy within {self.config.startup_timeout_s}s")

    def stop_replica(self, replica_id: str, mode: StopMode = StopMode.DRAIN) -> None:
        """Drain waits (bounded) for in-flight work before stopping; Kill
        stops immediately and in-flight jobs surface ReplicaLost upstream."""
        with self._lock:
            cell = self._replicas.get(replica_id)
            if cell is None:
                raise UnknownReplica(replica_id)
            if mode is StopMode.DRAIN:
                cell["state"] = ReplicaState.DRAINING
        if mode is StopMode.DRAIN:
            self.runtime.stop_container(cell["container_id"], kill=False,
                                        drain_timeout_s=self.config.drain_timeout_s)
            self._emit(replica_id, EventKind.DRAINED)
        else:
            self.runtime.stop_container(cell["container_id"], kill=True)
        with self._lock:
            cell["state"] = ReplicaState.STOPPED
            self._replicas.pop(replica_id, None)
            self._fail_counts.pop(replica_id, None)
        self.runtime.remove_container(cell["container_id"])
        self._emit(replica_id, EventKind.STOPPED, mode.value)
        self._maybe_mark_model_stopped(cell["model_id"], cell["version"])

    def _maybe_mark_model_stopped(self, model_id: str, version: str) -> None:
        if self.registry is None:
            return
        with self._lock:
            live = [c for c in self._replicas.values()
                    if c["model_id"] == model_id and c["version"] == version
                    and c["state"] in (ReplicaState.STARTING, ReplicaState.HEALTHY,
                                       ReplicaState.DRAINING)]
        if not live:
            rec = self.registry.find(model_id, version)
            if rec is not None and rec.status is Status.RUNNING:
                try:
                    self.registry.transition_status(model_id, version, Status.STOPPED)
                except IllegalTransition:
                    pass  # a concurrent stop already moved it

    def stop_all(self, mode: StopMode = StopMode.KILL) -> None:
        with self._lock:
            ids = list(self._replicas)
        for replica_id in ids:
            try:
                self.stop_replica(replica_id, mode)
            except UnknownReplica:
                pass

    # -- health

    def _probe_endpoint(self, endpoint: str) -> ProbeResult:
        url = f"http://{endpoint}/healthz"
        try:
            resp = requests.get(url, timeout=self.config.health_timeout_s)
        except requests.RequestException as exc:
            reason = "connection refused" if isinstance(
                exc, requests.ConnectionError) else str(exc)
            return ProbeResult(False, reason)
        if resp.status_code == 200:
            return ProbeResult(True)
        return ProbeResult(False, f"status {resp.status_code}")

    def probe_health(self, replica: ReplicaHandle) -> ProbeResult:
        """Single health probe, pure observation; emits a RuntimeEvent and
        feeds the consecutive-failure counter."""
        result = self._probe_endpoint(replica.endpoint)
        self._emit(replica.replica_id,
                   EventKind.HEALTH_PASS if result.passed else EventKind.HEALTH_FAIL,
                   result.reason)
        self._note_probe(replica.replica_id, result)
        return result

    def _note_probe(self, replica_id: str, result: ProbeResult) -> None:
        with self._lock:
            cell = self._replicas.get(replica_id)
            if cell is None:
                return
            if result.passed:
                self._fail_counts[replica_id] = 0
                return
            self._fail_counts[replica_id] = self._fail_counts.get(replica_id, 0) + 1
            if (self._fail_counts[replica_id] >= self.config.health_fail_threshold
                    and cell["state"] in (ReplicaState.STARTING, ReplicaState.HEALTHY)):
                cell["state"] = ReplicaState.DEAD
                cell["reason"] = result.reason
                self._events.append(RuntimeEvent(now_ms(), replica_id,
                                                 EventKind.DIED, result.reason))

    def report_connection_failure(self, replica_id: str, reason: str) -> None:
        """Gateway feedback: a dispatch to this replica failed at the
        transport level; counts like a failed probe."""
        self._emit(replica_id, EventKind.HEALTH_FAIL, reason)
        self._note_probe(replica_id, ProbeResult(False, reason))

    def start_prober(self) -> None:
        if self._prober is not None:
            return
        self._prober_stop.clear()
        self._prober = threading.Thread(target=self._probe_loop, daemon=True)
        self._prober.start()

    def stop_prober(self) -> None:
        self._prober_stop.set()
        if self._prober is not None:
            self._prober.join(timeout=2.0)
            self._prober = None

    def _probe_loop(self) -> None:
        while not self._prober_stop.wait(self.config.health_interval_s):
            for handle in self.list_replicas():
                if handle.state in (ReplicaState.HEALTHY, ReplicaState.STARTING):
                    self.probe_health(handle)

    # -- queries

    def _snapshot(self, cell: dict) -> ReplicaHandle:
        return ReplicaHandle(
            replica_id=cell["replica_id"], model_id=cell["model_id"],
            version=cell["version"], endpoint=cell["endpoint"],
            state=cell["state"], started_at=cell["started_at"],
            reason=cell["reason"],
        )

    def list_replicas(self, model_id: Optional[str] = None,
                      version: Optional[str] = None) -> list[ReplicaHandle]:
        with self._lock:
            cells = list(self._replicas.values())
        out = []
        for c in cells:
            if model_id is not None and c["model_id"] != model_id:
                continue
            if version is not None and c["version"] != version:
                continue
            out.append(self._snapshot(c))
        return out

    def get_replica(self, replica_id: str) -> ReplicaHandle:
        with self._lock:
            cell = self._replicas.get(replica_id)
            if cell is None:
                raise UnknownReplica(replica_id)
            return self._snapshot(cell)

    def container_id_of(self, replica_id: str) -> str:
        with self._lock:
            cell = self._replicas.get(replica_id)
            if cell is None:
                raise UnknownReplica(replica_id)
            return cell["container_id"]
