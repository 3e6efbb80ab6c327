"""Contract-conformant stub model: an echo server speaking the replica wire
contract, enabling full-system tests without GPUs or real weights.

Endpoints:
    GET  /healthz        -> 200 {"status": "ok", ...}  (503 if STUB_FAIL_HEALTH)
    POST /v1/infer_batch -> {batch_id, items: [{job_id, text, model_version,
                             compute_ms}]}

Response text is ``ECHO[{model_id}@{version}|{digest8}]: {prompt}`` where
digest8 is the serving image's digest prefix, so tests can tell which build
answered. Knobs (env keys): STUB_DELAY_MS, STUB_FAIL_HEALTH, STUB_FAIL_RATE.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class _QuietServer(ThreadingHTTPServer):
    def handle_error(self, request, client_address):
        # Aborted connections are a simulated kill, not a bug to print.
        pass


class StubModelServer:
    """In-process stub replica. ``env`` plays the role of the container
    environment; a real deployment runs this module as the container
    entrypoint with actual env vars."""

    def __init__(self, model_id: str, version: str, env: dict[str, str] | None = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.model_id = model_id
        self.version = version
        self.env = dict(env or {})
        self.delay_ms = int(self.env.get("STUB_DELAY_MS", "0"))
        self.fail_health = self.env.get("STUB_FAIL_HEALTH", "") in ("1", "true")
        self.fail_rate = float(self.env.get("STUB_FAIL_RATE", "0"))
        self.image_digest = self.env.get("IMAGE_DIGEST", "")[:8]
        self._draining = False
        self._killed = threading.Event()
        self._in_flight = 0
        self._in_flight_lock = threading.Lock()
        self._server = _QuietServer((host, port), self._make_handler())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    # -- lifecycle

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.02}, daemon=True)
        self._thread.start()

    def drain(self) -> None:
        """Refuse new inference requests; health stays up so in-flight work
        can finish."""
        self._draining = True

    def close(self) -> None:
        """Graceful stop (callers should have drained first)."""
        self._server.shutdown()
        self._server.server_close()

    def abort(self) -> None:
        """Kill: in-flight requests lose their connection without a reply."""
        self._killed.set()
        self._server.shutdown()
        self._server.server_close()

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    @property
    def in_flight(self) -> int:
        with self._in_flight_lock:
            return self._in_flight

    # -- request handling

    def _make_handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):  # quiet
                pass

            def do_GET(self):
                if self.path == "/healthz":
                    if stub.fail_health:
                        self._reply(503, {"status": "unhealthy"})
                    else:
                        self._reply(200, {"status": "ok", "model_id": stub.model_id,
                                          "version": stub.version})
                else:
                    self._reply(404, {"error": "not found"})

            def do_POST(self):
                if self.path != "/v1/infer_batch":
                    self._reply(404, {"error": "not found"})
                    return
                if stub._draining:
                    self._reply(503, {"error": "draining"})
                    return
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length)) if length else {}
                with stub._in_flight_lock:
                    stub._in_flight += 1
                try:
                    started = time.monotonic()
                    stub._sleep_with_kill_check()
                    if stub.fail_rate and random.random() < stub.fail_rate:
                        self._reply(500, {"error": "injected failure"})
                        return
                    items = [{
                        "job_id": item["job_id"],
                        "text": stub._echo_text(item.get("prompt", "")),
                        "model_version": stub.version,
                        "compute_ms": int((time.monotonic() - started) * 1000),
                    } for item in body.get("items", [])]
                    self._reply(200, {"batch_id": body.get("batch_id", ""), "items": items})
                finally:
                    with stub._in_flight_lock:
                        stub._in_flight -= 1

            def _reply(self, status: int, doc: dict):
                if stub._killed.is_set():
                    # Simulate a killed container: drop the connection.
                    self.close_connection = True
                    raise ConnectionAbortedError("replica killed")
                raw = json.dumps(doc).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        return Handler

    def _echo_text(self, prompt: str) -> str:
        tag = f"{self.model_id}@{self.version}"
        if self.image_digest:
            tag += f"|{self.image_digest}"
        return f"ECHO[{tag}]: {prompt}"

    def _sleep_with_kill_check(self) -> None:
        remaining = self.delay_ms / 1000.0
        while remaining > 0:
            step = min(remaining, 0.01)
            time.sleep(step)
            remaining -= step
            if self._killed.is_set():
                raise ConnectionAbortedError("replica killed")


def main() -> None:
    """Container entrypoint: serve from real environment variables."""
    server = StubModelServer(
        model_id=os.environ.get("MODEL_ID", "stub"),
        version=os.environ.get("MODEL_VERSION", "0"),
        env=dict(os.environ),
        host=os.environ.get("BIND_HOST", "0.0.0.0"),
        port=int(os.environ.get("PORT", "8000")),
    )
    server.start()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.close()


if __name__ == "__main__":
    main()
