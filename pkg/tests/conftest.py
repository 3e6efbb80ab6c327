"""Shared fixtures: a desk-scale hub stack on the mock runtime, fixture
weight directories, and tiny raster images."""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import pytest
from PIL import Image

from modelhub.evaluation import AuditKind
from modelhub.gateway import BatchPolicy, ScalePolicy
from modelhub.registry import LocalPath, Status
from modelhub.service import ModelHub, ServiceConfig


def make_png(width: int = 1, height: int = 1, color=(128, 128, 128)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="session")
def png_1x1() -> bytes:
    return make_png()


def write_weight_fixture(root: Path, files: dict[str, bytes],
                         with_manifest: bool = True) -> Path:
    """Lay out a local weight-source directory, optionally with a MANIFEST
    pinning the expected digests."""
    root.mkdir(parents=True, exist_ok=True)
    for rel, data in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    if with_manifest:
        doc = {"files": [{
            "path": rel,
            "size_bytes": len(data),
            "sha256_hex": hashlib.sha256(data).hexdigest(),
        } for rel, data in sorted(files.items())]}
        (root / "MANIFEST.json").write_text(json.dumps(doc), "utf-8")
    return root


DEFAULT_FIXTURE_FILES = {
    "weights.bin": b"\x00\x01\x02\x03" * 256,
    "config.json": b'{"layers": 2}',
}


def fast_config(tmp_path: Path, **overrides) -> ServiceConfig:
    kwargs = dict(
        listen_addr="127.0.0.1:0",
        data_dir=str(tmp_path / "data"),
        runtime="mock",
        allow_outbound=False,
        startup_timeout_s=5.0,
        health_interval_s=30.0,  # background prober stays quiet in tests
        drain_timeout_s=5.0,
        sample_interval_s=30.0,
        autoscale_interval_s=30.0,
        batch=BatchPolicy(max_batch=8, window_ms=50),
        scale=ScalePolicy(),
    )
    kwargs.update(overrides)
    return ServiceConfig(**kwargs)


@pytest.fixture
def hub(tmp_path) -> ModelHub:
    h = ModelHub(fast_config(tmp_path))
    yield h
    h.close()


def deploy_stub_model(hub: ModelHub, tmp_path: Path, name: str = "Stub Echo",
                      version: str = "1", start: bool = True,
                      files: dict[str, bytes] | None = None,
                      env: dict[str, str] | None = None):
    """Register a local-path model, acquire, containerize (optionally with
    baked-in env knobs), and start one replica.

    Versions of one model share the source directory (the id derives from
    it); the content is rewritten per version so bundle digests differ.
    """
    if files is None:
        files = dict(DEFAULT_FIXTURE_FILES, **{"VERSION": version.encode()})
    source_dir = write_weight_fixture(
        tmp_path / f"src-{name.replace(' ', '-').lower()}", files)
    record = hub.registry.register_model(LocalPath(str(source_dir)), name, version)
    hub.audit.append_json(AuditKind.REGISTRATION,
                          {"model_id": record.model_id, "version": version})
    record = hub.registry.transition_status(record.model_id, version, Status.ACQUIRING)
    bundle = hub.acquirer.acquire(record)
    hub.manager.containerize(bundle, env=env)
    if start:
        hub.manager.start_replica(record.model_id, version)
    return hub.registry.get(record.model_id, version)
