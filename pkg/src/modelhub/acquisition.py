"""Controlled external channel: the only component allowed outbound network
access. Downloads or imports weight bundles, verifies every file digest,
and seals bundles into the local blob store.

Blob store layout, per (model, version):

    {blob_root}/blobs/{model_id}/{version}/
        <weight files...>
        MANIFEST.json     # [{path, size_bytes, sha256_hex}, ...]
        SEALED            # marker, written last
        .partial/         # in-flight downloads, renamed into place only
                          # after per-file digest verification

Remote protocol: plain HTTP GET against a hub exposing
``/{repo_id}/manifest/{version}`` (JSON file list) and
``/{repo_id}/resolve/{version}/{path}`` (raw bytes, Range supported).
"""

from __future__ import annotations

import hashlib
import json
import shutil
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import requests
from filelock import FileLock

from .errors import (
    DigestMismatch,
    NetworkUnreachable,
    PreconditionFailed,
    SourceMissing,
)
from .evaluation import AuditKind, AuditLog
from .registry import LocalPath, ModelRecord, Registry, Status, now_ms

_CHUNK = 64 * 1024
_CONTROL_FILES = {"MANIFEST.json", "SEALED"}


@dataclass(frozen=True)
class ManifestEntry:
    path: str          # relative, forward slashes
    size_bytes: int
    sha256_hex: str


@dataclass(frozen=True)
class WeightBundle:
    """An opaque weight file set in the blob store. ``sealed`` means every
    manifest digest has been verified against the on-disk files."""

    model_id: str
    version: str
    root_dir: Path
    manifest: tuple[ManifestEntry, ...]
    total_bytes: int
    sealed: bool

    def digest(self) -> str:
        """64-hex digest of the whole bundle: SHA-256 over the canonical
        manifest (which itself pins every file's content hash)."""
        return hashlib.sha256(manifest_bytes(self.manifest)).hexdigest()


class ProgressState(str, Enum):
    PENDING = "Pending"
    FETCHING = "Fetching"
    VERIFYING = "Verifying"
    SEALED = "Sealed"
    FAILED = "Failed"


@dataclass
class DownloadProgress:
    """Observable acquisition progress. ``bytes_done`` counts bytes believed
    valid toward ``bytes_total`` (never above it): when a kept partial file
    turns out corrupt and is refetched, its discarded bytes are subtracted
    before the retry recounts them."""

    bytes_done: int = 0
    bytes_total: int = 0
    files_done: int = 0
    state: ProgressState = ProgressState.PENDING
    reason: str = ""

    def snapshot(self) -> "DownloadProgress":
        return DownloadProgress(self.bytes_done, self.bytes_total,
                                self.files_done, self.state, self.reason)


def manifest_bytes(manifest: tuple[ManifestEntry, ...]) -> bytes:
    doc = {"files": [{"path": e.path, "size_bytes": e.size_bytes,
                      "sha256_hex": e.sha256_hex} for e in manifest]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _manifest_from_doc(doc: dict) -> tuple[ManifestEntry, ...]:
    return tuple(ManifestEntry(path=f["path"], size_bytes=int(f["size_bytes"]),
                               sha256_hex=f["sha256_hex"])
                 for f in doc["files"])


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        while True:
            chunk = fh.read(_CHUNK)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


class BlobStore:
    """Filesystem layout helper for the weight blob store."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def bundle_dir(self, model_id: str, version: str) -> Path:
        return self.root / "blobs" / model_id / version

    def partial_dir(self, model_id: str, version: str) -> Path:
        return self.bundle_dir(model_id, version) / ".partial"

    def lock_path(self, model_id: str, version: str) -> Path:
        locks = self.root / "locks"
        locks.mkdir(parents=True, exist_ok=True)
        return locks / f"{model_id}@{version}.lock"

    def load_bundle(self, model_id: str, version: str) -> Optional[WeightBundle]:
        """Read a bundle back from disk, or None if no manifest exists."""
        bdir = self.bundle_dir(model_id, version)
        mpath = bdir / "MANIFEST.json"
        if not mpath.exists():
            return None
        manifest = _manifest_from_doc(json.loads(mpath.read_text("utf-8")))
        return WeightBundle(
            model_id=model_id,
            version=version,
            root_dir=bdir,
            manifest=manifest,
            total_bytes=sum(e.size_bytes for e in manifest),
            sealed=(bdir / "SEALED").exists(),
        )


def verify_bundle(bundle: WeightBundle) -> bool:
    """True iff every manifest entry's digest matches the file on disk.
    Pure observation: a missing or altered file simply yields False."""
    for entry in bundle.manifest:
        path = bundle.root_dir / entry.path
        if not path.is_file() or path.stat().st_size != entry.size_bytes:
            return False
        if _sha256_file(path) != entry.sha256_hex:
            return False
    return True


@dataclass
class AcquireConfig:
    blob_root: Path
    allow_outbound: bool = False
    hub_base_url: str = ""
    operator_id: str = "operator"
    request_timeout_s: float = 10.0


class Acquirer:
    """Performs acquisitions into a blob store; one acquisition per
    (model, version) at a time via an advisory lock file."""

    def __init__(self, config: AcquireConfig, registry: Optional[Registry] = None,
                 audit: Optional[AuditLog] = None):
        self.config = config
        self.store = BlobStore(Path(config.blob_root))
        self._registry = registry
        self._audit = audit
        self._progress: dict[tuple[str, str], DownloadProgress] = {}
        self._plock = threading.Lock()

    # -- progress observation

    def progress(self, model_id: str, version: str) -> DownloadProgress:
        with self._plock:
            prog = self._progress.get((model_id, version))
            return prog.snapshot() if prog else DownloadProgress()

    def _track(self, model_id: str, version: str) -> DownloadProgress:
        with self._plock:
            prog = DownloadProgress()
            self._progress[(model_id, version)] = prog
            return prog

    # -- operations

    def acquire(self, record: ModelRecord) -> WeightBundle:
        """Fetch or import the record's weight bundle and seal it.

        The registry stays in Acquiring; containerization (and the status
        transition it implies) belongs to the runtime."""
        if record.status is not Status.ACQUIRING:
            raise PreconditionFailed(
                f"record must be Acquiring, is {record.status.value}")
        prog = self._track(record.model_id, record.version)
        lock = FileLock(str(self.store.lock_path(record.model_id, record.version)))
        with lock:
            try:
                if isinstance(record.source, LocalPath):
                    bundle = self._import_local(record, prog)
                else:
                    bundle = self._fetch_remote(record, prog, resume=False)
            except Exception as exc:
                prog.state = ProgressState.FAILED
                prog.reason = str(exc)
                raise
        self._record_provenance(record, bundle)
        return bundle

    def resume(self, bundle_in_progress: DownloadProgress,
               record: ModelRecord) -> WeightBundle:
        """Continue a partial acquisition: only missing or size-mismatched
        files are re-fetched; the sealed result is byte-identical to a
        fresh acquire."""
        prog = self._track(record.model_id, record.version)
        prog.bytes_done = bundle_in_progress.bytes_done
        lock = FileLock(str(self.store.lock_path(record.model_id, record.version)))
        with lock:
            try:
                if isinstance(record.source, LocalPath):
                    bundle = self._import_local(record, prog)
                else:
                    bundle = self._fetch_remote(record, prog, resume=True)
            except Exception as exc:
                prog.state = ProgressState.FAILED
                prog.reason = str(exc)
                raise
        self._record_provenance(record, bundle)
        return bundle

    # -- local import

    def _import_local(self, record: ModelRecord, prog: DownloadProgress) -> WeightBundle:
        src = Path(record.source.path)
        if not src.is_dir():
            raise SourceMissing(f"local source {src} does not exist")
        expected = None
        src_manifest = src / "MANIFEST.json"
        if src_manifest.exists():
            expected = {e.path: e for e in
                        _manifest_from_doc(json.loads(src_manifest.read_text("utf-8")))}
        files = sorted(p for p in src.rglob("*")
                       if p.is_file() and p.name not in _CONTROL_FILES)
        if expected is not None:
            rels = [e for e in expected]
        else:
            rels = [p.relative_to(src).as_posix() for p in files]
        if not rels:
            raise SourceMissing(f"local source {src} contains no files")

        bdir = self.store.bundle_dir(record.model_id, record.version)
        partial = self.store.partial_dir(record.model_id, record.version)
        partial.mkdir(parents=True, exist_ok=True)
        prog.state = ProgressState.FETCHING
        prog.bytes_total = sum((src / r).stat().st_size for r in rels if (src / r).exists())

        entries: list[ManifestEntry] = []
        for rel in rels:
            src_file = src / rel
            if not src_file.is_file():
                raise SourceMissing(f"{rel} listed in manifest but missing from {src}")
            dst = partial / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            h = hashlib.sha256()
            with src_file.open("rb") as rf, dst.open("wb") as wf:
                while True:
                    chunk = rf.read(_CHUNK)
                    if not chunk:
                        break
                    wf.write(chunk)
                    h.update(chunk)
                    prog.bytes_done += len(chunk)
            digest = h.hexdigest()
            if expected is not None:
                want = expected[rel]
                if digest != want.sha256_hex:
                    raise DigestMismatch(rel, f"expected {want.sha256_hex}, got {digest}")
            entries.append(ManifestEntry(path=rel, size_bytes=dst.stat().st_size,
                                         sha256_hex=digest))
            prog.files_done += 1
        return self._seal(record, bdir, partial, tuple(entries), prog)

    # -- remote fetch

    def _hub_get(self, url: str, headers: Optional[dict] = None) -> requests.Response:
        try:
            resp = requests.get(url, headers=headers or {}, stream=True,
                                timeout=self.config.request_timeout_s)
        except requests.RequestException as exc:
            raise NetworkUnreachable(f"{url}: {exc}") from exc
        if resp.status_code == 404:
            raise SourceMissing(url)
        if resp.status_code >= 400:
            raise NetworkUnreachable(f"{url}: status {resp.status_code}")
        return resp

    def _fetch_remote(self, record: ModelRecord, prog: DownloadProgress,
                      resume: bool) -> WeightBundle:
        if not self.config.allow_outbound:
            raise NetworkUnreachable("outbound access disabled by policy (allow_outbound=false)")
        if not self.config.hub_base_url:
            raise NetworkUnreachable("no hub_base_url configured")
        repo_id = record.source.repo_id
        base = self.config.hub_base_url.rstrip("/")
        resp = self._hub_get(f"{base}/{repo_id}/manifest/{record.version}")
        manifest = _manifest_from_doc(resp.json())
        if not manifest:
            raise SourceMissing(f"{repo_id}@{record.version} has an empty manifest")

        bdir = self.store.bundle_dir(record.model_id, record.version)
        partial = self.store.partial_dir(record.model_id, record.version)
        partial.mkdir(parents=True, exist_ok=True)
        prog.state = ProgressState.FETCHING
        prog.bytes_total = sum(e.size_bytes for e in manifest)
        prog.bytes_done = 0

        for entry in manifest:
            final = bdir / entry.path
            if resume and final.is_file() and final.stat().st_size == entry.size_bytes:
                # Kept as-is; re-verified at seal time.
                prog.bytes_done += entry.size_bytes
                prog.files_done += 1
                continue
            self._fetch_one(base, repo_id, record.version, entry, partial, prog,
                            resume=resume)
            prog.files_done += 1
        return self._seal(record, bdir, partial, manifest, prog)

    def _fetch_one(self, base: str, repo_id: str, version: str,
                   entry: ManifestEntry, partial: Path, prog: DownloadProgress,
                   resume: bool) -> None:
        url = f"{base}/{repo_id}/resolve/{version}/{entry.path}"
        dst = partial / entry.path
        dst.parent.mkdir(parents=True, exist_ok=True)

        offset = 0
        if resume and dst.is_file() and 0 < dst.stat().st_size < entry.size_bytes:
            offset = dst.stat().st_size
        elif dst.exists():
            dst.unlink()

        digest = self._download(url, dst, offset, prog)
        if digest != entry.sha256_hex and offset > 0:
            # The kept prefix was wrong; discard it and fetch the whole file.
            dst.unlink()
            prog.bytes_done -= entry.size_bytes - offset
            digest = self._download(url, dst, 0, prog)
        if digest != entry.sha256_hex:
            raise DigestMismatch(entry.path,
                                 f"expected {entry.sha256_hex}, got {digest}")

    def _download(self, url: str, dst: Path, offset: int,
                  prog: DownloadProgress) -> str:
        headers = {"Range": f"bytes={offset}-"} if offset else None
        resp = self._hub_get(url, headers)
        mode = "ab" if offset and resp.status_code == 206 else "wb"
        with dst.open(mode) as fh:
            for chunk in resp.iter_content(_CHUNK):
                fh.write(chunk)
                prog.bytes_done += len(chunk)
        return _sha256_file(dst)

    # -- sealing

    def _seal(self, record: ModelRecord, bdir: Path, partial: Path,
              manifest: tuple[ManifestEntry, ...],
              prog: DownloadProgress) -> WeightBundle:
        prog.state = ProgressState.VERIFYING
        for entry in manifest:
            staged = partial / entry.path
            final = bdir / entry.path
            if staged.is_file():
                final.parent.mkdir(parents=True, exist_ok=True)
                staged.replace(final)
            if not final.is_file():
                raise SourceMissing(f"{entry.path} missing at seal time")
            if (final.stat().st_size != entry.size_bytes
                    or _sha256_file(final) != entry.sha256_hex):
                raise DigestMismatch(entry.path, "verification failed at seal time")
        shutil.rmtree(partial, ignore_errors=True)
        (bdir / "MANIFEST.json").write_bytes(manifest_bytes(manifest))
        (bdir / "SEALED").write_text("", "utf-8")  # marker, written last
        prog.state = ProgressState.SEALED
        return WeightBundle(
            model_id=record.model_id,
            version=record.version,
            root_dir=bdir,
            manifest=manifest,
            total_bytes=sum(e.size_bytes for e in manifest),
            sealed=True,
        )

    def _record_provenance(self, record: ModelRecord, bundle: WeightBundle) -> None:
        acquired_from = (record.source.path if isinstance(record.source, LocalPath)
                         else f"{self.config.hub_base_url.rstrip('/')}/{record.source.repo_id}")
        audit_ids: tuple[str, ...] = ()
        if self._audit is not None:
            entry = self._audit.append_json(AuditKind.ACQUISITION, {
                "model_id": record.model_id,
                "version": record.version,
                "source": acquired_from,
                "total_bytes": bundle.total_bytes,
                "files": len(bundle.manifest),
                "bundle_digest": bundle.digest(),
            })
            audit_ids = (entry.audit_id,)
        if self._registry is not None:
            self._registry.update_provenance(
                record.model_id, record.version,
                acquired_from=acquired_from,
                acquired_at=now_ms(),
                acquired_by=self.config.operator_id,
                add_access_log_ids=audit_ids,
            )
