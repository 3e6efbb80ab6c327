"""Versioned model registry, the single source of truth for deployable models.

State is event-sourced: every mutation appends one JSON line to an
append-only journal (``{seq, ts_ms, event, payload}``), and replaying the
journal reconstructs the in-memory registry field for field. A full-state
snapshot file can be written at any point; loading then replays only the
journal tail past the snapshot's sequence number.

Records are immutable values once returned to callers. A single lock
serializes writers; readers always see consistent snapshots.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from .errors import (
    CorruptJournal,
    DuplicateModelVersion,
    IllegalTransition,
    InvalidSource,
    PreconditionFailed,
    UnknownModel,
)


def now_ms() -> int:
    """Current UTC time in epoch milliseconds (the timestamp unit used
    throughout the hub)."""
    return time.time_ns() // 1_000_000


# --- model sources ----------------------------------------------------------

@dataclass(frozen=True)
class RemoteHub:
    """A model pulled from a remote hub by repository id."""

    repo_id: str


@dataclass(frozen=True)
class LocalPath:
    """A model imported from a local directory."""

    path: str


ModelSource = Union[RemoteHub, LocalPath]


def source_key(source: ModelSource) -> str:
    """Canonical string form of a source, used for id derivation and
    journal serialization."""
    if isinstance(source, RemoteHub):
        return f"hub:{source.repo_id}"
    return f"path:{source.path}"


def _source_to_dict(source: ModelSource) -> dict:
    if isinstance(source, RemoteHub):
        return {"kind": "hub", "repo_id": source.repo_id}
    return {"kind": "path", "path": source.path}


def _source_from_dict(d: dict) -> ModelSource:
    if d.get("kind") == "hub":
        return RemoteHub(repo_id=d["repo_id"])
    if d.get("kind") == "path":
        return LocalPath(path=d["path"])
    raise ValueError(f"unknown source kind: {d.get('kind')!r}")


# --- status state machine ---------------------------------------------------

class Status(str, Enum):
    REGISTERED = "Registered"
    ACQUIRING = "Acquiring"
    CONTAINERIZED = "Containerized"
    RUNNING = "Running"
    STOPPED = "Stopped"
    FAILED = "Failed"


# Legal edges besides (any -> FAILED).
_LEGAL_EDGES = {
    (Status.REGISTERED, Status.ACQUIRING),
    (Status.ACQUIRING, Status.CONTAINERIZED),
    (Status.CONTAINERIZED, Status.RUNNING),
    (Status.RUNNING, Status.STOPPED),
    (Status.STOPPED, Status.RUNNING),
    (Status.FAILED, Status.ACQUIRING),  # retry path
}


def is_legal_transition(from_status: Status, to_status: Status) -> bool:
    if to_status is Status.FAILED:
        return True
    return (from_status, to_status) in _LEGAL_EDGES


# --- records ----------------------------------------------------------------

@dataclass(frozen=True)
class ProvenanceMeta:
    """Where a model's weights came from and who touched them.

    ``access_log_ids`` is append-only over a record's lifetime; each id
    references an entry in the hub's audit chain.
    """

    acquired_from: str = ""
    acquired_at: int = 0  # epoch ms; 0 until first acquisition
    acquired_by: str = ""
    license_note: str = ""
    access_log_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class ModelRecord:
    """One registry entry: a (model, version) pair with provenance and
    lifecycle status.

    ``weights_digest`` (64-hex SHA-256 of the weight bundle) and
    ``image_ref`` are empty until the record reaches Containerized.
    ``failure_reason`` is non-empty exactly when status is Failed.
    """

    model_id: str
    display_name: str
    source: ModelSource
    version: str
    weights_digest: str
    image_ref: str
    status: Status
    failure_reason: str
    provenance: ProvenanceMeta
    created_at: int
    updated_at: int

    def key(self) -> tuple[str, str]:
        return (self.model_id, self.version)


def _record_to_dict(rec: ModelRecord) -> dict:
    return {
        "model_id": rec.model_id,
        "display_name": rec.display_name,
        "source": _source_to_dict(rec.source),
        "version": rec.version,
        "weights_digest": rec.weights_digest,
        "image_ref": rec.image_ref,
        "status": rec.status.value,
        "failure_reason": rec.failure_reason,
        "provenance": {
            "acquired_from": rec.provenance.acquired_from,
            "acquired_at": rec.provenance.acquired_at,
            "acquired_by": rec.provenance.acquired_by,
            "license_note": rec.provenance.license_note,
            "access_log_ids": list(rec.provenance.access_log_ids),
        },
        "created_at": rec.created_at,
        "updated_at": rec.updated_at,
    }


def _record_from_dict(d: dict) -> ModelRecord:
    prov = d["provenance"]
    return ModelRecord(
        model_id=d["model_id"],
        display_name=d["display_name"],
        source=_source_from_dict(d["source"]),
        version=d["version"],
        weights_digest=d["weights_digest"],
        image_ref=d["image_ref"],
        status=Status(d["status"]),
        failure_reason=d["failure_reason"],
        provenance=ProvenanceMeta(
            acquired_from=prov["acquired_from"],
            acquired_at=prov["acquired_at"],
            acquired_by=prov["acquired_by"],
            license_note=prov["license_note"],
            access_log_ids=tuple(prov["access_log_ids"]),
        ),
        created_at=d["created_at"],
        updated_at=d["updated_at"],
    )


_SLUG_RE = re.compile(r"[^a-z0-9]+")


def derive_model_id(display_name: str, source: ModelSource) -> str:
    """Deterministic id: slugified display name plus an 8-hex digest of the
    source string, so re-registration of the same model is detectable."""
    slug = _SLUG_RE.sub("-", display_name.lower()).strip("-") or "model"
    digest = hashlib.sha256(source_key(source).encode("utf-8")).hexdigest()[:8]
    return f"{slug}-{digest}"


# Table-1 style seed entries: inert registry fixtures, never downloaded.
SEED_MODELS: tuple[tuple[str, str, str], ...] = (
    ("Google-MedGemma3-4B", "google/medgemma-4b-it", "main"),
    ("Qwen2-VL-7B-Instruct", "Qwen/Qwen2-VL-7B-Instruct", "main"),
    ("Qwen2.5-VL-7B-Instruct", "Qwen/Qwen2.5-VL-7B-Instruct", "main"),
    ("LLaVA-1.5-7B", "llava-hf/llava-1.5-7b-hf", "main"),
    ("LLaVA-1.5-13B", "llava-hf/llava-1.5-13b-hf", "main"),
)


# --- the registry -----------------------------------------------------------

class Registry:
    """In-memory registry backed by an optional append-only journal.

    With ``journal_path`` set, every accepted mutation is appended as one
    JSON line before the call returns. ``Registry.open`` replays an
    existing journal (and snapshot, if present) back into memory.
    """

    def __init__(self, journal_path: Optional[Path] = None,
                 snapshot_path: Optional[Path] = None):
        self._records: dict[tuple[str, str], ModelRecord] = {}
        self._seq = 0
        self._lock = threading.RLock()
        self._journal_path = Path(journal_path) if journal_path else None
        self._snapshot_path = Path(snapshot_path) if snapshot_path else None
        if self._journal_path:
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)

    # -- construction from persisted state

    @classmethod
    def open(cls, journal_path: Path, snapshot_path: Optional[Path] = None) -> "Registry":
        """Open a registry at ``journal_path``, replaying any existing
        snapshot and journal tail. Missing files mean an empty registry."""
        reg = cls(journal_path=journal_path, snapshot_path=snapshot_path)
        snap_seq = -1
        if snapshot_path and Path(snapshot_path).exists():
            snap_seq = reg._load_snapshot(Path(snapshot_path))
        if Path(journal_path).exists():
            data = Path(journal_path).read_bytes()
            reg._replay(data, skip_through_seq=snap_seq)
            if reg._seq <= snap_seq:
                # Snapshot claims coverage past the journal's end: distrust
                # it, the journal is the source of truth.
                reg._records = {}
                reg._seq = 0
                reg._replay(data, skip_through_seq=-1)
        return reg

    @classmethod
    def replay(cls, journal: bytes) -> "Registry":
        """Reconstruct a registry purely from journal bytes (no persistence
        attached). Raises ``CorruptJournal`` at the byte offset of the first
        malformed entry; nothing partial is exposed."""
        reg = cls()
        reg._replay(journal, skip_through_seq=-1)
        return reg

    def _load_snapshot(self, path: Path) -> int:
        # The journal is the source of truth; an unreadable snapshot is
        # ignored and the full journal is replayed instead.
        try:
            doc = json.loads(path.read_text("utf-8"))
            records = {(_d["model_id"], _d["version"]): _record_from_dict(_d)
                       for _d in doc["records"]}
        except (ValueError, KeyError, TypeError):
            return -1
        self._records = records
        self._seq = doc["as_of_seq"] + 1
        return doc["as_of_seq"]

    def save_snapshot(self) -> None:
        """Write a full-state snapshot next to the journal (atomic rename)."""
        if not self._snapshot_path:
            raise PreconditionFailed("registry has no snapshot path configured")
        with self._lock:
            doc = {
                "as_of_seq": self._seq - 1,
                "records": [_record_to_dict(r) for r in self._list_ordered()],
            }
        tmp = self._snapshot_path.with_suffix(".tmp")
        tmp.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(doc), "utf-8")
        os.replace(tmp, self._snapshot_path)

    # -- journal plumbing

    def _append(self, event: str, payload: dict, ts_ms: Optional[int] = None) -> int:
        ts = now_ms() if ts_ms is None else ts_ms
        entry = {"seq": self._seq, "ts_ms": ts, "event": event, "payload": payload}
        if self._journal_path:
            with self._journal_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        self._seq += 1
        return ts

    def _replay(self, data: bytes, skip_through_seq: int) -> None:
        offset = 0
        expected_seq = 0  # the journal always starts at seq 0
        while offset < len(data):
            nl = data.find(b"\n", offset)
            if nl < 0:
                raise CorruptJournal(offset, "truncated entry (no trailing newline)")
            line = data[offset:nl]
            try:
                entry = json.loads(line.decode("utf-8"))
                seq = entry["seq"]
                ts = entry["ts_ms"]
                event = entry["event"]
                payload = entry["payload"]
                if not isinstance(seq, int) or not isinstance(ts, int):
                    raise ValueError("seq/ts_ms must be integers")
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptJournal(offset, str(exc)) from exc
            if seq != expected_seq:
                raise CorruptJournal(offset, f"expected seq {expected_seq}, found {seq}")
            if seq > skip_through_seq:
                try:
                    self._apply(event, payload, ts)
                except (ValueError, KeyError, TypeError) as exc:
                    raise CorruptJournal(offset, str(exc)) from exc
            expected_seq += 1
            offset = nl + 1
        self._seq = expected_seq

    def _apply(self, event: str, payload: dict, ts_ms: int) -> ModelRecord:
        if event == "register":
            return self._apply_register(payload, ts_ms)
        if event == "transition":
            return self._apply_transition(payload, ts_ms)
        if event == "provenance":
            return self._apply_provenance(payload, ts_ms)
        raise ValueError(f"unknown journal event {event!r}")

    # -- event appliers (shared by live operations and replay, so replay is
    #    exactly the state the live path produced)

    def _apply_register(self, payload: dict, ts_ms: int) -> ModelRecord:
        rec = _record_from_dict(payload)
        if rec.key() in self._records:
            raise DuplicateModelVersion(
                f"{rec.model_id} version {rec.version} already registered")
        self._records[rec.key()] = rec
        return rec

    def _apply_transition(self, payload: dict, ts_ms: int) -> ModelRecord:
        key = (payload["model_id"], payload["version"])
        rec = self._records.get(key)
        if rec is None:
            raise UnknownModel(f"{key[0]}@{key[1]}")
        to_status = Status(payload["to"])
        if Status(payload["from"]) is not rec.status or not is_legal_transition(rec.status, to_status):
            raise IllegalTransition(rec.status.value, to_status.value)
        weights_digest = rec.weights_digest
        image_ref = rec.image_ref
        failure_reason = ""
        if to_status is Status.CONTAINERIZED:
            weights_digest = payload.get("weights_digest", "")
            image_ref = payload.get("image_ref", "")
            if not re.fullmatch(r"[0-9a-f]{64}", weights_digest or ""):
                raise ValueError("transition to Containerized requires a 64-hex weights_digest")
            if not image_ref:
                raise ValueError("transition to Containerized requires an image_ref")
        elif to_status is Status.FAILED:
            failure_reason = payload.get("reason", "") or "unspecified"
        elif rec.status is Status.FAILED and to_status is Status.ACQUIRING:
            # Retry resets the containerization outputs; they are re-derived
            # by the next acquire/containerize pass.
            weights_digest = ""
            image_ref = ""
        updated = replace(
            rec,
            status=to_status,
            failure_reason=failure_reason,
            weights_digest=weights_digest,
            image_ref=image_ref,
            updated_at=ts_ms,
        )
        self._records[key] = updated
        return updated

    def _apply_provenance(self, payload: dict, ts_ms: int) -> ModelRecord:
        key = (payload["model_id"], payload["version"])
        rec = self._records.get(key)
        if rec is None:
            raise UnknownModel(f"{key[0]}@{key[1]}")
        prov = rec.provenance
        new_prov = ProvenanceMeta(
            acquired_from=payload.get("acquired_from", prov.acquired_from),
            acquired_at=payload.get("acquired_at", prov.acquired_at),
            acquired_by=payload.get("acquired_by", prov.acquired_by),
            license_note=payload.get("license_note", prov.license_note),
            access_log_ids=prov.access_log_ids + tuple(payload.get("add_access_log_ids", ())),
        )
        updated = replace(rec, provenance=new_prov, updated_at=ts_ms)
        self._records[key] = updated
        return updated

    # -- operations

    def register_model(self, source: ModelSource, display_name: str,
                       version: str) -> ModelRecord:
        """Register a model in Registered state; the id is derived
        deterministically from the display name and source."""
        if isinstance(source, RemoteHub):
            if not source.repo_id.strip():
                raise InvalidSource("empty hub repo id")
        elif isinstance(source, LocalPath):
            if not source.path.strip():
                raise InvalidSource("empty local path")
        else:
            raise InvalidSource(f"unsupported source {source!r}")
        if not version:
            raise PreconditionFailed("version must be non-empty")
        with self._lock:
            ts = now_ms()
            rec = ModelRecord(
                model_id=derive_model_id(display_name, source),
                display_name=display_name,
                source=source,
                version=version,
                weights_digest="",
                image_ref="",
                status=Status.REGISTERED,
                failure_reason="",
                provenance=ProvenanceMeta(),
                created_at=ts,
                updated_at=ts,
            )
            if rec.key() in self._records:
                raise DuplicateModelVersion(
                    f"{rec.model_id} version {version} already registered")
            payload = _record_to_dict(rec)
            self._append("register", payload, ts_ms=ts)
            self._records[rec.key()] = rec
            return rec

    def transition_status(self, model_id: str, version: str, new_status: Status,
                          *, reason: str = "", weights_digest: str = "",
                          image_ref: str = "") -> ModelRecord:
        """Apply a status transition if it is an edge of the lifecycle state
        machine; the accepted transition is journaled."""
        with self._lock:
            rec = self.get(model_id, version)
            if not is_legal_transition(rec.status, new_status):
                raise IllegalTransition(rec.status.value, new_status.value)
            if new_status is Status.CONTAINERIZED:
                if not re.fullmatch(r"[0-9a-f]{64}", weights_digest or ""):
                    raise PreconditionFailed(
                        "Containerized requires a 64-hex weights_digest")
                if not image_ref:
                    raise PreconditionFailed("Containerized requires an image_ref")
            payload = {
                "model_id": model_id,
                "version": version,
                "from": rec.status.value,
                "to": new_status.value,
            }
            if reason:
                payload["reason"] = reason
            if new_status is Status.CONTAINERIZED:
                payload["weights_digest"] = weights_digest
                payload["image_ref"] = image_ref
            ts = now_ms()
            # Validate fully (digest format etc.) before journaling.
            updated = self._apply_transition(payload, ts)
            try:
                self._append("transition", payload, ts_ms=ts)
            except Exception:
                self._records[rec.key()] = rec
                raise
            return updated

    def update_provenance(self, model_id: str, version: str, *,
                          acquired_from: Optional[str] = None,
                          acquired_at: Optional[int] = None,
                          acquired_by: Optional[str] = None,
                          license_note: Optional[str] = None,
                          add_access_log_ids: tuple[str, ...] = ()) -> ModelRecord:
        """Set provenance fields and append audit-entry ids (append-only)."""
        with self._lock:
            rec = self.get(model_id, version)
            payload: dict = {"model_id": model_id, "version": version}
            if acquired_from is not None:
                payload["acquired_from"] = acquired_from
            if acquired_at is not None:
                payload["acquired_at"] = acquired_at
            if acquired_by is not None:
                payload["acquired_by"] = acquired_by
            if license_note is not None:
                payload["license_note"] = license_note
            if add_access_log_ids:
                payload["add_access_log_ids"] = list(add_access_log_ids)
            ts = now_ms()
            updated = self._apply_provenance(payload, ts)
            try:
                self._append("provenance", payload, ts_ms=ts)
            except Exception:
                self._records[rec.key()] = rec
                raise
            return updated

    # -- queries

    def get(self, model_id: str, version: str) -> ModelRecord:
        rec = self._records.get((model_id, version))
        if rec is None:
            raise UnknownModel(f"{model_id}@{version}")
        return rec

    def find(self, model_id: str, version: str) -> Optional[ModelRecord]:
        return self._records.get((model_id, version))

    def versions_of(self, model_id: str) -> list[ModelRecord]:
        with self._lock:
            return [r for r in self._list_ordered() if r.model_id == model_id]

    def list_models(self, status: Optional[Status] = None) -> list[ModelRecord]:
        """Snapshot of all records ordered by creation time; optional exact
        status filter."""
        with self._lock:
            records = self._list_ordered()
        if status is not None:
            records = [r for r in records if r.status is status]
        return records

    def _list_ordered(self) -> list[ModelRecord]:
        return sorted(self._records.values(),
                      key=lambda r: (r.created_at, r.model_id, r.version))

    def __len__(self) -> int:
        return len(self._records)

    def state_fingerprint(self) -> dict:
        """All records plus the journal sequence counter, for
        field-for-field equality checks in tests."""
        with self._lock:
            return {
                "seq": self._seq,
                "records": {f"{k[0]}@{k[1]}": _record_to_dict(r)
                            for k, r in self._records.items()},
            }


def load_registry(journal: bytes) -> Registry:
    """Rebuild a registry from raw journal bytes (event-sourced replay)."""
    return Registry.replay(journal)


def register_seed_models(registry: Registry) -> list[ModelRecord]:
    """Register the five stock VLM entries as inert fixtures (no download)."""
    out = []
    for display_name, repo_id, version in SEED_MODELS:
        out.append(registry.register_model(RemoteHub(repo_id), display_name, version))
    return out
