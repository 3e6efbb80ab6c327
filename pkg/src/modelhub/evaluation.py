"""Clinician-in-the-loop evaluation plane: case ingestion, rubric scoring,
the hash-chained audit log, and reproducible aggregate exports.

Audit chain rule: each entry's hash is the SHA-256 of the UTF-8
concatenation ``prev_hash + str(seq) + str(ts_ms) + kind + payload_digest``
(no separators), where ``payload_digest`` is the SHA-256 hex of the entry's
canonical payload bytes and the genesis ``prev_hash`` is 64 zero hex chars.
Any retroactive edit to a persisted entry breaks recomputation at or before
that entry.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from .errors import (
    DuplicateCaseId,
    MalformedManifest,
    MissingImage,
    ScoreOutOfRange,
    StorageFailure,
    UnknownCase,
    UnknownModel,
)
from .registry import Registry, now_ms

GENESIS_HASH = "0" * 64

# The fixed five-level rubric: score -> label. The mapping is total over
# {0..4} and nothing outside it is ever accepted.
RUBRIC_LABELS: dict[int, str] = {
    0: "No answer",
    1: "Wrong answer",
    2: "Partially correct answer",
    3: "Correct answer with wrong reasoning",
    4: "Correct answer with correct reasoning",
}

DATASET_COLON = "colon"
DATASET_RENAL = "renal"


def rubric_label(score: int) -> str:
    if score not in RUBRIC_LABELS:
        raise ScoreOutOfRange(f"score must be in 0..4, got {score}")
    return RUBRIC_LABELS[score]


# --- audit chain ------------------------------------------------------------

class AuditKind(str, Enum):
    INFERENCE = "Inference"
    REGISTRATION = "Registration"
    ACQUISITION = "Acquisition"
    SWAP = "Swap"
    SCORE = "Score"
    EXPORT = "Export"


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    ts_ms: int
    kind: AuditKind
    payload_digest: str
    prev_hash: str
    entry_hash: str

    @property
    def audit_id(self) -> str:
        # The entry hash doubles as the entry's stable identifier.
        return self.entry_hash


def compute_entry_hash(prev_hash: str, seq: int, ts_ms: int, kind: str,
                       payload_digest: str) -> str:
    material = f"{prev_hash}{seq}{ts_ms}{kind}{payload_digest}"
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AuditVerification:
    ok: bool
    entries: int
    broken_at: Optional[int] = None  # seq (line index) of first bad entry

    def __str__(self) -> str:
        if self.ok:
            return f"Ok ({self.entries} entries)"
        return f"BrokenAt({self.broken_at})"


class AuditLog:
    """Append-only, hash-chained audit journal.

    Each append is flushed and fsynced before returning, so the entry is
    durable before the operation that triggered it completes. A single lock
    forces the total order the chain hash requires.
    """

    def __init__(self, path: Optional[Path] = None):
        self._path = Path(path) if path else None
        self._lock = threading.Lock()
        self._entries: list[AuditEntry] = []
        self._last_hash = GENESIS_HASH
        if self._path and self._path.exists():
            verdict = verify_audit(self._path.read_bytes())
            if not verdict.ok:
                raise StorageFailure(
                    f"existing audit log is broken at seq {verdict.broken_at}")
            self._entries = list(read_audit_entries(self._path.read_bytes()))
            if self._entries:
                self._last_hash = self._entries[-1].entry_hash
        elif self._path:
            self._path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, kind: AuditKind, payload: bytes) -> AuditEntry:
        """Append one entry; durable (flushed + fsynced) before returning."""
        with self._lock:
            seq = len(self._entries)
            ts = now_ms()
            digest = hashlib.sha256(payload).hexdigest()
            entry = AuditEntry(
                seq=seq,
                ts_ms=ts,
                kind=kind,
                payload_digest=digest,
                prev_hash=self._last_hash,
                entry_hash=compute_entry_hash(self._last_hash, seq, ts, kind.value, digest),
            )
            if self._path:
                line = json.dumps({
                    "seq": entry.seq,
                    "ts_ms": entry.ts_ms,
                    "kind": entry.kind.value,
                    "payload_digest": entry.payload_digest,
                    "prev_hash": entry.prev_hash,
                    "entry_hash": entry.entry_hash,
                }, separators=(",", ":"))
                try:
                    with self._path.open("a", encoding="utf-8") as fh:
                        fh.write(line + "\n")
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise StorageFailure(str(exc)) from exc
            self._entries.append(entry)
            self._last_hash = entry.entry_hash
            return entry

    def append_json(self, kind: AuditKind, payload: dict) -> AuditEntry:
        """Append with a canonical JSON payload (sorted keys, compact)."""
        raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return self.append(kind, raw)

    def entries(self, kind: Optional[AuditKind] = None) -> list[AuditEntry]:
        with self._lock:
            if kind is None:
                return list(self._entries)
            return [e for e in self._entries if e.kind is kind]

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def path(self) -> Optional[Path]:
        return self._path

    def verify(self) -> AuditVerification:
        if self._path and self._path.exists():
            return verify_audit(self._path.read_bytes())
        with self._lock:
            return _verify_entries(list(self._entries))


def read_audit_entries(data: bytes) -> list[AuditEntry]:
    entries = []
    for line in data.splitlines():
        d = json.loads(line.decode("utf-8"))
        entries.append(AuditEntry(
            seq=d["seq"], ts_ms=d["ts_ms"], kind=AuditKind(d["kind"]),
            payload_digest=d["payload_digest"], prev_hash=d["prev_hash"],
            entry_hash=d["entry_hash"],
        ))
    return entries


def _verify_entries(entries: list[AuditEntry]) -> AuditVerification:
    prev = GENESIS_HASH
    for i, e in enumerate(entries):
        if e.seq != i or e.prev_hash != prev:
            return AuditVerification(ok=False, entries=len(entries), broken_at=i)
        if compute_entry_hash(prev, e.seq, e.ts_ms, e.kind.value, e.payload_digest) != e.entry_hash:
            return AuditVerification(ok=False, entries=len(entries), broken_at=i)
        prev = e.entry_hash
    return AuditVerification(ok=True, entries=len(entries))


def verify_audit(log: Union[bytes, Path]) -> AuditVerification:
    """Recompute the whole chain; Ok iff every link holds, else the seq of
    the first entry that fails to parse or recompute."""
    data = log if isinstance(log, bytes) else Path(log).read_bytes()
    prev = GENESIS_HASH
    lines = data.splitlines()
    for i, line in enumerate(lines):
        try:
            d = json.loads(line.decode("utf-8"))
            seq, ts, kind = d["seq"], d["ts_ms"], d["kind"]
            payload_digest, prev_hash, entry_hash = (
                d["payload_digest"], d["prev_hash"], d["entry_hash"])
            if not isinstance(seq, int) or not isinstance(ts, int):
                raise ValueError("bad field types")
        except (ValueError, KeyError, TypeError, UnicodeDecodeError):
            return AuditVerification(ok=False, entries=len(lines), broken_at=i)
        if seq != i or prev_hash != prev:
            return AuditVerification(ok=False, entries=len(lines), broken_at=i)
        if compute_entry_hash(prev, seq, ts, str(kind), payload_digest) != entry_hash:
            return AuditVerification(ok=False, entries=len(lines), broken_at=i)
        prev = entry_hash
    return AuditVerification(ok=True, entries=len(lines))


# --- cases ------------------------------------------------------------------

@dataclass(frozen=True)
class CaseRecord:
    """A pathology QA case: an image on disk plus the question asked of it."""

    case_id: str
    dataset: str
    image_ref: str
    prompt: str
    source_note: str
    created_at: int


@dataclass(frozen=True)
class ScoreEvent:
    """One clinician rubric judgment for a (clinician, case, model) triple."""

    score_id: str
    clinician_id: str
    case_id: str
    model_id: str
    version: str
    score: int
    rubric_label: str
    comment: str
    ts_ms: int


@dataclass(frozen=True)
class ScoreDistribution:
    counts: dict[int, int]     # score -> count over *current* scores
    total: int
    percentages: dict[int, float]  # score -> percent of total (0.0 when empty)


def _case_line(case: CaseRecord) -> str:
    return json.dumps({
        "case_id": case.case_id,
        "dataset": case.dataset,
        "image_path": case.image_ref,
        "prompt": case.prompt,
        "source_note": case.source_note,
        "created_at": case.created_at,
    }, separators=(",", ":"))


class EvaluationStore:
    """Holds cases and score events; the audit chain records every score.

    Rescoring a (clinician, case, model) triple supersedes the previous
    current score but earlier events remain in the journal.
    """

    def __init__(self, audit: AuditLog, registry: Optional[Registry] = None,
                 case_store_path: Optional[Path] = None,
                 score_journal_path: Optional[Path] = None):
        self._audit = audit
        self._registry = registry
        self._case_path = Path(case_store_path) if case_store_path else None
        self._score_path = Path(score_journal_path) if score_journal_path else None
        self._lock = threading.RLock()
        self._cases: dict[str, CaseRecord] = {}
        self._events: list[ScoreEvent] = []
        self._current: dict[tuple[str, str, str], ScoreEvent] = {}
        self._load_existing()

    def _load_existing(self) -> None:
        if self._case_path and self._case_path.exists():
            for line in self._case_path.read_text("utf-8").splitlines():
                d = json.loads(line)
                case = CaseRecord(
                    case_id=d["case_id"], dataset=d["dataset"],
                    image_ref=d["image_path"], prompt=d["prompt"],
                    source_note=d.get("source_note", ""),
                    created_at=d.get("created_at", 0),
                )
                self._cases[case.case_id] = case
        if self._score_path and self._score_path.exists():
            for line in self._score_path.read_text("utf-8").splitlines():
                d = json.loads(line)
                ev = ScoreEvent(**d)
                self._events.append(ev)
                self._current[(ev.clinician_id, ev.case_id, ev.model_id)] = ev

    # -- case ingestion

    def ingest_cases(self, manifest: Union[str, bytes, Path]) -> list[CaseRecord]:
        """All-or-nothing ingestion of a line-delimited case manifest.

        Each line is a JSON object with fields case_id, dataset, image_path,
        prompt, source_note. Every image must exist on disk at ingestion
        time; any bad line aborts the whole batch.
        """
        if isinstance(manifest, Path):
            text = manifest.read_text("utf-8")
        elif isinstance(manifest, bytes):
            text = manifest.decode("utf-8")
        else:
            text = manifest
        parsed: list[CaseRecord] = []
        seen: set[str] = set()
        ts = now_ms()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                case = CaseRecord(
                    case_id=str(d["case_id"]),
                    dataset=str(d["dataset"]).lower(),
                    image_ref=str(d["image_path"]),
                    prompt=str(d["prompt"]),
                    source_note=str(d.get("source_note", "")),
                    created_at=ts,
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedManifest(lineno, str(exc)) from exc
            if not case.case_id or not case.prompt:
                raise MalformedManifest(lineno, "case_id and prompt must be non-empty")
            if case.case_id in seen or case.case_id in self._cases:
                raise DuplicateCaseId(case.case_id)
            if not Path(case.image_ref).exists():
                raise MissingImage(case.case_id, case.image_ref)
            seen.add(case.case_id)
            parsed.append(case)
        with self._lock:
            # Re-check against concurrent ingestion before committing.
            for case in parsed:
                if case.case_id in self._cases:
                    raise DuplicateCaseId(case.case_id)
            if self._case_path:
                self._case_path.parent.mkdir(parents=True, exist_ok=True)
                with self._case_path.open("a", encoding="utf-8") as fh:
                    for case in parsed:
                        fh.write(_case_line(case) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            for case in parsed:
                self._cases[case.case_id] = case
        return parsed

    def get_case(self, case_id: str) -> CaseRecord:
        case = self._cases.get(case_id)
        if case is None:
            raise UnknownCase(case_id)
        return case

    def list_cases(self, dataset: Optional[str] = None) -> list[CaseRecord]:
        with self._lock:
            cases = sorted(self._cases.values(), key=lambda c: c.case_id)
        if dataset is not None:
            cases = [c for c in cases if c.dataset == dataset.lower()]
        return cases

    # -- scoring

    def submit_score(self, clinician_id: str, case_id: str, model_id: str,
                     version: str, score: int, comment: str = "") -> ScoreEvent:
        """Persist a rubric judgment; supersedes any prior current score for
        the same (clinician, case, model) triple and appends a Score audit
        entry."""
        if not isinstance(score, int) or isinstance(score, bool) or score not in RUBRIC_LABELS:
            raise ScoreOutOfRange(f"score must be an integer in 0..4, got {score!r}")
        if case_id not in self._cases:
            raise UnknownCase(case_id)
        if self._registry is not None and self._registry.find(model_id, version) is None:
            raise UnknownModel(f"{model_id}@{version}")
        with self._lock:
            ts = now_ms()
            event = ScoreEvent(
                score_id=f"score-{len(self._events):08d}",
                clinician_id=clinician_id,
                case_id=case_id,
                model_id=model_id,
                version=version,
                score=score,
                rubric_label=RUBRIC_LABELS[score],
                comment=comment,
                ts_ms=ts,
            )
            if self._score_path:
                self._score_path.parent.mkdir(parents=True, exist_ok=True)
                with self._score_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(event.__dict__, separators=(",", ":")) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self._events.append(event)
            self._current[(clinician_id, case_id, model_id)] = event
            self._audit.append_json(AuditKind.SCORE, {
                "score_id": event.score_id,
                "clinician_id": clinician_id,
                "case_id": case_id,
                "model_id": model_id,
                "version": version,
                "score": score,
            })
            return event

    def current_scores(self, dataset: Optional[str] = None,
                       model_id: Optional[str] = None,
                       clinician_id: Optional[str] = None) -> list[ScoreEvent]:
        with self._lock:
            events = list(self._current.values())
        if dataset is not None:
            ds = dataset.lower()
            events = [e for e in events if self._cases[e.case_id].dataset == ds]
        if model_id is not None:
            events = [e for e in events if e.model_id == model_id]
        if clinician_id is not None:
            events = [e for e in events if e.clinician_id == clinician_id]
        return events

    def score_journal(self) -> list[ScoreEvent]:
        """Every score event ever submitted, superseded ones included."""
        with self._lock:
            return list(self._events)

    def aggregate_scores(self, dataset: Optional[str] = None,
                         model_id: Optional[str] = None,
                         clinician_id: Optional[str] = None) -> ScoreDistribution:
        """Counts over current scores only; percentages sum to 100 when the
        filter matches anything and are emitted as 0 otherwise."""
        events = self.current_scores(dataset, model_id, clinician_id)
        counts = {s: 0 for s in RUBRIC_LABELS}
        for e in events:
            counts[e.score] += 1
        total = len(events)
        if total:
            percentages = {s: counts[s] * 100.0 / total for s in counts}
        else:
            percentages = {s: 0.0 for s in counts}
        return ScoreDistribution(counts=counts, total=total, percentages=percentages)

    def export_scores(self) -> str:
        """CSV (RFC 4180) of all current scores, one row per (clinician,
        case, model) triple; appends an Export audit entry."""
        events = sorted(self.current_scores(),
                        key=lambda e: (e.clinician_id, self._cases[e.case_id].dataset,
                                       e.case_id, e.model_id))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["clinician_id", "dataset", "case_id", "model_id",
                         "version", "score", "rubric_label", "ts_ms"])
        for e in events:
            writer.writerow([e.clinician_id, self._cases[e.case_id].dataset,
                             e.case_id, e.model_id, e.version, e.score,
                             e.rubric_label, e.ts_ms])
        self._audit.append_json(AuditKind.EXPORT, {"rows": len(events), "kind": "scores"})
        return buf.getvalue()

    # -- audit passthrough

    @property
    def audit(self) -> AuditLog:
        return self._audit
