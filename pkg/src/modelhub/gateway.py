"""Unified inference service over heterogeneous model containers.

The policy logic is pure: ``form_batches`` and ``autoscale_step`` are
deterministic functions of their inputs, unit-testable by replay, and the
live scheduler is a thin thread around them. Routing is round-robin across
Healthy replicas of the active version; a job whose replica dies mid-flight
is retried exactly once on a different replica before the error surfaces.

Hot swaps are blue-green: start new-version replicas to the current count,
await health, atomically repoint routing, then drain the old replicas, so
every job submitted during the swap completes on exactly one version.
"""

from __future__ import annotations

import base64
import concurrent.futures
import json
import threading
import time
import uuid
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass
from typing import Generic, Optional, Sequence, TypeVar

import requests

from .errors import (
    DeadlineExceeded,
    ModelNotRunning,
    PreconditionFailed,
    ReplicaLost,
    SwapFailedRolledBack,
    UnknownModel,
    UnknownVersion,
)
from .evaluation import AuditKind, AuditLog
from .registry import Registry, Status, now_ms
from .runtime import ReplicaHandle, ReplicaManager, ReplicaState, StopMode
from .telemetry import TelemetryStore

T = TypeVar("T")

ALLOWED_MEDIA_TYPES = ("png", "jpeg", "tiff")
ALLOWED_CHANNELS = (1, 3, 4)


# --- job / result types -----------------------------------------------------

@dataclass(frozen=True)
class ImagePayload:
    data: bytes
    media_type: str  # png | jpeg | tiff
    width: int
    height: int
    channels: int


@dataclass(frozen=True)
class InferenceJob:
    job_id: str
    model_id: str
    prompt: str
    image: ImagePayload
    version: str = ""  # empty -> active version
    submitted_at: int = 0
    deadline_ms: Optional[int] = None


def validate_job(job: InferenceJob) -> None:
    if not job.prompt:
        raise PreconditionFailed("prompt must be non-empty")
    if job.image.media_type not in ALLOWED_MEDIA_TYPES:
        raise PreconditionFailed(
            f"media type must be one of {ALLOWED_MEDIA_TYPES}, got {job.image.media_type!r}")
    if job.image.width < 1 or job.image.height < 1:
        raise PreconditionFailed("image dimensions must be >= 1")
    if job.image.channels not in ALLOWED_CHANNELS:
        raise PreconditionFailed(
            f"channels must be one of {ALLOWED_CHANNELS}, got {job.image.channels}")


def make_job(model_id: str, prompt: str, image: ImagePayload, version: str = "",
             deadline_ms: Optional[int] = None) -> InferenceJob:
    return InferenceJob(
        job_id=f"j-{uuid.uuid4().hex}", model_id=model_id, prompt=prompt,
        image=image, version=version, submitted_at=now_ms(),
        deadline_ms=deadline_ms)


@dataclass(frozen=True)
class InferenceResult:
    job_id: str
    output_text: str
    model_id: str
    version: str
    replica_id: str
    latency_ms: int
    batch_id: str
    audit_id: str


@dataclass(frozen=True)
class SwapReport:
    old_version: str
    new_version: str
    drained_jobs: int


# --- pure batching core -----------------------------------------------------

@dataclass(frozen=True)
class BatchPolicy:
    max_batch: int = 8
    window_ms: int = 50

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.window_ms < 0:
            raise ValueError("window_ms must be >= 0")


@dataclass(frozen=True)
class Batch(Generic[T]):
    jobs: tuple[T, ...]
    first_arrival_ms: int
    dispatch_ms: int


def form_batches(arrivals: Sequence[tuple[int, T]], policy: BatchPolicy) -> list[Batch[T]]:
    """Deterministic batch formation over a time-ordered arrival sequence.

    A batch dispatches the moment it reaches ``max_batch`` jobs, or
    ``window_ms`` after its first arrival, whichever comes first. FIFO holds
    within and across batches, so concatenating batch contents reproduces
    the arrival order exactly.
    """
    batches: list[Batch[T]] = []
    current: list[T] = []
    first_arrival = 0
    for arrival_ms, job in arrivals:
        if current and arrival_ms >= first_arrival + policy.window_ms:
            # The window closed before this arrival.
            batches.append(Batch(tuple(current), first_arrival,
                                 first_arrival + policy.window_ms))
            current = []
        if not current:
            first_arrival = arrival_ms
        current.append(job)
        if len(current) >= policy.max_batch:
            batches.append(Batch(tuple(current), first_arrival, arrival_ms))
            current = []
    if current:
        batches.append(Batch(tuple(current), first_arrival,
                             first_arrival + policy.window_ms))
    return batches


# --- pure autoscaling core --------------------------------------------------

@dataclass(frozen=True)
class ScalePolicy:
    min_replicas: int = 1
    max_replicas: int = 4
    q_hi: float = 4.0
    q_lo: float = 0.5
    sustain_ms: int = 3000
    cooldown_ms: int = 10000

    def __post_init__(self):
        if self.min_replicas > self.max_replicas:
            raise ValueError("min_replicas must be <= max_replicas")
        if self.q_lo >= self.q_hi:
            raise ValueError("q_lo must be < q_hi")


@dataclass(frozen=True)
class ScaleState:
    above_since_ms: Optional[int] = None
    below_since_ms: Optional[int] = None
    last_scale_ms: Optional[int] = None


def autoscale_step(now_ms_: int, queue_depth_avg: float, replicas: int,
                   policy: ScalePolicy, state: ScaleState) -> tuple[int, ScaleState]:
    """One pure scaling decision.

    +1 replica when the average depth has exceeded ``q_hi`` for
    ``sustain_ms`` and the cooldown has elapsed; -1 symmetrically below
    ``q_lo``; always clamped to [min_replicas, max_replicas]. The returned
    state carries the sustain and cooldown clocks, so replaying a depth
    trace yields identical decisions.
    """
    above_since = state.above_since_ms
    below_since = state.below_since_ms
    last_scale = state.last_scale_ms

    if queue_depth_avg > policy.q_hi:
        above_since = above_since if above_since is not None else now_ms_
        below_since = None
    elif queue_depth_avg < policy.q_lo:
        below_since = below_since if below_since is not None else now_ms_
        above_since = None
    else:
        above_since = None
        below_since = None

    cooldown_over = last_scale is None or now_ms_ - last_scale >= policy.cooldown_ms
    target = replicas
    if (above_since is not None and now_ms_ - above_since >= policy.sustain_ms
            and cooldown_over and replicas < policy.max_replicas):
        target = replicas + 1
        last_scale = now_ms_
        above_since = None
    elif (below_since is not None and now_ms_ - below_since >= policy.sustain_ms
          and cooldown_over and replicas > policy.min_replicas):
        target = replicas - 1
        last_scale = now_ms_
        below_since = None

    target = max(policy.min_replicas, min(policy.max_replicas, target))
    return target, ScaleState(above_since, below_since, last_scale)


# --- live gateway -----------------------------------------------------------

@dataclass
class _Pending:
    job: InferenceJob
    arrival_ms: int
    future: Future
    attempts: tuple[str, ...] = ()  # replica ids already tried


class _ModelChannel:
    """Per-model scheduling state: queue, routing table view, scale clocks."""

    def __init__(self, model_id: str):
        self.model_id = model_id
        self.lock = threading.RLock()
        self.cond = threading.Condition(self.lock)
        self.queue: deque[_Pending] = deque()
        self.active_version: str = ""
        self.rr_index = 0
        self.jobs_in_flight: dict[str, int] = {}  # replica_id -> job count
        self.draining: set[str] = set()
        self.scale_state = ScaleState()
        self.scheduler: Optional[threading.Thread] = None
        self.closed = False
        self.swap_lock = threading.Lock()


class Gateway:
    """Routes inference jobs to replicas with batching, autoscaling hooks,
    and blue-green hot swaps; appends exactly one Inference audit entry per
    submit call that returns."""

    def __init__(self, manager: ReplicaManager, registry: Registry,
                 telemetry: TelemetryStore, audit: AuditLog,
                 batch_policy: Optional[BatchPolicy] = None,
                 scale_policy: Optional[ScalePolicy] = None,
                 autostart: bool = True,
                 request_timeout_s: float = 30.0,
                 drain_wait_s: float = 15.0):
        self.manager = manager
        self.registry = registry
        self.telemetry = telemetry
        self.audit = audit
        self.batch_policy = batch_policy or BatchPolicy()
        self.scale_policy = scale_policy or ScalePolicy()
        self.autostart = autostart
        self.request_timeout_s = request_timeout_s
        self.drain_wait_s = drain_wait_s
        self._channels: dict[str, _ModelChannel] = {}
        self._channels_lock = threading.Lock()
        self._closed = False

    # -- channel plumbing

    def _channel(self, model_id: str) -> _ModelChannel:
        with self._channels_lock:
            ch = self._channels.get(model_id)
            if ch is None:
                ch = _ModelChannel(model_id)
                self._channels[model_id] = ch
            return ch

    def _ensure_scheduler(self, ch: _ModelChannel) -> None:
        with ch.lock:
            if ch.scheduler is None or not ch.scheduler.is_alive():
                ch.scheduler = threading.Thread(
                    target=self._scheduler_loop, args=(ch,), daemon=True)
                ch.scheduler.start()

    # -- submit

    def submit(self, job: InferenceJob) -> InferenceResult:
        """Submit one job and wait for its result.

        Exactly one audit entry (kind Inference) is appended for every call
        that returns a result, and the gateway-side latency is recorded in
        the model's histogram.
        """
        if self._closed:
            raise PreconditionFailed("gateway is shut down")
        validate_job(job)
        if not self.registry.versions_of(job.model_id):
            raise UnknownModel(job.model_id)
        ch = self._channel(job.model_id)
        self._ensure_active_version(ch, job)
        self._ensure_scheduler(ch)

        pending = _Pending(job=job, arrival_ms=now_ms(), future=Future())
        with ch.cond:
            ch.queue.append(pending)
            ch.cond.notify_all()

        timeout = job.deadline_ms / 1000.0 if job.deadline_ms else None
        try:
            raw = pending.future.result(timeout=timeout)
        except concurrent.futures.TimeoutError:
            raise DeadlineExceeded(
                f"job {job.job_id} exceeded deadline of {job.deadline_ms} ms") from None

        latency_ms = max(0, now_ms() - job.submitted_at)
        entry = self.audit.append_json(AuditKind.INFERENCE, {
            "job_id": job.job_id,
            "model_id": job.model_id,
            "version": raw["model_version"],
            "replica_id": raw["replica_id"],
            "batch_id": raw["batch_id"],
            "attempts": list(raw["attempts"]),
            "latency_ms": latency_ms,
        })
        self.telemetry.observe_latency(job.model_id, latency_ms)
        return InferenceResult(
            job_id=job.job_id,
            output_text=raw["text"],
            model_id=job.model_id,
            version=raw["model_version"],
            replica_id=raw["replica_id"],
            latency_ms=latency_ms,
            batch_id=raw["batch_id"],
            audit_id=entry.audit_id,
        )

    def _ensure_active_version(self, ch: _ModelChannel, job: InferenceJob) -> None:
        with ch.lock:
            if ch.active_version and self._healthy_replicas(ch):
                if job.version and job.version != ch.active_version:
                    raise ModelNotRunning(
                        f"{job.model_id}@{job.version} is not the active version "
                        f"({ch.active_version})")
                return
        with ch.swap_lock:  # serialize autostart with swaps and scaling
            with ch.lock:
                if ch.active_version and self._healthy_replicas(ch):
                    return
                preferred = ch.active_version
            # No live replica: find something Running, or autostart.
            records = self.registry.versions_of(job.model_id)
            running = [r for r in records if r.status is Status.RUNNING]
            for r in running:
                if any(h.state is ReplicaState.HEALTHY
                       for h in self.manager.list_replicas(job.model_id, r.version)):
                    if job.version and job.version != r.version:
                        # A pinned job never hijacks routing away from the
                        # version that is actually live.
                        raise ModelNotRunning(
                            f"{job.model_id}@{job.version} is not the active "
                            f"version ({r.version})")
                    with ch.lock:
                        ch.active_version = r.version
                    return
            if not self.autostart:
                raise ModelNotRunning(f"{job.model_id} has no healthy replica")
            candidates = [r for r in records
                          if r.status in (Status.CONTAINERIZED, Status.STOPPED,
                                          Status.RUNNING)]
            if job.version:
                candidates = [r for r in candidates if r.version == job.version]
            elif preferred and any(r.version == preferred for r in candidates):
                candidates = [r for r in candidates if r.version == preferred]
            if not candidates:
                raise ModelNotRunning(
                    f"{job.model_id} has no containerized version to start")
            target = candidates[-1]  # most recently registered
            self.manager.start_replica(target.model_id, target.version)
            with ch.lock:
                ch.active_version = target.version

    # -- scheduler

    def _scheduler_loop(self, ch: _ModelChannel) -> None:
        policy = self.batch_policy
        while True:
            with ch.cond:
                while not ch.queue and not ch.closed:
                    ch.cond.wait(timeout=0.5)
                if ch.closed and not ch.queue:
                    return
                first = ch.queue[0]
                # A batch holds the jobs that arrived inside its window; the
                # first member is in by definition.
                cutoff = first.arrival_ms + policy.window_ms
                in_window = 1
                for p in list(ch.queue)[1:policy.max_batch]:
                    if p.arrival_ms < cutoff:
                        in_window += 1
                    else:
                        break
                now = now_ms()
                if in_window < policy.max_batch and now < cutoff:
                    ch.cond.wait(timeout=(cutoff - now) / 1000.0)
                    continue
                # Jobs stay queued (and visible to the depth metric) until a
                # replica slot frees up.
                members = list(ch.queue)[:in_window]
                replica = self._acquire_replica_slot(ch, members)
                if ch.closed and not ch.queue:
                    return
                if not ch.queue or ch.queue[0] is not members[0]:
                    continue  # the head shifted while waiting; re-evaluate
                if replica is None:
                    # No replica will ever serve these jobs.
                    for _ in range(min(in_window, len(ch.queue))):
                        pending = ch.queue.popleft()
                        pending.future.set_exception(ReplicaLost(
                            f"no healthy replica for {ch.model_id}"))
                    continue
                batch = [ch.queue.popleft() for _ in range(in_window)]
                ch.jobs_in_flight[replica.replica_id] = (
                    ch.jobs_in_flight.get(replica.replica_id, 0) + len(batch))
            threading.Thread(target=self._dispatch,
                             args=(ch, replica, batch), daemon=True).start()

    def _healthy_replicas(self, ch: _ModelChannel) -> list[ReplicaHandle]:
        return [r for r in self.manager.list_replicas(ch.model_id, ch.active_version)
                if r.state is ReplicaState.HEALTHY
                and r.replica_id not in ch.draining]

    def _acquire_replica_slot(self, ch: _ModelChannel,
                              batch: list[_Pending]) -> Optional[ReplicaHandle]:
        """Round-robin a free healthy replica, waiting while all are busy.
        Skips replicas any batch member already failed on. Must be called
        holding ch.lock."""
        excluded: set[str] = set()
        for p in batch:
            excluded.update(p.attempts)
        deadline = time.monotonic() + self.request_timeout_s
        while time.monotonic() < deadline:
            healthy = self._healthy_replicas(ch)
            candidates = [r for r in healthy if r.replica_id not in excluded]
            free = [r for r in candidates
                    if ch.jobs_in_flight.get(r.replica_id, 0) == 0]
            if free:
                ch.rr_index = (ch.rr_index + 1) % len(free)
                return free[ch.rr_index]
            if not candidates:
                if healthy:
                    # Every alternative was already tried; the retry rule
                    # says surface the loss rather than re-use a failed one.
                    return None
                if not self._try_revive(ch):
                    return None
            ch.cond.wait(timeout=0.05)
        return None

    def _try_revive(self, ch: _ModelChannel) -> bool:
        if not self.autostart or not ch.active_version:
            return False
        rec = self.registry.find(ch.model_id, ch.active_version)
        if rec is None or rec.status not in (Status.CONTAINERIZED, Status.RUNNING,
                                             Status.STOPPED):
            return False
        try:
            # Drop the channel lock while the replica boots.
            ch.cond.release()
            try:
                self.manager.start_replica(ch.model_id, ch.active_version)
            finally:
                ch.cond.acquire()
            return True
        except Exception:
            return False

    def _dispatch(self, ch: _ModelChannel, replica: ReplicaHandle,
                  batch: list[_Pending]) -> None:
        batch_id = f"b-{uuid.uuid4().hex[:12]}"
        payload = {
            "batch_id": batch_id,
            "items": [{
                "job_id": p.job.job_id,
                "prompt": p.job.prompt,
                "image_b64": base64.b64encode(p.job.image.data).decode("ascii"),
                "media_type": p.job.image.media_type,
            } for p in batch],
        }
        error: Optional[str] = None
        doc = None
        try:
            resp = requests.post(f"http://{replica.endpoint}/v1/infer_batch",
                                 json=payload, timeout=self.request_timeout_s)
            if resp.status_code != 200:
                error = f"replica returned status {resp.status_code}"
            else:
                doc = resp.json()
        except (requests.RequestException, json.JSONDecodeError) as exc:
            error = f"transport failure: {exc}"

        with ch.cond:
            left = ch.jobs_in_flight.get(replica.replica_id, 0) - len(batch)
            ch.jobs_in_flight[replica.replica_id] = max(0, left)
            ch.cond.notify_all()

        if error is not None:
            self.manager.report_connection_failure(replica.replica_id, error)
            self._retry_or_fail(ch, replica, batch, error)
            return

        by_id = {item["job_id"]: item for item in doc.get("items", [])}
        for p in batch:
            item = by_id.get(p.job.job_id)
            if item is None:
                self._retry_or_fail(ch, replica, [p], "job missing from batch reply")
                continue
            p.future.set_result({
                "text": item["text"],
                "model_version": item.get("model_version", replica.version),
                "replica_id": replica.replica_id,
                "batch_id": batch_id,
                "attempts": p.attempts + (replica.replica_id,),
            })

    def _retry_or_fail(self, ch: _ModelChannel, replica: ReplicaHandle,
                       batch: list[_Pending], error: str) -> None:
        """Exactly one retry per job, on a different replica."""
        with ch.cond:
            for p in reversed(batch):  # appendleft in reverse keeps FIFO order
                if p.attempts:
                    p.future.set_exception(ReplicaLost(
                        f"job {p.job.job_id} lost twice; last error: {error}"))
                else:
                    requeued = _Pending(job=p.job, arrival_ms=now_ms(),
                                        future=p.future,
                                        attempts=(replica.replica_id,))
                    ch.queue.appendleft(requeued)
            ch.cond.notify_all()

    # -- hot swap

    def hot_swap(self, model_id: str, new_version: str) -> SwapReport:
        """Blue-green swap to ``new_version`` with zero job loss; on any
        failure bringing up the new version, everything rolls back and the
        old version is untouched."""
        ch = self._channel(model_id)
        with ch.swap_lock:
            with ch.lock:
                old_version = ch.active_version
            if new_version == old_version:
                return SwapReport(old_version, new_version, 0)
            rec = self.registry.find(model_id, new_version)
            if rec is None:
                raise UnknownVersion(f"{model_id}@{new_version}")
            if rec.status not in (Status.CONTAINERIZED, Status.RUNNING, Status.STOPPED):
                raise PreconditionFailed(
                    f"{model_id}@{new_version} is {rec.status.value}, need Containerized")

            old_replicas = [r for r in self.manager.list_replicas(model_id, old_version)
                            if r.state is ReplicaState.HEALTHY] if old_version else []
            target_count = max(1, len(old_replicas))

            started: list[ReplicaHandle] = []
            try:
                for _ in range(target_count):
                    started.append(self.manager.start_replica(model_id, new_version))
            except Exception as exc:
                for handle in started:
                    try:
                        self.manager.stop_replica(handle.replica_id, StopMode.KILL)
                    except Exception:
                        pass
                raise SwapFailedRolledBack(
                    f"new version failed to come up: {exc}") from exc

            # Atomically repoint routing; queued jobs now go to new replicas.
            with ch.cond:
                ch.active_version = new_version
                ch.draining.update(r.replica_id for r in old_replicas)
                drained_jobs = sum(ch.jobs_in_flight.get(r.replica_id, 0)
                                   for r in old_replicas)
                ch.cond.notify_all()

            # Wait out the old in-flight work, then retire the old replicas.
            deadline = time.monotonic() + self.drain_wait_s
            with ch.cond:
                while (any(ch.jobs_in_flight.get(r.replica_id, 0) > 0
                           for r in old_replicas)
                       and time.monotonic() < deadline):
                    ch.cond.wait(timeout=0.05)
            for r in old_replicas:
                try:
                    self.manager.stop_replica(r.replica_id, StopMode.DRAIN)
                except Exception:
                    pass
            with ch.cond:
                for r in old_replicas:
                    ch.draining.discard(r.replica_id)

            self.audit.append_json(AuditKind.SWAP, {
                "model_id": model_id,
                "old_version": old_version,
                "new_version": new_version,
                "drained_jobs": drained_jobs,
            })
            return SwapReport(old_version=old_version, new_version=new_version,
                              drained_jobs=drained_jobs)

    # -- autoscaling hook

    def autoscale_tick(self, model_id: str, now_ms_: Optional[int] = None) -> int:
        """Apply one pure scaling decision to the live replica set and act
        on it (start one replica / drain one replica)."""
        ch = self._channel(model_id)
        ts = now_ms() if now_ms_ is None else now_ms_
        with ch.swap_lock:
            with ch.lock:
                if not ch.active_version:
                    return 0
                depth = float(len(ch.queue))
                replicas = self._healthy_replicas(ch)
                count = len(replicas)
                target, ch.scale_state = autoscale_step(
                    ts, depth, count, self.scale_policy, ch.scale_state)
            if target > count:
                self.manager.start_replica(model_id, ch.active_version)
            elif target < count:
                victim = replicas[-1]
                with ch.cond:
                    ch.draining.add(victim.replica_id)
                deadline = time.monotonic() + self.drain_wait_s
                with ch.cond:
                    while (ch.jobs_in_flight.get(victim.replica_id, 0) > 0
                           and time.monotonic() < deadline):
                        ch.cond.wait(timeout=0.05)
                self.manager.stop_replica(victim.replica_id, StopMode.DRAIN)
                with ch.cond:
                    ch.draining.discard(victim.replica_id)
            return target

    # -- lifecycle

    def queue_depth(self, model_id: str) -> int:
        ch = self._channel(model_id)
        with ch.lock:
            return len(ch.queue)

    def active_version(self, model_id: str) -> str:
        ch = self._channel(model_id)
        with ch.lock:
            return ch.active_version

    def set_active_version(self, model_id: str, version: str) -> None:
        ch = self._channel(model_id)
        with ch.lock:
            ch.active_version = version

    def close(self, drain: bool = True, timeout_s: float = 10.0) -> None:
        """Stop accepting new jobs; with ``drain`` wait for queued and
        in-flight jobs to finish before the schedulers exit."""
        self._closed = True
        with self._channels_lock:
            channels = list(self._channels.values())
        deadline = time.monotonic() + timeout_s
        for ch in channels:
            with ch.cond:
                if drain:
                    while ((ch.queue or any(v > 0 for v in ch.jobs_in_flight.values()))
                           and time.monotonic() < deadline):
                        ch.cond.wait(timeout=0.05)
                ch.closed = True
                if not drain:
                    for p in ch.queue:
                        p.future.set_exception(PreconditionFailed("gateway shut down"))
                    ch.queue.clear()
                ch.cond.notify_all()
