"""Per-replica resource samples and gateway latency observations.

Latency lives in fixed log-spaced histograms (edges 1, 2, 4, ... 65536 ms
plus an overflow bucket); percentiles are nearest-rank over bucket upper
bounds, a deliberately conservative estimate: the true percentile never
exceeds the reported one's bucket bound. Resource samples go to bounded
per-replica ring buffers; a stale sample (stats source unreachable) carries
the previous values and is excluded from aggregates and exports.

Bucket edges and the percentile convention are this artifact's choice; no
upstream requirement fixes them.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import EmptyHistogram
from .registry import now_ms
from .runtime import ReplicaHandle

BUCKET_BOUNDS_MS: tuple[int, ...] = tuple(2 ** i for i in range(17))  # 1..65536
DEFAULT_RING_CAPACITY = 3600  # 1 h at the default 1 s cadence


@dataclass(frozen=True)
class TelemetrySample:
    ts_ms: int
    replica_id: str
    gpu_util_pct: float
    mem_bytes: int
    stale: bool = False


class LatencyHistogram:
    """Fixed-bound latency histogram; thread-safe increments.

    Bucket i counts observations v with bounds[i-1] < v <= bounds[i]
    (bucket 0 starts at 0); anything above the last edge lands in the
    overflow bucket, whose upper bound is reported as +inf.
    """

    def __init__(self):
        self._counts = [0] * (len(BUCKET_BOUNDS_MS) + 1)
        self.total = 0
        self.sum_ms = 0
        self._lock = threading.Lock()

    @property
    def bucket_bounds_ms(self) -> tuple[int, ...]:
        return BUCKET_BOUNDS_MS

    @property
    def counts(self) -> list[int]:
        with self._lock:
            return list(self._counts)

    def observe(self, latency_ms: int) -> None:
        if latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")
        idx = bisect_left(BUCKET_BOUNDS_MS, latency_ms)
        with self._lock:
            self._counts[idx] += 1
            self.total += 1
            self.sum_ms += latency_ms

    def percentile(self, p: float) -> float:
        """Nearest-rank percentile over bucket upper bounds; p in (0, 100]."""
        if not 0 < p <= 100:
            raise ValueError("p must be in (0, 100]")
        with self._lock:
            if self.total == 0:
                raise EmptyHistogram("no observations")
            rank = math.ceil(p / 100.0 * self.total)
            cum = 0
            for i, count in enumerate(self._counts):
                cum += count
                if cum >= rank:
                    return float(BUCKET_BOUNDS_MS[i]) if i < len(BUCKET_BOUNDS_MS) else math.inf
        return math.inf  # unreachable; keeps type checkers content

    def snapshot_percentiles(self, ps: tuple[float, ...] = (50.0, 95.0, 99.0)) -> dict[float, float]:
        try:
            return {p: self.percentile(p) for p in ps}
        except EmptyHistogram:
            return {p: 0.0 for p in ps}


@dataclass(frozen=True)
class TickRow:
    """One exportable per-model sampling tick."""

    ts_ms: int
    gpu_util_pct: float
    mem_bytes: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    stale: bool


@dataclass
class TelemetryTable:
    header: tuple[str, ...]
    rows: list[tuple]
    gpu_absent: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()


CSV_HEADER = ("ts_ms", "gpu_util_pct", "mem_bytes", "p50_ms", "p95_ms", "p99_ms")


class TelemetryStore:
    """Ring buffers per replica, one latency histogram and one tick series
    per model. ``stats_fn`` maps a replica handle to its raw stats dict (or
    None when unreachable); the service wires it to the container runtime."""

    def __init__(self, stats_fn: Optional[Callable[[ReplicaHandle], Optional[dict]]] = None,
                 ring_capacity: int = DEFAULT_RING_CAPACITY):
        self._stats_fn = stats_fn
        self._ring_capacity = ring_capacity
        self._rings: dict[str, deque[TelemetrySample]] = {}
        self._hists: dict[str, LatencyHistogram] = {}
        self._ticks: dict[str, deque[TickRow]] = {}
        self._gpu_absent: dict[str, bool] = {}
        self._lock = threading.Lock()

    # -- resource sampling

    def sample_replica(self, replica: ReplicaHandle,
                       ts_ms: Optional[int] = None) -> TelemetrySample:
        """Take one sample from the stats source; unreachable sources yield
        a stale sample carrying the previous values."""
        ts = now_ms() if ts_ms is None else ts_ms
        raw = None
        if self._stats_fn is not None:
            try:
                raw = self._stats_fn(replica)
            except Exception:
                raw = None
        with self._lock:
            ring = self._rings.setdefault(
                replica.replica_id, deque(maxlen=self._ring_capacity))
            prev = ring[-1] if ring else None
        if raw is None:
            sample = TelemetrySample(
                ts_ms=ts, replica_id=replica.replica_id,
                gpu_util_pct=prev.gpu_util_pct if prev else 0.0,
                mem_bytes=prev.mem_bytes if prev else 0,
                stale=True)
        else:
            gpu = raw.get("gpu_util_pct")
            if gpu is None:
                self._gpu_absent[replica.model_id] = True
                gpu = 0.0
            gpu = min(100.0, max(0.0, float(gpu)))
            sample = TelemetrySample(
                ts_ms=ts, replica_id=replica.replica_id,
                gpu_util_pct=gpu, mem_bytes=int(raw.get("mem_bytes", 0)),
                stale=False)
        with self._lock:
            ring.append(sample)
        return sample

    def ring(self, replica_id: str) -> list[TelemetrySample]:
        with self._lock:
            return list(self._rings.get(replica_id, ()))

    # -- latency

    def histogram(self, model_id: str) -> LatencyHistogram:
        with self._lock:
            return self._hists.setdefault(model_id, LatencyHistogram())

    def observe_latency(self, model_id: str, latency_ms: int) -> None:
        self.histogram(model_id).observe(latency_ms)

    def percentile(self, model_id: str, p: float) -> float:
        return self.histogram(model_id).percentile(p)

    # -- per-model tick series

    def record_tick(self, model_id: str, samples: list[TelemetrySample],
                    ts_ms: Optional[int] = None) -> TickRow:
        """Fold one sampling tick's replica samples into the model's series.
        A tick with no fresh sample is recorded stale (and later omitted
        from exports)."""
        ts = now_ms() if ts_ms is None else ts_ms
        fresh = [s for s in samples if not s.stale]
        pcts = self.histogram(model_id).snapshot_percentiles()
        if fresh:
            row = TickRow(
                ts_ms=ts,
                gpu_util_pct=sum(s.gpu_util_pct for s in fresh) / len(fresh),
                mem_bytes=sum(s.mem_bytes for s in fresh),
                p50_ms=pcts[50.0], p95_ms=pcts[95.0], p99_ms=pcts[99.0],
                stale=False)
        else:
            row = TickRow(ts_ms=ts, gpu_util_pct=0.0, mem_bytes=0,
                          p50_ms=pcts[50.0], p95_ms=pcts[95.0], p99_ms=pcts[99.0],
                          stale=True)
        with self._lock:
            self._ticks.setdefault(model_id, deque(maxlen=self._ring_capacity)).append(row)
        return row

    def export_series(self, model_id: str, start_ms: Optional[int] = None,
                      end_ms: Optional[int] = None) -> TelemetryTable:
        """Exportable per-tick table for a time window; stale ticks omitted."""
        with self._lock:
            ticks = list(self._ticks.get(model_id, ()))
            gpu_absent = self._gpu_absent.get(model_id, False)
        rows = []
        for t in ticks:
            if t.stale:
                continue
            if start_ms is not None and t.ts_ms < start_ms:
                continue
            if end_ms is not None and t.ts_ms > end_ms:
                continue
            rows.append((t.ts_ms, t.gpu_util_pct, t.mem_bytes,
                         t.p50_ms, t.p95_ms, t.p99_ms))
        return TelemetryTable(header=CSV_HEADER, rows=rows, gpu_absent=gpu_absent)


class Sampler:
    """Background sampling loop: every tick, sample each replica and fold
    the results into its model's tick series. ``run_once`` is callable
    directly so tests can drive ticks deterministically."""

    def __init__(self, store: TelemetryStore, list_replicas: Callable[[], list[ReplicaHandle]],
                 interval_s: float = 1.0):
        self.store = store
        self.list_replicas = list_replicas
        self.interval_s = interval_s
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def run_once(self, ts_ms: Optional[int] = None) -> None:
        ts = now_ms() if ts_ms is None else ts_ms
        by_model: dict[str, list[TelemetrySample]] = {}
        for replica in self.list_replicas():
            sample = self.store.sample_replica(replica, ts_ms=ts)
            by_model.setdefault(replica.model_id, []).append(sample)
        for model_id, samples in by_model.items():
            self.store.record_tick(model_id, samples, ts_ms=ts)

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    def _loop(self) -> None:
        while not self._stop.wait(self.interval_s):
            self.run_once()
