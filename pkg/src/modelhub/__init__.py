"""On-premise deployment hub for vision-language model containers.

Three planes: a versioned model registry with controlled weight
acquisition, a containerized inference gateway (batching, autoscaling,
blue-green hot swaps, telemetry), and a clinician scoring layer with a
hash-chained audit log and reproducible exports.
"""

from .acquisition import AcquireConfig, Acquirer, BlobStore, DownloadProgress, WeightBundle, verify_bundle
from .errors import ModelHubError
from .evaluation import (
    AuditEntry,
    AuditKind,
    AuditLog,
    CaseRecord,
    EvaluationStore,
    RUBRIC_LABELS,
    ScoreDistribution,
    ScoreEvent,
    verify_audit,
)
from .gateway import (
    Batch,
    BatchPolicy,
    Gateway,
    ImagePayload,
    InferenceJob,
    InferenceResult,
    ScalePolicy,
    ScaleState,
    SwapReport,
    autoscale_step,
    form_batches,
    make_job,
)
from .registry import (
    LocalPath,
    ModelRecord,
    ModelSource,
    ProvenanceMeta,
    Registry,
    RemoteHub,
    SEED_MODELS,
    Status,
    load_registry,
    register_seed_models,
)
from .runtime import (
    EngineRuntime,
    MockRuntime,
    ReplicaHandle,
    ReplicaManager,
    ReplicaState,
    RuntimeConfig,
    RuntimeEvent,
    StopMode,
)
from .service import ModelHub, ServiceConfig, load_config, serve
from .telemetry import LatencyHistogram, Sampler, TelemetrySample, TelemetryStore

__version__ = "0.1.0"
