"""Error types shared across the hub.

Every operational failure raised by this package is a subclass of
:class:`ModelHubError` carrying a stable ``error_code`` (used verbatim in
HTTP bodies and CLI output) and the HTTP status the service layer maps it
to: precondition violations are 400, unknown identifiers 404, conflicts
409, runtime/storage trouble 503.
"""

from __future__ import annotations


class ModelHubError(Exception):
    """Base class; ``error_code`` defaults to the subclass name."""

    http_status = 400

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__

    @property
    def error_code(self) -> str:
        return self.__class__.__name__


class PreconditionFailed(ModelHubError):
    """A stated operation precondition does not hold."""

    http_status = 400


# --- registry ---------------------------------------------------------------

class DuplicateModelVersion(ModelHubError):
    http_status = 409


class InvalidSource(ModelHubError):
    http_status = 400


class UnknownModel(ModelHubError):
    http_status = 404


class IllegalTransition(ModelHubError):
    http_status = 400

    def __init__(self, from_status: str, to_status: str):
        super().__init__(f"illegal transition {from_status} -> {to_status}")
        self.from_status = from_status
        self.to_status = to_status


class CorruptJournal(ModelHubError):
    """Journal replay hit a malformed entry; ``offset`` is the byte offset
    at which the bad entry starts."""

    http_status = 503

    def __init__(self, offset: int, detail: str = ""):
        super().__init__(f"corrupt journal at byte {offset}" + (f": {detail}" if detail else ""))
        self.offset = offset


# --- acquisition ------------------------------------------------------------

class NetworkUnreachable(ModelHubError):
    http_status = 503


class DigestMismatch(ModelHubError):
    http_status = 503

    def __init__(self, file: str, detail: str = ""):
        super().__init__(f"digest mismatch for {file}" + (f": {detail}" if detail else ""))
        self.file = file


class SourceMissing(ModelHubError):
    http_status = 404


# --- runtime ----------------------------------------------------------------

class RuntimeUnavailable(ModelHubError):
    http_status = 503


class BuildFailed(ModelHubError):
    http_status = 503

    def __init__(self, log: str):
        super().__init__(f"container build failed: {log}")
        self.log = log


class StartupTimeout(ModelHubError):
    http_status = 503


class UnknownReplica(ModelHubError):
    http_status = 404


# --- gateway ----------------------------------------------------------------

class ModelNotRunning(ModelHubError):
    http_status = 400


class ReplicaLost(ModelHubError):
    http_status = 503


class DeadlineExceeded(ModelHubError):
    http_status = 503


class SwapFailedRolledBack(ModelHubError):
    http_status = 503


class UnknownVersion(ModelHubError):
    http_status = 404


# --- telemetry --------------------------------------------------------------

class EmptyHistogram(ModelHubError):
    http_status = 400


# --- evaluation -------------------------------------------------------------

class DuplicateCaseId(ModelHubError):
    http_status = 409


class MissingImage(ModelHubError):
    http_status = 400

    def __init__(self, case_id: str, path: str = ""):
        super().__init__(f"image missing for case {case_id}" + (f": {path}" if path else ""))
        self.case_id = case_id


class MalformedManifest(ModelHubError):
    http_status = 400

    def __init__(self, line: int, detail: str = ""):
        super().__init__(f"malformed manifest line {line}" + (f": {detail}" if detail else ""))
        self.line = line


class ScoreOutOfRange(ModelHubError):
    http_status = 400


class UnknownCase(ModelHubError):
    http_status = 404


class StorageFailure(ModelHubError):
    http_status = 503


# --- service ----------------------------------------------------------------

class AddrInUse(ModelHubError):
    http_status = 503


class ConfigInvalid(ModelHubError):
    http_status = 400

    def __init__(self, field: str, detail: str = ""):
        super().__init__(f"invalid config field {field}" + (f": {detail}" if detail else ""))
        self.field = field
