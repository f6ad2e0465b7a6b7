"""Wire protocol shared by the pipeline and every model backend.

Messages are single JSON objects, one per line over a subprocess's
standard streams or one per HTTP POST body; both transports carry
identical bodies. Requests pair with responses through a monotonically
increasing ``id``.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import ProtocolError, SchemaError
from .timeline import Label


class BackendKind(Enum):
    TRANSCRIBER = "transcriber"
    CLASSIFIER = "classifier"
    LLM_JUDGE = "llm_judge"


class ModelSize(Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"

    @classmethod
    def from_wire(cls, value: str) -> "ModelSize":
        for member in cls:
            if member.value == value:
                return member
        raise ProtocolError(f"unknown model size {value!r}")


class Transport(Enum):
    SUBPROCESS_STDIO = "subprocess_stdio"
    HTTP = "http"


class TranscribeMode(Enum):
    CHUNK = "chunk"
    LONG_FORM = "long_form"


class PredictionFlag(Enum):
    #: Label was substituted without consulting the model (e.g. empty text).
    FALLBACK = "fallback"
    #: Model output failed strict parsing even after retries.
    MALFORMED_RESPONSE = "malformed_response"
    #: Model declined to answer (content policy).
    REFUSED = "refused"


#: Documented fallback label whenever a prediction carries flags: the
#: dominant class, so degraded predictions never inflate ad counts.
FALLBACK_LABEL = Label.NO_AD


@dataclass(frozen=True)
class BackendDescriptor:
    """Where and how to reach one backend process."""

    kind: BackendKind
    transport: Transport
    endpoint_or_command: str
    model_size: ModelSize | None = None

    def __post_init__(self):
        if (self.model_size is not None) != (self.kind is BackendKind.TRANSCRIBER):
            raise SchemaError(
                "model_size must be set for transcriber backends and only for them"
            )
        if not self.endpoint_or_command:
            raise SchemaError("endpoint_or_command must be nonempty")


@dataclass(frozen=True)
class ClassifierTrainingConfig:
    """Training hyperparameters forwarded verbatim to classifier backends."""

    learning_rate: float = 5e-5
    epochs: int = 3
    warmup_ratio: float = 0.1
    weight_decay: float = 0.01
    adam_epsilon: float = 1e-8

    def to_payload(self) -> dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "warmup_ratio": self.warmup_ratio,
            "weight_decay": self.weight_decay,
            "adam_epsilon": self.adam_epsilon,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "ClassifierTrainingConfig":
        try:
            return cls(
                learning_rate=float(payload["learning_rate"]),
                epochs=int(payload["epochs"]),
                warmup_ratio=float(payload["warmup_ratio"]),
                weight_decay=float(payload["weight_decay"]),
                adam_epsilon=float(payload["adam_epsilon"]),
            )
        except KeyError as exc:
            raise ProtocolError(f"training config missing key {exc}") from exc


@dataclass(frozen=True)
class Prediction:
    """One window-level classification outcome."""

    window_index: int
    label: Label
    score: float | None = None
    flags: frozenset[PredictionFlag] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.flags and self.label is not FALLBACK_LABEL:
            raise SchemaError(
                f"flagged prediction must carry the fallback label "
                f"{FALLBACK_LABEL.value!r}, got {self.label.value!r}"
            )
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise SchemaError(f"score {self.score} outside [0, 1]")


OPS = ("transcribe", "classify", "train", "llm_classify")

ERROR_CODES = (
    "backend_unavailable",
    "bad_request",
    "internal",
    "partial_batch",
    "protocol",
    "timeout",
    "training_diverged",
)


def make_request(request_id: int, op: str, payload: Mapping[str, Any]) -> dict:
    if op not in OPS:
        raise ProtocolError(f"unknown op {op!r}")
    return {"id": request_id, "op": op, "payload": dict(payload)}


def make_response(request_id: int, payload: Mapping[str, Any]) -> dict:
    return {"id": request_id, "payload": dict(payload)}


def make_error_response(request_id: int, code: str, message: str) -> dict:
    return {"id": request_id, "error": {"code": code, "message": message}}


def _require(obj: Mapping[str, Any], key: str, kind: type, where: str) -> Any:
    if key not in obj:
        raise ProtocolError(f"{where} missing field {key!r}")
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ProtocolError(
            f"{where} field {key!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def validate_request(obj: Any) -> dict:
    """Validate a decoded request object; returns it on success."""
    if not isinstance(obj, Mapping):
        raise ProtocolError("request must be a JSON object")
    _require(obj, "id", int, "request")
    op = _require(obj, "op", str, "request")
    if op not in OPS:
        raise ProtocolError(f"unknown op {op!r}")
    payload = _require(obj, "payload", Mapping, "request")

    if op == "transcribe":
        _require(payload, "audio_path", str, "transcribe payload")
        mode = _require(payload, "mode", str, "transcribe payload")
        if mode not in ("chunk", "long_form"):
            raise ProtocolError(f"unknown transcribe mode {mode!r}")
        size = _require(payload, "model_size", str, "transcribe payload")
        ModelSize.from_wire(size)
        _require(payload, "offset_ms", int, "transcribe payload")
    elif op == "classify":
        _require(payload, "model_ref", str, "classify payload")
        texts = _require(payload, "texts", list, "classify payload")
        if not all(isinstance(t, str) for t in texts):
            raise ProtocolError("classify texts must all be strings")
        if "context" in payload:
            context = _require(payload, "context", Mapping, "classify payload")
            _require(context, "recording_id", str, "classify context")
            _require(context, "base_index", int, "classify context")
    elif op == "train":
        _require(payload, "train_path", str, "train payload")
        _require(payload, "val_path", str, "train payload")
        config = _require(payload, "config", Mapping, "train payload")
        ClassifierTrainingConfig.from_payload(config)
    elif op == "llm_classify":
        _require(payload, "system", str, "llm_classify payload")
        _require(payload, "user", str, "llm_classify payload")
    return dict(obj)


def parse_error(obj: Mapping[str, Any]) -> tuple[str, str]:
    error = obj["error"]
    if not isinstance(error, Mapping):
        raise ProtocolError("error field must be an object")
    code = _require(error, "code", str, "error")
    message = _require(error, "message", str, "error")
    return code, message


def validate_response(op: str, obj: Any, *, mode: str | None = None) -> dict:
    """Validate a decoded response for ``op``; returns the payload.

    ``mode`` narrows the transcribe response shape ("chunk" or
    "long_form"). Error responses raise nothing here; callers check for
    the ``error`` key first.
    """
    if not isinstance(obj, Mapping):
        raise ProtocolError("response must be a JSON object")
    _require(obj, "id", int, "response")
    payload = _require(obj, "payload", Mapping, f"{op} response")

    if op == "transcribe":
        if mode == "chunk":
            _require(payload, "text", str, "chunk transcribe response")
        else:
            segments = _require(payload, "segments", list, "transcribe response")
            for i, seg in enumerate(segments):
                if not isinstance(seg, Mapping):
                    raise ProtocolError(f"segment {i} is not an object")
                _require(seg, "start_ms", int, f"segment {i}")
                _require(seg, "end_ms", int, f"segment {i}")
                _require(seg, "text", str, f"segment {i}")
    elif op == "classify":
        labels = _require(payload, "labels", list, "classify response")
        for value in labels:
            if value not in (Label.AD.value, Label.NO_AD.value):
                raise ProtocolError(f"unknown prediction label {value!r}")
        scores = payload.get("scores")
        if scores is not None:
            if not isinstance(scores, list) or len(scores) != len(labels):
                raise ProtocolError("scores must be null or match labels length")
            for value in scores:
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ProtocolError("scores must be numbers")
    elif op == "train":
        _require(payload, "model_ref", str, "train response")
        curve = _require(payload, "epoch_val_f1", list, "train response")
        for value in curve:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ProtocolError("epoch_val_f1 must be numbers")
    elif op == "llm_classify":
        _require(payload, "text", str, "llm_classify response")
    return dict(payload)
