"""Client side of the backend wire protocol.

A connection is used serially (one in-flight request); responses pair
with requests by id. The subprocess transport speaks newline-delimited
JSON over the child's standard streams; the HTTP transport POSTs the
same bodies to a single endpoint.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass
from queue import Empty, Queue
from typing import Any, Callable, Sequence

import httpx

from .errors import (
    ArgumentError,
    BackendUnavailable,
    PartialBatch,
    ProtocolError,
    RaddetError,
    Timeout,
    TrainingDiverged,
)
from .protocol import (
    BackendDescriptor,
    BackendKind,
    ClassifierTrainingConfig,
    ModelSize,
    Prediction,
    PredictionFlag,
    TranscribeMode,
    Transport,
    make_request,
    parse_error,
    validate_response,
)
from .timeline import Label
from .windowing import TranscriptSegment, validate_segments

DEFAULT_TIMEOUT_S = 60.0
#: Transcription deadline as a multiple of the audio's real duration.
REALTIME_TIMEOUT_FACTOR = 10.0
DEFAULT_CLASSIFY_BATCH = 32

#: Prompt pair sent for every LLM judgement; the transcription is spliced
#: into the user message at the {transcription} placeholder.
LLM_SYSTEM_PROMPT = (
    "Tu función es, dado un trozo de una transcripción de radio, determinar "
    "si la mayoría de ese trozo se trata de un anuncio o no."
)
LLM_USER_PROMPT = (
    "Te voy a proporcionar una transcripción de un fragmento de radio de 40 "
    "segundos. Quiero que identifiques si la mayor parte de esa transcripción "
    "corresponde a un anuncio o no. En caso de que sea un anuncio de "
    "autobombo de la propia emisora, no debes considerarlo anuncio. En tu "
    "respuesta debes devolver únicamente un JSON que pueda parsear indicando "
    "si la mayor parte de esa transcripción corresponde a un anuncio o no. "
    "El formato de salida debe ser el siguiente en JSON: "
    "'{\"advertisement\": \"yes/no\"}'. No devuelvas un bloque de código del "
    "tipo \"```json{\"advertisement\":\"yes\"/\"no\"}```\". Solo el "
    "diccionario. Transcripción proporcionada:{transcription}"
)
LLM_MAX_RETRIES = 2

_ERROR_EXCEPTIONS: dict[str, type[RaddetError]] = {
    "backend_unavailable": BackendUnavailable,
    "bad_request": ArgumentError,
    "partial_batch": PartialBatch,
    "timeout": Timeout,
    "training_diverged": TrainingDiverged,
}


def build_llm_prompt(transcription: str) -> tuple[str, str]:
    """System and user messages for one window's transcription."""
    return LLM_SYSTEM_PROMPT, LLM_USER_PROMPT.replace("{transcription}", transcription)


def parse_llm_verdict(text: str) -> Label:
    """Strictly parse the contracted ``{"advertisement": "yes"|"no"}`` reply.

    Anything else (code fences, prose, extra keys) raises ProtocolError so
    the caller can retry and eventually fall back.
    """
    try:
        decoded = json.loads(text.strip())
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"LLM reply is not JSON: {exc}") from exc
    if not isinstance(decoded, dict) or set(decoded) != {"advertisement"}:
        raise ProtocolError("LLM reply must be exactly {\"advertisement\": ...}")
    verdict = decoded["advertisement"]
    if verdict == "yes":
        return Label.AD
    if verdict == "no":
        return Label.NO_AD
    raise ProtocolError(f"LLM verdict must be 'yes' or 'no', got {verdict!r}")


class StdioTransport:
    """Spawn the backend command and exchange JSON lines on its stdio."""

    def __init__(self, command: str):
        argv = shlex.split(command)
        if not argv:
            raise ArgumentError("backend command is empty")
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendUnavailable(f"cannot spawn backend: {exc}") from exc
        self._responses: Queue = Queue()
        self._eof = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        try:
            for line in self._proc.stdout:
                line = line.strip()
                if not line:
                    continue
                try:
                    self._responses.put(json.loads(line))
                except json.JSONDecodeError:
                    self._responses.put({"__undecodable__": line})
        finally:
            self._eof.set()

    def request(self, message: dict, timeout_s: float) -> dict:
        if self._proc.poll() is not None:
            raise BackendUnavailable(
                f"backend exited with status {self._proc.returncode}"
            )
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendUnavailable(f"backend pipe closed: {exc}") from exc
        deadline = time.monotonic() + timeout_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise Timeout(
                    f"no response to request {message['id']} within {timeout_s:.1f}s"
                )
            try:
                # Short poll so a dying backend surfaces as unavailable
                # instead of burning the whole deadline.
                response = self._responses.get(timeout=min(0.1, remaining))
                break
            except Empty:
                if self._eof.is_set() and self._responses.empty():
                    raise BackendUnavailable(
                        f"backend closed its output (exit status {self._proc.poll()})"
                    ) from None
        if "__undecodable__" in response:
            raise ProtocolError(f"backend wrote non-JSON: {response['__undecodable__']!r}")
        return response

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class HttpTransport:
    """POST each request body to a single endpoint."""

    def __init__(self, endpoint: str):
        self._endpoint = endpoint
        self._client = httpx.Client()

    def request(self, message: dict, timeout_s: float) -> dict:
        try:
            response = self._client.post(
                self._endpoint, json=message, timeout=timeout_s
            )
        except httpx.TimeoutException as exc:
            raise Timeout(f"request {message['id']} timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise ProtocolError(f"endpoint returned HTTP {response.status_code}")
        try:
            return response.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"endpoint wrote non-JSON: {exc}") from exc

    def close(self) -> None:
        self._client.close()


class InProcessTransport:
    """Call a handler directly; used by unit tests and tight loops."""

    def __init__(self, handler: Callable[[dict], dict]):
        self._handler = handler

    def request(self, message: dict, timeout_s: float) -> dict:
        return self._handler(message)

    def close(self) -> None:
        pass


def open_transport(descriptor: BackendDescriptor):
    if descriptor.transport is Transport.SUBPROCESS_STDIO:
        return StdioTransport(descriptor.endpoint_or_command)
    return HttpTransport(descriptor.endpoint_or_command)


@dataclass(frozen=True)
class TrainResult:
    model_ref: str
    epoch_val_f1: tuple[float, ...]

    @property
    def best_epoch(self) -> int:
        """1-based epoch whose checkpoint the model_ref points at."""
        return max(range(len(self.epoch_val_f1)), key=self.epoch_val_f1.__getitem__) + 1


class BackendClient:
    """Typed operations over one backend connection."""

    def __init__(
        self,
        descriptor: BackendDescriptor,
        transport=None,
        base_timeout_s: float = DEFAULT_TIMEOUT_S,
    ):
        self.descriptor = descriptor
        self._transport = transport if transport is not None else open_transport(descriptor)
        self._base_timeout_s = base_timeout_s
        self._next_id = 1
        self._lock = threading.Lock()

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "BackendClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _call(self, op: str, payload: dict, timeout_s: float | None = None) -> dict:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
        message = make_request(request_id, op, payload)
        response = self._transport.request(
            message, timeout_s if timeout_s is not None else self._base_timeout_s
        )
        if not isinstance(response, dict):
            raise ProtocolError("response must be a JSON object")
        if response.get("id") != request_id:
            raise ProtocolError(
                f"response id {response.get('id')} does not match request {request_id}"
            )
        if "error" in response:
            code, text = parse_error(response)
            raise _ERROR_EXCEPTIONS.get(code, ProtocolError)(f"{code}: {text}")
        mode = payload.get("mode") if op == "transcribe" else None
        return validate_response(op, response, mode=mode)

    def transcribe(
        self,
        audio_ref: str,
        mode: TranscribeMode,
        offset_ms: int,
        duration_ms: int | None = None,
    ) -> list[TranscriptSegment] | str:
        """Transcribe one chunk (returns text) or parent segment (segments).

        Long-form segment times are absolute to the recording; responses
        with unsorted or overlapping timestamps are rejected, since every
        downstream consumer depends on that contract.
        """
        if self.descriptor.kind is not BackendKind.TRANSCRIBER:
            raise ArgumentError(f"{self.descriptor.kind.value} backend cannot transcribe")
        assert self.descriptor.model_size is not None
        timeout_s = self._base_timeout_s
        if duration_ms is not None:
            timeout_s = max(timeout_s, REALTIME_TIMEOUT_FACTOR * duration_ms / 1000.0)
        payload = {
            "audio_path": audio_ref,
            "mode": mode.value,
            "model_size": self.descriptor.model_size.value,
            "offset_ms": offset_ms,
        }
        result = self._call("transcribe", payload, timeout_s)
        if mode is TranscribeMode.CHUNK:
            return result["text"]
        segments = [
            TranscriptSegment(seg["start_ms"], seg["end_ms"], seg["text"])
            for seg in result["segments"]
        ]
        try:
            validate_segments(segments)
        except RaddetError as exc:
            raise ProtocolError(f"backend returned invalid segments: {exc}") from exc
        return segments

    def classify(
        self,
        model_ref: str,
        texts: Sequence[str],
        first_index: int = 0,
        recording_id: str | None = None,
        batch_size: int = DEFAULT_CLASSIFY_BATCH,
    ) -> list[Prediction]:
        """Classify window texts in order; one prediction per text.

        Requests are cut into wire batches of ``batch_size``; results are
        batch-size invariant for well-behaved backends. ``recording_id``
        rides along as optional context so window-aware backends (the
        ground-truth oracle) can locate each batch.
        """
        if self.descriptor.kind is not BackendKind.CLASSIFIER:
            raise ArgumentError(f"{self.descriptor.kind.value} backend cannot classify")
        if batch_size <= 0:
            batch_size = len(texts) or 1
        predictions: list[Prediction] = []
        for offset in range(0, len(texts), batch_size):
            batch = list(texts[offset : offset + batch_size])
            payload: dict[str, Any] = {"model_ref": model_ref, "texts": batch}
            if recording_id is not None:
                payload["context"] = {
                    "recording_id": recording_id,
                    "base_index": first_index + offset,
                }
            result = self._call("classify", payload)
            labels = result["labels"]
            if len(labels) != len(batch):
                raise PartialBatch(
                    f"sent {len(batch)} texts, got {len(labels)} labels"
                )
            scores = result.get("scores")
            for i, raw in enumerate(labels):
                predictions.append(
                    Prediction(
                        window_index=first_index + offset + i,
                        label=Label.from_wire(raw),
                        score=None if scores is None else float(scores[i]),
                    )
                )
        return predictions

    def train(
        self,
        train_path: str,
        val_path: str,
        config: ClassifierTrainingConfig | None = None,
    ) -> TrainResult:
        """Train on emitted datasets; the ref names the best-validation checkpoint."""
        if self.descriptor.kind is not BackendKind.CLASSIFIER:
            raise ArgumentError(f"{self.descriptor.kind.value} backend cannot train")
        config = config or ClassifierTrainingConfig()
        payload = {
            "train_path": train_path,
            "val_path": val_path,
            "config": config.to_payload(),
        }
        result = self._call("train", payload, timeout_s=max(self._base_timeout_s, 3600))
        return TrainResult(
            model_ref=result["model_ref"],
            epoch_val_f1=tuple(float(v) for v in result["epoch_val_f1"]),
        )

    def llm_classify(self, transcription: str, window_index: int = 0) -> Prediction:
        """One LLM judgement with strict parsing, retries, and fallback.

        Refusals return the fallback label immediately with REFUSED;
        malformed replies are retried up to two times before the fallback
        label with MALFORMED_RESPONSE.
        """
        if self.descriptor.kind is not BackendKind.LLM_JUDGE:
            raise ArgumentError(f"{self.descriptor.kind.value} backend is not an LLM judge")
        system, user = build_llm_prompt(transcription)
        payload = {"system": system, "user": user}
        for _ in range(1 + LLM_MAX_RETRIES):
            result = self._call("llm_classify", payload)
            if result.get("refusal"):
                return Prediction(
                    window_index,
                    Label.NO_AD,
                    flags=frozenset({PredictionFlag.REFUSED}),
                )
            try:
                label = parse_llm_verdict(result["text"])
            except ProtocolError:
                continue
            return Prediction(window_index, label)
        return Prediction(
            window_index,
            Label.NO_AD,
            flags=frozenset({PredictionFlag.MALFORMED_RESPONSE}),
        )
