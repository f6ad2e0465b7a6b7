"""Deterministic mock and oracle backends.

These run the same handler logic in-process (unit tests) or behind the
stdio/HTTP transports via ``python -m raddet.mock_backend`` (integration
and acceptance runs). Every handler is a pure function of its
configuration, the request, and the referenced files, so equal seeds
yield byte-identical responses.

The "audio" a mock transcriber reads is an utterance script: JSONL rows
``{"start_ms", "end_ms", "text"}`` sorted and non-overlapping, standing
in for what a perfect ASR would hear. Audio references may carry a range
fragment (``path#start-end`` in milliseconds) selecting a chunk or
parent segment without materializing slice files.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_right
from pathlib import Path

from .cache import TranscriptionCache, recording_digest
from .errors import RaddetError
from .evaluation import oracle_window_labels
from .protocol import (
    ClassifierTrainingConfig,
    ModelSize,
    make_error_response,
    make_response,
    validate_request,
)
from .timeline import Label, Timeline, load_annotation_file
from .windowing import Segmentation, TranscriptSegment, build_grid

#: Token planted in synthetic ad copy; the keyword mocks key on it.
AD_SENTINEL = "superoferta"


def parse_audio_ref(ref: str) -> tuple[Path, int | None, int | None]:
    """Split ``path#start-end`` into path and millisecond range."""
    if "#" not in ref:
        return Path(ref), None, None
    path, _, fragment = ref.rpartition("#")
    start_text, _, end_text = fragment.partition("-")
    try:
        return Path(path), int(start_text), int(end_text)
    except ValueError as exc:
        raise RaddetError(f"bad audio range fragment {fragment!r}") from exc


def load_script(path: Path) -> list[TranscriptSegment]:
    utterances = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            row = json.loads(line)
            utterances.append(
                TranscriptSegment(row["start_ms"], row["end_ms"], row["text"])
            )
    return utterances


def _stable_jitter_ms(seed: int, key: str, spread_ms: int) -> int:
    """Deterministic pseudo-jitter in [-spread, +spread]; hashlib, not
    hash(), so it survives process boundaries."""
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:4], "big") % (2 * spread_ms + 1) - spread_ms


class MockHandler:
    """Shared request plumbing: validation, dispatch, error mapping."""

    def handle(self, request: dict) -> dict:
        request_id = request.get("id") if isinstance(request, dict) else None
        if not isinstance(request_id, int):
            return make_error_response(-1, "bad_request", "request has no integer id")
        try:
            validate_request(request)
        except RaddetError as exc:
            return make_error_response(request_id, "bad_request", str(exc))
        op = request["op"]
        method = getattr(self, f"op_{op}", None)
        if method is None:
            return make_error_response(
                request_id, "bad_request", f"backend does not serve op {op!r}"
            )
        try:
            return make_response(request_id, method(request["payload"]))
        except _HandlerError as exc:
            return make_error_response(request_id, exc.code, str(exc))
        except RaddetError as exc:
            return make_error_response(request_id, "bad_request", str(exc))
        except Exception as exc:  # defensive: never a silent malformed reply
            return make_error_response(request_id, "internal", repr(exc))


class _HandlerError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class ScriptTranscriber(MockHandler):
    """Transcriber over utterance scripts with size-dependent segmenting.

    Chunk text depends only on the requested range (word midpoints via
    linear interpolation inside each utterance), so the exact technique is
    identical across sizes and seeds. Long-form output groups utterances
    into coarser ASR-like segments whose granularity varies with model
    size and seed, which is what makes non-exact results transcriber
    dependent.
    """

    #: Target long-form segment length by model size (ms). Sentence-ish
    #: granularity, coarser for smaller models.
    GROUP_TARGET_MS = {
        ModelSize.SMALL: 12_000,
        ModelSize.MEDIUM: 8_000,
        ModelSize.LARGE: 5_000,
    }

    def __init__(self, model_size: ModelSize, seed: int = 0):
        self.model_size = model_size
        self.seed = seed
        self._scripts: dict[Path, tuple[list[TranscriptSegment], list[int]]] = {}

    def _script(self, path: Path) -> tuple[list[TranscriptSegment], list[int]]:
        """Utterances plus their sorted end times, for range lookups."""
        if path not in self._scripts:
            if not path.exists():
                raise _HandlerError("bad_request", f"no such audio script: {path}")
            utterances = load_script(path)
            self._scripts[path] = (utterances, [u.end_ms for u in utterances])
        return self._scripts[path]

    @staticmethod
    def _overlapping(
        script: tuple[list[TranscriptSegment], list[int]], start: int, end: int
    ) -> list[TranscriptSegment]:
        utterances, ends = script
        lo = bisect_right(ends, start)  # first utterance ending after start
        out = []
        for utterance in utterances[lo:]:
            if utterance.start_ms >= end:
                break
            out.append(utterance)
        return out

    def _range(self, payload: dict) -> tuple[Path, int, int | None]:
        path, start, end = parse_audio_ref(payload["audio_path"])
        if start is None:
            start = payload["offset_ms"]
        return path, start, end

    def op_transcribe(self, payload: dict) -> dict:
        requested_size = ModelSize.from_wire(payload["model_size"])
        if requested_size is not self.model_size:
            raise _HandlerError(
                "bad_request",
                f"this backend serves {self.model_size.value}, "
                f"request asked for {requested_size.value}",
            )
        path, start, end = self._range(payload)
        script = self._script(path)
        if end is None:
            end = max(script[1][-1] if script[1] else start, start)
        overlapping = self._overlapping(script, start, end)
        if payload["mode"] == "chunk":
            return {"text": self._chunk_text(overlapping, start, end)}
        return {"segments": self._long_form(overlapping, start, end, path.name)}

    @staticmethod
    def _chunk_text(overlapping: list[TranscriptSegment], start: int, end: int) -> str:
        words: list[str] = []
        for utterance in overlapping:
            tokens = utterance.text.split()
            if not tokens:
                continue
            step = utterance.duration_ms / len(tokens)
            for i, token in enumerate(tokens):
                midpoint = utterance.start_ms + (i + 0.5) * step
                if start <= midpoint < end:
                    words.append(token)
        return " ".join(words)

    def _long_form(
        self, overlapping: list[TranscriptSegment], start: int, end: int, key: str
    ) -> list[dict]:
        clipped = [
            TranscriptSegment(
                max(utterance.start_ms, start),
                min(utterance.end_ms, end),
                utterance.text,
            )
            for utterance in overlapping
        ]
        target = self.GROUP_TARGET_MS[self.model_size]
        segments: list[dict] = []
        group: list[TranscriptSegment] = []
        for utterance in clipped:
            if group:
                span = utterance.end_ms - group[0].start_ms
                gap = utterance.start_ms - group[-1].end_ms
                limit = target + _stable_jitter_ms(
                    self.seed, f"{key}:{group[0].start_ms}", 2_000
                )
                if span > limit or gap > 4_000:
                    segments.append(self._emit(group))
                    group = []
            group.append(utterance)
        if group:
            segments.append(self._emit(group))
        return segments

    @staticmethod
    def _emit(group: list[TranscriptSegment]) -> dict:
        return {
            "start_ms": group[0].start_ms,
            "end_ms": group[-1].end_ms,
            "text": " ".join(u.text for u in group),
        }


class OracleClassifier(MockHandler):
    """Predicts each window's majority ground-truth label.

    Configured with the corpus annotations and one transcription
    configuration; realizes the theoretical ceiling by construction. For
    the non-exact technique it reads the cached transcript segments to
    reproduce the window assignment the pipeline used.
    """

    def __init__(
        self,
        corpus: dict[str, tuple[Timeline, Path]],
        window_len_s: int,
        segmentation: Segmentation,
        model_size: ModelSize,
        cache_root: Path | None = None,
    ):
        self.corpus = corpus
        self.window_len_s = window_len_s
        self.segmentation = segmentation
        self.model_size = model_size
        self.cache = TranscriptionCache(cache_root) if cache_root else None
        self._labels: dict[str, dict[int, Label]] = {}

    def _window_labels(self, recording_id: str) -> dict[int, Label]:
        if recording_id in self._labels:
            return self._labels[recording_id]
        if recording_id not in self.corpus:
            raise _HandlerError("bad_request", f"unknown recording {recording_id!r}")
        timeline, audio_path = self.corpus[recording_id]
        grid = build_grid(timeline.duration_ms, self.window_len_s)
        segments = None
        if self.segmentation is Segmentation.NON_EXACT:
            if self.cache is None:
                raise _HandlerError(
                    "bad_request", "non-exact oracle needs a transcription cache"
                )
            entry = self.cache.load(
                recording_digest(audio_path),
                self.segmentation,
                self.window_len_s,
                self.model_size,
            )
            if entry is None:
                raise _HandlerError(
                    "bad_request",
                    f"no cached non-exact transcription for {recording_id!r}",
                )
            segments = list(entry.segments)
        labels = oracle_window_labels(timeline, grid, segments)
        self._labels[recording_id] = labels
        return labels

    def op_train(self, payload: dict) -> dict:
        epochs = ClassifierTrainingConfig.from_payload(payload["config"]).epochs
        return {"model_ref": "oracle", "epoch_val_f1": [100.0] * epochs}

    def op_classify(self, payload: dict) -> dict:
        context = payload.get("context")
        if context is None:
            raise _HandlerError(
                "bad_request", "oracle classifier requires window context"
            )
        labels = self._window_labels(context["recording_id"])
        base = context["base_index"]
        out = []
        for i in range(len(payload["texts"])):
            label = labels.get(base + i)
            if label is None:
                raise _HandlerError(
                    "bad_request", f"window {base + i} outside recording grid"
                )
            out.append(label.value)
        return {"labels": out, "scores": None}


def _read_dataset_rows(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _sample_f1(rows: list[dict], predict) -> float:
    tp = fp = fn = tn = 0
    for row in rows:
        truth_ad = row["label"] == Label.AD.value
        predicted_ad = predict(row["text"]) == Label.AD.value
        if truth_ad and predicted_ad:
            tp += 1
        elif truth_ad:
            fn += 1
        elif predicted_ad:
            fp += 1
        else:
            tn += 1

    def f1(a, b, c):
        denominator = 2 * a + b + c
        return 1.0 if denominator == 0 else 2 * a / denominator

    return 100.0 * (f1(tp, fp, fn) + f1(tn, fn, fp)) / 2.0


class KeywordClassifier(MockHandler):
    """Predicts AD iff the sentinel token appears in the text."""

    def __init__(self, sentinel: str = AD_SENTINEL):
        self.sentinel = sentinel

    def _predict(self, text: str) -> str:
        return Label.AD.value if self.sentinel in text else Label.NO_AD.value

    def op_train(self, payload: dict) -> dict:
        rows = _read_dataset_rows(payload["val_path"])
        if not rows:
            raise _HandlerError("training_diverged", "empty validation set")
        score = _sample_f1(rows, self._predict)
        epochs = ClassifierTrainingConfig.from_payload(payload["config"]).epochs
        return {"model_ref": f"keyword:{self.sentinel}", "epoch_val_f1": [score] * epochs}

    def op_classify(self, payload: dict) -> dict:
        labels = [self._predict(text) for text in payload["texts"]]
        scores = [1.0 if label == Label.AD.value else 0.0 for label in labels]
        return {"labels": labels, "scores": scores}


class ConstantClassifier(MockHandler):
    def __init__(self, label: Label = Label.NO_AD):
        self.label = label

    def op_train(self, payload: dict) -> dict:
        epochs = ClassifierTrainingConfig.from_payload(payload["config"]).epochs
        return {"model_ref": f"constant:{self.label.value}", "epoch_val_f1": [0.0] * epochs}

    def op_classify(self, payload: dict) -> dict:
        return {"labels": [self.label.value] * len(payload["texts"]), "scores": None}


class MemorizingClassifier(MockHandler):
    """Trainer that memorizes the text→label table of its training set."""

    def __init__(self, models_root: Path):
        self.models_root = Path(models_root)
        self._loaded: dict[str, dict[str, str]] = {}

    def op_train(self, payload: dict) -> dict:
        rows = _read_dataset_rows(payload["train_path"])
        if not rows:
            raise _HandlerError("training_diverged", "empty training set")
        table: dict[str, str] = {}
        for row in rows:
            table.setdefault(row["text"], row["label"])
        val_rows = _read_dataset_rows(payload["val_path"])
        score = _sample_f1(
            val_rows, lambda text: table.get(text, Label.NO_AD.value)
        ) if val_rows else 0.0
        config = ClassifierTrainingConfig.from_payload(payload["config"])
        digest = hashlib.sha256(
            json.dumps(table, sort_keys=True).encode()
        ).hexdigest()[:16]
        self.models_root.mkdir(parents=True, exist_ok=True)
        model_path = self.models_root / f"memorized-{digest}.json"
        model_path.write_text(json.dumps(table, sort_keys=True), encoding="utf-8")
        # A memorizer saturates after the first pass; every epoch ties, so
        # the best checkpoint is epoch 1.
        return {"model_ref": str(model_path), "epoch_val_f1": [score] * config.epochs}

    def _table(self, model_ref: str) -> dict[str, str]:
        if model_ref not in self._loaded:
            path = Path(model_ref)
            if not path.exists():
                raise _HandlerError("bad_request", f"no such model: {model_ref}")
            self._loaded[model_ref] = json.loads(path.read_text(encoding="utf-8"))
        return self._loaded[model_ref]

    def op_classify(self, payload: dict) -> dict:
        table = self._table(payload["model_ref"])
        labels = [table.get(text, Label.NO_AD.value) for text in payload["texts"]]
        return {"labels": labels, "scores": None}


class ScriptedTrainer(MockHandler):
    """Returns a fixed validation curve; the ref names the best epoch."""

    def __init__(self, val_curve: list[float]):
        if not val_curve:
            raise RaddetError("scripted trainer needs a nonempty curve")
        self.val_curve = list(val_curve)

    def op_train(self, payload: dict) -> dict:
        best = max(range(len(self.val_curve)), key=self.val_curve.__getitem__) + 1
        return {"model_ref": f"scripted-epoch-{best}", "epoch_val_f1": self.val_curve}

    def op_classify(self, payload: dict) -> dict:
        return {"labels": [Label.NO_AD.value] * len(payload["texts"]), "scores": None}


class ScriptedLlm(MockHandler):
    """Replays a fixed list of raw LLM replies, then repeats the last."""

    def __init__(self, replies: list[dict]):
        if not replies:
            raise RaddetError("scripted LLM needs at least one reply")
        self.replies = replies
        self._cursor = 0

    def op_llm_classify(self, payload: dict) -> dict:
        reply = self.replies[min(self._cursor, len(self.replies) - 1)]
        self._cursor += 1
        out: dict = {"text": reply.get("text", "")}
        if reply.get("refusal"):
            out["refusal"] = True
        return out


class KeywordLlm(MockHandler):
    """Answers the contract JSON based on the sentinel token.

    Parses the transcription back out of the user prompt, so it exercises
    the exact prompt plumbing a real endpoint would see.
    """

    PROMPT_MARKER = "Transcripción proporcionada:"

    def __init__(self, sentinel: str = AD_SENTINEL):
        self.sentinel = sentinel

    def op_llm_classify(self, payload: dict) -> dict:
        user = payload["user"]
        marker = user.rfind(self.PROMPT_MARKER)
        transcription = user[marker + len(self.PROMPT_MARKER):] if marker >= 0 else user
        verdict = "yes" if self.sentinel in transcription else "no"
        return {"text": json.dumps({"advertisement": verdict})}
