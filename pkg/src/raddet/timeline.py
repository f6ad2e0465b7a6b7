"""Ground-truth annotation timelines and the interval-overlap algebra.

A recording's annotation is a gap-free, non-overlapping sequence of ad /
no-ad spans over ``[0, duration)``. All times are integer milliseconds and
every persisted boundary sits on the 100 ms annotation grid; boundary
rounding uses round-half-to-even so systematic bias cannot accumulate.
"""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import CoverageError, LabelError, RangeError, SchemaError

#: Annotation precision in milliseconds. Every persisted boundary is a
#: multiple of this tick.
TICK_MS = 100

#: Alias kept for readability: times are plain integer milliseconds.
TimePoint = int


class Label(Enum):
    """The two mutually exclusive annotation categories."""

    AD = "ad"
    NO_AD = "no-ad"

    @classmethod
    def from_wire(cls, value: str) -> "Label":
        for member in cls:
            if member.value == value:
                return member
        raise LabelError(f"unknown label {value!r} (expected 'ad' or 'no-ad')")


class Theme(Enum):
    """Station programming theme used for split stratification."""

    MUSIC = "music"
    TALK_SHOW = "talk_show"

    @classmethod
    def from_wire(cls, value: str) -> "Theme":
        for member in cls:
            if member.value == value:
                return member
        raise SchemaError(f"unknown theme {value!r} (expected 'music' or 'talk_show')")


def snap_to_tick(value_ms: int | float) -> int:
    """Round a raw time to the nearest 100 ms tick, half-to-even.

    Integer inputs use exact integer arithmetic; floats go through Decimal so
    representation noise cannot flip a half-way case.
    """
    if isinstance(value_ms, bool):
        raise SchemaError("time values must be numbers, not booleans")
    if isinstance(value_ms, int):
        q, r = divmod(value_ms, TICK_MS)
        if r > TICK_MS // 2:
            q += 1
        elif r == TICK_MS // 2 and q % 2 == 1:
            q += 1
        return q * TICK_MS
    if isinstance(value_ms, float):
        ticks = (Decimal(repr(value_ms)) / TICK_MS).quantize(
            Decimal(1), rounding=ROUND_HALF_EVEN
        )
        return int(ticks) * TICK_MS
    raise SchemaError(f"time values must be numbers, got {type(value_ms).__name__}")


@dataclass(frozen=True)
class LabelSpan:
    """One annotated interval ``[start_ms, end_ms)``.

    ``jingle`` marks station self-promotion spans that the duration
    analytics skip; it never affects tagging or evaluation.
    """

    start_ms: int
    end_ms: int
    label: Label
    confidence: float = 1.0
    jingle: bool = False

    def __post_init__(self):
        if self.start_ms < 0:
            raise SchemaError(f"span start {self.start_ms} is negative")
        if self.start_ms >= self.end_ms:
            raise CoverageError(
                f"span [{self.start_ms}, {self.end_ms}) is empty or inverted",
                boundary_ms=self.start_ms,
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class Timeline:
    """A station recording's fully-covering ground-truth annotation.

    Invariants enforced on construction: spans sorted by start, pairwise
    non-overlapping, and their union covers ``[0, duration_ms)`` exactly.
    Adjacent spans may share a label because annotators segment distinct
    ads separately; :meth:`merged_spans` offers the normalized view.
    Instances are immutable and safe to share across threads.
    """

    station_id: str
    recorded_at: datetime
    theme: Theme
    duration_ms: int
    spans: tuple[LabelSpan, ...]
    _starts: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.station_id:
            raise SchemaError("station_id must be a nonempty string")
        if self.recorded_at.tzinfo is None:
            object.__setattr__(
                self, "recorded_at", self.recorded_at.replace(tzinfo=timezone.utc)
            )
        if self.duration_ms <= 0:
            raise SchemaError(f"duration {self.duration_ms} must be positive")
        spans = tuple(self.spans)
        object.__setattr__(self, "spans", spans)
        if not spans:
            raise CoverageError("timeline has no spans", boundary_ms=0)
        if spans[0].start_ms != 0:
            raise CoverageError(
                f"first span starts at {spans[0].start_ms}, not 0",
                boundary_ms=spans[0].start_ms,
            )
        for prev, cur in zip(spans, spans[1:]):
            if cur.start_ms != prev.end_ms:
                kind = "gap" if cur.start_ms > prev.end_ms else "overlap"
                raise CoverageError(
                    f"{kind} at {prev.end_ms} ms (next span starts at {cur.start_ms})",
                    boundary_ms=prev.end_ms,
                )
        if spans[-1].end_ms != self.duration_ms:
            raise CoverageError(
                f"last span ends at {spans[-1].end_ms}, duration is {self.duration_ms}",
                boundary_ms=spans[-1].end_ms,
            )
        object.__setattr__(self, "_starts", tuple(s.start_ms for s in spans))

    @property
    def recording_id(self) -> str:
        """Stable identifier derived from station and start time."""
        return f"{self.station_id}_{self.recorded_at.strftime('%Y%m%dT%H%M%S')}"

    def label_ms(self, label: Label) -> int:
        """Total milliseconds carrying ``label`` over the whole recording."""
        return sum(s.duration_ms for s in self.spans if s.label is label)

    def merged_spans(self) -> tuple[LabelSpan, ...]:
        """Normalized view with adjacent same-label spans merged.

        Confidence of a merged span is the minimum of its parts; jingle
        markers are dropped (they only matter for per-ad analytics).
        """
        merged: list[LabelSpan] = []
        for span in self.spans:
            if merged and merged[-1].label is span.label:
                last = merged[-1]
                merged[-1] = LabelSpan(
                    last.start_ms,
                    span.end_ms,
                    span.label,
                    confidence=min(last.confidence, span.confidence),
                )
            else:
                merged.append(
                    LabelSpan(span.start_ms, span.end_ms, span.label, span.confidence)
                )
        return tuple(merged)

    def span_at(self, t_ms: int) -> LabelSpan:
        """The span containing time ``t_ms``."""
        if not 0 <= t_ms < self.duration_ms:
            raise RangeError(f"time {t_ms} outside [0, {self.duration_ms})")
        idx = bisect_right(self._starts, t_ms) - 1
        return self.spans[idx]

    def to_document(self) -> dict[str, Any]:
        """Serialize back to the canonical annotation document."""
        doc: dict[str, Any] = {
            "station_id": self.station_id,
            "recorded_at": self.recorded_at.astimezone(timezone.utc).strftime(
                "%Y-%m-%dT%H:%M:%SZ"
            ),
            "theme": self.theme.value,
            "duration_ms": self.duration_ms,
            "spans": [],
        }
        for span in self.spans:
            entry: dict[str, Any] = {
                "start_ms": span.start_ms,
                "end_ms": span.end_ms,
                "label": span.label.value,
                "confidence": span.confidence,
            }
            if span.jingle:
                entry["jingle"] = True
            doc["spans"].append(entry)
        return doc


def _parse_recorded_at(raw: Any) -> datetime:
    if not isinstance(raw, str):
        raise SchemaError("recorded_at must be an ISO-8601 string")
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError as exc:
        raise SchemaError(f"recorded_at {raw!r} is not ISO-8601: {exc}") from exc
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def parse_annotations(document: Mapping[str, Any]) -> Timeline:
    """Build a validated :class:`Timeline` from a canonical annotation document.

    Raw boundary times are snapped to the 100 ms grid (half-to-even) before
    coverage validation, per the annotation precision contract.

    Raises:
        SchemaError: structurally malformed document.
        LabelError: unknown label string.
        CoverageError: gap or overlap survives rounding; names the first
            offending boundary.
    """
    if not isinstance(document, Mapping):
        raise SchemaError("annotation document must be a JSON object")
    required = {"station_id", "recorded_at", "theme", "duration_ms", "spans"}
    missing = required - set(document)
    if missing:
        raise SchemaError(f"missing required keys: {sorted(missing)}")

    station_id = document["station_id"]
    if not isinstance(station_id, str) or not station_id:
        raise SchemaError("station_id must be a nonempty string")
    recorded_at = _parse_recorded_at(document["recorded_at"])
    theme = Theme.from_wire(document["theme"]) if isinstance(
        document["theme"], str
    ) else Theme.from_wire(str(document["theme"]))
    duration_ms = snap_to_tick(document["duration_ms"])

    raw_spans = document["spans"]
    if not isinstance(raw_spans, list) or not raw_spans:
        raise SchemaError("spans must be a nonempty array")

    spans: list[LabelSpan] = []
    for i, raw in enumerate(raw_spans):
        if not isinstance(raw, Mapping):
            raise SchemaError(f"span {i} is not an object")
        for key in ("start_ms", "end_ms", "label"):
            if key not in raw:
                raise SchemaError(f"span {i} missing key {key!r}")
        start = snap_to_tick(raw["start_ms"])
        end = snap_to_tick(raw["end_ms"])
        label = Label.from_wire(raw["label"]) if isinstance(
            raw["label"], str
        ) else Label.from_wire(str(raw["label"]))
        confidence = raw.get("confidence", 1.0)
        if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
            raise SchemaError(f"span {i} confidence must be a number")
        jingle = bool(raw.get("jingle", False))
        if start >= end:
            raise CoverageError(
                f"span {i} collapses to [{start}, {end}) after rounding",
                boundary_ms=start,
            )
        spans.append(LabelSpan(start, end, label, float(confidence), jingle))

    return Timeline(station_id, recorded_at, theme, duration_ms, tuple(spans))


def load_annotation_file(path: str | Path) -> Timeline:
    """Parse one canonical annotation JSON file."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        document = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return parse_annotations(document)


def overlap_ms(
    timeline: Timeline, query_start: int, query_end: int, label: Label
) -> int:
    """Milliseconds of ``label`` inside ``[query_start, query_end)``.

    Exact interval arithmetic; together the two labels always account for
    the full query length (coverage closure).
    """
    if not (0 <= query_start < query_end <= timeline.duration_ms):
        raise RangeError(
            f"query [{query_start}, {query_end}) outside "
            f"[0, {timeline.duration_ms})"
        )
    spans = timeline.spans
    starts = timeline._starts
    lo = bisect_right(starts, query_start) - 1
    hi = bisect_left(starts, query_end)
    total = 0
    for span in spans[lo:hi]:
        if span.label is label:
            total += min(span.end_ms, query_end) - max(span.start_ms, query_start)
    return total


def majority_label(timeline: Timeline, window_start: int, window_end: int) -> Label:
    """Label occupying the majority of ``[window_start, window_end)``.

    Exact ties go to NO_AD, the dominant class, so a tied window never
    counts as an ad.
    """
    ad = overlap_ms(timeline, window_start, window_end, Label.AD)
    return Label.AD if 2 * ad > window_end - window_start else Label.NO_AD


def majority_over_intervals(
    timeline: Timeline, intervals: Iterable[tuple[int, int]]
) -> Label:
    """Majority label over a union of (clamped) intervals.

    Used for the non-exact ceiling, where a window's classifiable content
    is the union of the transcript segments assigned to it rather than the
    window itself. Empty unions default to NO_AD (nothing to classify).
    """
    ad = 0
    total = 0
    for start, end in intervals:
        start = max(0, start)
        end = min(timeline.duration_ms, end)
        if start >= end:
            continue
        ad += overlap_ms(timeline, start, end, Label.AD)
        total += end - start
    if total == 0:
        return Label.NO_AD
    return Label.AD if 2 * ad > total else Label.NO_AD


def slice_timeline(timeline: Timeline, start_ms: int, end_ms: int) -> Timeline:
    """Re-based sub-timeline over ``[start_ms, end_ms)``.

    Used to score a test block as if it were its own recording; the
    wall-clock start shifts accordingly so day-profile analytics stay
    correct. Bounds must sit on the annotation grid.
    """
    if not (0 <= start_ms < end_ms <= timeline.duration_ms):
        raise RangeError(
            f"slice [{start_ms}, {end_ms}) outside [0, {timeline.duration_ms})"
        )
    if start_ms % TICK_MS or end_ms % TICK_MS:
        raise RangeError("slice bounds must be multiples of the 100 ms tick")
    spans = []
    for span in timeline.spans:
        lo = max(span.start_ms, start_ms)
        hi = min(span.end_ms, end_ms)
        if lo < hi:
            spans.append(
                LabelSpan(lo - start_ms, hi - start_ms, span.label, span.confidence, span.jingle)
            )
    return Timeline(
        station_id=timeline.station_id,
        recorded_at=timeline.recorded_at + timedelta(milliseconds=start_ms),
        theme=timeline.theme,
        duration_ms=end_ms - start_ms,
        spans=tuple(spans),
    )


def labelstudio_to_document(task: Mapping[str, Any]) -> dict[str, Any]:
    """Normalize one Label Studio export task into the canonical format.

    Expects the audio-region export shape: region times in seconds under
    ``annotations[*].result[*].value`` with a single label per region, and
    recording metadata (``station_id``, ``recorded_at``, ``theme``,
    optionally ``duration_ms``) under ``data``. Times are converted to raw
    milliseconds; rounding happens in :func:`parse_annotations`.
    """
    if not isinstance(task, Mapping):
        raise SchemaError("Label Studio task must be an object")
    data = task.get("data")
    if not isinstance(data, Mapping):
        raise SchemaError("Label Studio task has no data object")
    annotations = task.get("annotations") or task.get("completions")
    if not annotations:
        raise SchemaError("Label Studio task has no annotations")
    results = annotations[0].get("result", [])

    spans = []
    for item in results:
        value = item.get("value", {})
        if "start" not in value or "end" not in value:
            continue
        labels = value.get("labels") or []
        if len(labels) != 1:
            raise SchemaError(
                f"region at {value['start']} must carry exactly one label"
            )
        span = {
            "start_ms": float(value["start"]) * 1000.0,
            "end_ms": float(value["end"]) * 1000.0,
            "label": str(labels[0]).strip().lower(),
        }
        if "confidence" in value:
            span["confidence"] = value["confidence"]
        if value.get("jingle"):
            span["jingle"] = True
        spans.append(span)
    spans.sort(key=lambda s: s["start_ms"])

    duration_ms = data.get("duration_ms")
    if duration_ms is None:
        duration_ms = max((s["end_ms"] for s in spans), default=0)

    return {
        "station_id": data.get("station_id", ""),
        "recorded_at": data.get("recorded_at", ""),
        "theme": data.get("theme", ""),
        "duration_ms": duration_ms,
        "spans": spans,
    }
