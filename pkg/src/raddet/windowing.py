"""Window partitions of a recording and segmentation plans.

Two techniques feed text into windows:

* exact: the audio is cut into window-length chunks and each chunk is
  transcribed on its own, so a window's text covers exactly its time span.
* non-exact: 10-minute parent segments are transcribed long-form and the
  timestamped transcript segments are assigned to windows afterwards.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum

from .errors import ArgumentError, RangeError, SegmentOrderError

#: Parent transcription batch length, fixed at 10 minutes for both
#: techniques: short enough to keep long-form transcription quality, long
#: enough to amortize model overhead.
PARENT_SEGMENT_S = 600


class Segmentation(Enum):
    EXACT = "exact"
    NON_EXACT = "non_exact"

    @classmethod
    def from_wire(cls, value: str) -> "Segmentation":
        normalized = value.strip().lower().replace("-", "_")
        for member in cls:
            if member.value == normalized:
                return member
        raise ArgumentError(f"unknown segmentation {value!r}")


@dataclass(frozen=True)
class Window:
    index: int
    start_ms: int
    end_ms: int

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class WindowGrid:
    """Non-overlapping, gap-free partition of ``[0, duration)``.

    All windows are ``window_len_s`` long except possibly the last, which
    holds the tail remainder (shorter but nonempty) so no audio is dropped.
    """

    window_len_s: int
    duration_ms: int
    windows: tuple[Window, ...]

    def __len__(self) -> int:
        return len(self.windows)

    def window_at(self, t_ms: int) -> Window:
        """The window containing time ``t_ms``."""
        if not 0 <= t_ms < self.duration_ms:
            raise RangeError(f"time {t_ms} outside [0, {self.duration_ms})")
        return self.windows[min(t_ms // (self.window_len_s * 1000), len(self.windows) - 1)]


@dataclass(frozen=True)
class TranscriptSegment:
    """Timestamped ASR output, times relative to the recording start."""

    start_ms: int
    end_ms: int
    text: str

    def __post_init__(self):
        if self.start_ms >= self.end_ms:
            raise SegmentOrderError(
                f"segment [{self.start_ms}, {self.end_ms}) is empty or inverted"
            )

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class ChunkRequest:
    """One audio slice to transcribe under the exact technique."""

    recording_id: str
    window_index: int
    start_ms: int
    end_ms: int


def build_grid(duration_ms: int, window_len_s: int) -> WindowGrid:
    """Partition ``[0, duration_ms)`` into ``window_len_s``-second windows.

    The window count is ``ceil(duration / window_len)``; a non-aligned
    duration yields a short tail window rather than a remainder.
    """
    if duration_ms <= 0:
        raise ArgumentError(f"duration must be positive, got {duration_ms}")
    if window_len_s <= 0:
        raise ArgumentError(f"window length must be positive, got {window_len_s}")
    step = window_len_s * 1000
    windows = []
    index = 0
    for start in range(0, duration_ms, step):
        windows.append(Window(index, start, min(start + step, duration_ms)))
        index += 1
    return WindowGrid(window_len_s, duration_ms, tuple(windows))


def plan_exact_chunks(grid: WindowGrid, recording_id: str = "") -> list[ChunkRequest]:
    """One audio-chunk request per window, aligned to window boundaries.

    Ten-minute parent segments are only the transcription batching unit;
    chunks are always cut at the true window boundaries, so the requests
    concatenate back to ``[0, duration)`` with no overlap.
    """
    return [
        ChunkRequest(recording_id, w.index, w.start_ms, w.end_ms)
        for w in grid.windows
    ]


def plan_parent_segments(duration_ms: int) -> list[tuple[int, int]]:
    """10-minute parent ranges for long-form (non-exact) transcription."""
    if duration_ms <= 0:
        raise ArgumentError(f"duration must be positive, got {duration_ms}")
    step = PARENT_SEGMENT_S * 1000
    return [
        (start, min(start + step, duration_ms))
        for start in range(0, duration_ms, step)
    ]


def validate_segments(
    segments: list[TranscriptSegment], duration_ms: int | None = None
) -> None:
    """Check the sorted / non-overlapping / in-range segment contract."""
    for prev, cur in zip(segments, segments[1:]):
        if cur.start_ms < prev.end_ms:
            raise SegmentOrderError(
                f"segment at {cur.start_ms} overlaps or precedes "
                f"segment ending at {prev.end_ms}"
            )
    if duration_ms is not None and segments:
        if segments[0].start_ms < 0 or segments[-1].end_ms > duration_ms:
            raise RangeError(
                f"segments span [{segments[0].start_ms}, {segments[-1].end_ms}) "
                f"outside [0, {duration_ms})"
            )


def assign_to_windows(
    grid: WindowGrid, segments: list[TranscriptSegment]
) -> dict[int, list[TranscriptSegment]]:
    """Assign each transcript segment to the window it overlaps most.

    Whole segments move as a unit (word-level timestamps are not
    available) and ties break toward the earlier window. The map covers
    every window; unassigned windows get an empty list.
    """
    validate_segments(segments, grid.duration_ms)

    starts = [w.start_ms for w in grid.windows]
    assigned: dict[int, list[TranscriptSegment]] = {w.index: [] for w in grid.windows}
    for segment in segments:
        first = max(0, bisect_right(starts, segment.start_ms) - 1)
        best_index = first
        best_overlap = 0
        for window in grid.windows[first:]:
            if window.start_ms >= segment.end_ms:
                break
            overlap = min(window.end_ms, segment.end_ms) - max(
                window.start_ms, segment.start_ms
            )
            if overlap > best_overlap:
                best_overlap = overlap
                best_index = window.index
        assigned[best_index].append(segment)
    return assigned


def assign_segments(
    grid: WindowGrid, segments: list[TranscriptSegment]
) -> dict[int, str]:
    """Per-window text: whitespace-joined assigned segments in time order."""
    return {
        index: " ".join(s.text for s in segs)
        for index, segs in assign_to_windows(grid, segments).items()
    }


def assignment_intervals(
    grid: WindowGrid, segments: list[TranscriptSegment]
) -> dict[int, list[tuple[int, int]]]:
    """Per-window time intervals actually covered by the assigned segments.

    This is the non-exact counterpart of a window's span: the classifier
    only ever sees text for these intervals, so the theoretical ceiling is
    computed against them.
    """
    return {
        index: [(s.start_ms, s.end_ms) for s in segs]
        for index, segs in assign_to_windows(grid, segments).items()
    }
