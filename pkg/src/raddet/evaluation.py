"""Time-resolved scoring, theoretical ceilings, and corpus analytics.

Scores are computed at the 100 ms annotation resolution so the achieved
F1-macro and the quantization ceiling are commensurable. All interval
arithmetic is exact integer math; the brute-force tick loop in the test
suite is the oracle it must match tick for tick.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import ArgumentError, MissingPrediction, RangeError
from .protocol import Prediction
from .timeline import (
    TICK_MS,
    Label,
    Timeline,
    majority_label,
    majority_over_intervals,
    overlap_ms,
)
from .windowing import TranscriptSegment, WindowGrid, assignment_intervals

MS_PER_DAY = 24 * 60 * 60 * 1000
COVERAGE_BIN_MS = 30 * 60 * 1000  # 48 bins per day

#: A label step function: contiguous (start_ms, end_ms, label) pieces
#: covering [0, duration) in order.
LabelStep = list[tuple[int, int, Label]]


@dataclass(frozen=True)
class ConfusionCounts:
    """Confusion counts with AD as the positive class.

    Units are whatever the producer counted: resolution ticks for
    time-resolved scoring, window samples for the reference metric.
    """

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ArgumentError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


def quantize_predictions(grid: WindowGrid, predictions: Sequence[Prediction]) -> LabelStep:
    """Spread window predictions into a step function over ``[0, duration)``.

    Requires exactly one prediction per window; adjacent equal labels are
    merged, which preserves total measure.
    """
    by_index: dict[int, Label] = {}
    for prediction in predictions:
        if prediction.window_index in by_index:
            raise ArgumentError(
                f"duplicate prediction for window {prediction.window_index}"
            )
        by_index[prediction.window_index] = prediction.label

    step: LabelStep = []
    for window in grid.windows:
        label = by_index.pop(window.index, None)
        if label is None:
            raise MissingPrediction(f"window {window.index} has no prediction")
        if step and step[-1][2] is label:
            step[-1] = (step[-1][0], window.end_ms, label)
        else:
            step.append((window.start_ms, window.end_ms, label))
    if by_index:
        raise ArgumentError(
            f"predictions reference unknown windows: {sorted(by_index)}"
        )
    return step


def constant_step(duration_ms: int, label: Label) -> LabelStep:
    return [(0, duration_ms, label)]


def confusion_at_resolution(
    truth: Timeline, predicted: LabelStep, resolution_ms: int = TICK_MS
) -> ConfusionCounts:
    """Tick counts of truth/prediction agreement over the whole recording.

    Implemented by sweeping the merged truth spans against the prediction
    step function; every boundary must sit on the resolution grid so the
    interval lengths convert to tick counts exactly.
    """
    if resolution_ms <= 0 or TICK_MS % resolution_ms != 0:
        raise ArgumentError(
            f"resolution {resolution_ms} must positively divide {TICK_MS} ms"
        )
    if not predicted:
        raise RangeError("predicted step function is empty")
    if predicted[0][0] != 0 or predicted[-1][1] != truth.duration_ms:
        raise RangeError(
            f"predicted step covers [{predicted[0][0]}, {predicted[-1][1]}), "
            f"timeline is [0, {truth.duration_ms})"
        )
    for (s, e, _), (s2, _, _) in zip(predicted, predicted[1:]):
        if e != s2:
            raise RangeError(f"predicted step has a gap or overlap at {e}")

    spans = truth.merged_spans()
    for boundary in [p[0] for p in predicted] + [s.start_ms for s in spans]:
        if boundary % resolution_ms != 0:
            raise ArgumentError(
                f"boundary {boundary} not aligned to {resolution_ms} ms resolution"
            )

    ms = {
        (Label.AD, Label.AD): 0,
        (Label.AD, Label.NO_AD): 0,
        (Label.NO_AD, Label.AD): 0,
        (Label.NO_AD, Label.NO_AD): 0,
    }
    ti = pi = 0
    cursor = 0
    while cursor < truth.duration_ms:
        t_span = spans[ti]
        p_start, p_end, p_label = predicted[pi]
        piece_end = min(t_span.end_ms, p_end)
        ms[(t_span.label, p_label)] += piece_end - cursor
        cursor = piece_end
        if t_span.end_ms == cursor:
            ti += 1
        if p_end == cursor:
            pi += 1

    return ConfusionCounts(
        tp=ms[(Label.AD, Label.AD)] // resolution_ms,
        fp=ms[(Label.NO_AD, Label.AD)] // resolution_ms,
        fn=ms[(Label.AD, Label.NO_AD)] // resolution_ms,
        tn=ms[(Label.NO_AD, Label.NO_AD)] // resolution_ms,
    )


def sample_confusion(
    truth_labels: Sequence[Label], predicted_labels: Sequence[Label]
) -> ConfusionCounts:
    """Window-sample-counted confusion (each window weighs 1)."""
    if len(truth_labels) != len(predicted_labels):
        raise ArgumentError(
            f"{len(truth_labels)} truth labels vs {len(predicted_labels)} predictions"
        )
    tp = fp = fn = tn = 0
    for t, p in zip(truth_labels, predicted_labels):
        if t is Label.AD:
            if p is Label.AD:
                tp += 1
            else:
                fn += 1
        else:
            if p is Label.AD:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def _f1(tp: int, fp: int, fn: int) -> float:
    denominator = 2 * tp + fp + fn
    if denominator == 0:
        # Class absent from both truth and prediction: vacuously perfect.
        return 1.0
    return 2 * tp / denominator


def _precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    return precision, recall


def f1_macro(confusion: ConfusionCounts) -> float:
    """Unweighted mean of the two per-class F1 scores, on a 0-100 scale.

    Full precision is kept here; rendering to the paper's 2-decimal
    convention happens only at the report interface.
    """
    if confusion.total == 0:
        raise ArgumentError("cannot score an empty range")
    ad = _f1(confusion.tp, confusion.fp, confusion.fn)
    no_ad = _f1(confusion.tn, confusion.fn, confusion.fp)
    return 100.0 * (ad + no_ad) / 2.0


def per_class_metrics(confusion: ConfusionCounts) -> dict[str, float]:
    """Per-class precision/recall/F1 on a 0-100 scale, AD as positive."""
    p_ad, r_ad = _precision_recall(confusion.tp, confusion.fp, confusion.fn)
    p_no, r_no = _precision_recall(confusion.tn, confusion.fn, confusion.fp)
    return {
        "precision_ad": 100.0 * p_ad,
        "recall_ad": 100.0 * r_ad,
        "f1_ad": 100.0 * _f1(confusion.tp, confusion.fp, confusion.fn),
        "precision_no_ad": 100.0 * p_no,
        "recall_no_ad": 100.0 * r_no,
        "f1_no_ad": 100.0 * _f1(confusion.tn, confusion.fn, confusion.fp),
    }


def oracle_window_labels(
    truth: Timeline,
    grid: WindowGrid,
    segments: list[TranscriptSegment] | None = None,
) -> dict[int, Label]:
    """The perfect classifier's label for every window.

    Exact technique (``segments is None``): the majority truth label of
    the window span itself. Non-exact: the majority truth label over the
    union of transcript segments assigned to the window, because that is
    all the content a classifier ever sees; windows with no assigned
    segment fall back to NO_AD.
    """
    if segments is None:
        return {
            w.index: majority_label(truth, w.start_ms, w.end_ms)
            for w in grid.windows
        }
    intervals = assignment_intervals(grid, segments)
    return {
        w.index: majority_over_intervals(truth, intervals[w.index])
        for w in grid.windows
    }


def oracle_predictions(
    truth: Timeline,
    grid: WindowGrid,
    segments: list[TranscriptSegment] | None = None,
) -> list[Prediction]:
    labels = oracle_window_labels(truth, grid, segments)
    return [Prediction(index, label) for index, label in sorted(labels.items())]


def theoretical_ceiling(
    truth: Timeline,
    grid: WindowGrid,
    segments: list[TranscriptSegment] | None = None,
    resolution_ms: int = TICK_MS,
) -> float:
    """Best achievable F1-macro under majority-rule window quantization.

    For the exact technique this depends only on the truth timeline and
    the window length, never on transcription content; for non-exact it
    follows the transcriber's segment boundaries via ``segments``.
    """
    step = quantize_predictions(grid, oracle_predictions(truth, grid, segments))
    return f1_macro(confusion_at_resolution(truth, step, resolution_ms))


def misclassified_ms(truth: Timeline, grid: WindowGrid) -> int:
    """Milliseconds a perfect majority-rule window classifier still gets wrong.

    Per window this is the minority-label mass; summed it is the
    irreducible quantization error, non-increasing under window halving.
    """
    total = 0
    for window in grid.windows:
        ad = overlap_ms(truth, window.start_ms, window.end_ms, Label.AD)
        total += min(ad, window.duration_ms - ad)
    return total


@dataclass
class EvalReport:
    """Scores, ceiling, flag tallies, and throughput for one evaluation.

    The three confusion matrices are the authoritative state; every F1 is
    derived from them, so combining reports is exact summation rather
    than averaging of averages. A model may in principle beat the ceiling
    on a subsample (its errors can cancel quantization errors), so no
    ordering between ``f1_macro`` and ``ceiling_f1_macro`` is enforced.
    """

    confusion: ConfusionCounts
    ceiling_confusion: ConfusionCounts
    window_confusion: ConfusionCounts
    resolution_ms: int = TICK_MS
    flag_counts: dict[str, int] = field(default_factory=dict)
    transcribe_s_per_audio_h: float | None = None
    inference_s_per_audio_h: float | None = None

    @property
    def f1_macro(self) -> float:
        return f1_macro(self.confusion)

    @property
    def ceiling_f1_macro(self) -> float:
        return f1_macro(self.ceiling_confusion)

    @property
    def window_f1_macro(self) -> float:
        return f1_macro(self.window_confusion)

    @property
    def per_class(self) -> dict[str, float]:
        return per_class_metrics(self.confusion)

    def to_json_dict(self) -> dict[str, Any]:
        def counts(c: ConfusionCounts) -> dict[str, int]:
            return {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn}

        return {
            "f1_macro": self.f1_macro,
            "f1_macro_display": f"{self.f1_macro:.2f}",
            "ceiling_f1_macro": self.ceiling_f1_macro,
            "ceiling_f1_macro_display": f"{self.ceiling_f1_macro:.2f}",
            "window_f1_macro": self.window_f1_macro,
            "per_class": self.per_class,
            "confusion": counts(self.confusion),
            "ceiling_confusion": counts(self.ceiling_confusion),
            "window_confusion": counts(self.window_confusion),
            "resolution_ms": self.resolution_ms,
            "flag_counts": dict(sorted(self.flag_counts.items())),
            "timing": {
                "transcribe_s_per_audio_h": self.transcribe_s_per_audio_h,
                "inference_s_per_audio_h": self.inference_s_per_audio_h,
            },
        }


def evaluate_predictions(
    truth: Timeline,
    grid: WindowGrid,
    predictions: Sequence[Prediction],
    segments: list[TranscriptSegment] | None = None,
    resolution_ms: int = TICK_MS,
    transcribe_s_per_audio_h: float | None = None,
    inference_s_per_audio_h: float | None = None,
    ceiling_labels: Sequence[Label] | None = None,
) -> EvalReport:
    """Score one recording's predictions against its ground truth.

    ``ceiling_labels`` overrides the oracle's per-window labels; block
    scoring passes recording-level labels so the ceiling agrees with a
    window-aware oracle backend even at block edges.
    """
    step = quantize_predictions(grid, predictions)
    confusion = confusion_at_resolution(truth, step, resolution_ms)
    if ceiling_labels is not None:
        oracle = [Prediction(w.index, ceiling_labels[w.index]) for w in grid.windows]
    else:
        oracle = oracle_predictions(truth, grid, segments)
    oracle_step = quantize_predictions(grid, oracle)
    truth_labels = [
        majority_label(truth, w.start_ms, w.end_ms) for w in grid.windows
    ]
    ordered = sorted(predictions, key=lambda p: p.window_index)
    flag_counts: dict[str, int] = {}
    for prediction in ordered:
        for flag in prediction.flags:
            flag_counts[flag.value] = flag_counts.get(flag.value, 0) + 1
    return EvalReport(
        confusion=confusion,
        ceiling_confusion=confusion_at_resolution(truth, oracle_step, resolution_ms),
        window_confusion=sample_confusion(truth_labels, [p.label for p in ordered]),
        resolution_ms=resolution_ms,
        flag_counts=flag_counts,
        transcribe_s_per_audio_h=transcribe_s_per_audio_h,
        inference_s_per_audio_h=inference_s_per_audio_h,
    )


def combine_reports(reports: list[EvalReport]) -> EvalReport:
    """Corpus-level report by summing confusion matrices.

    Summation (not score averaging) makes every recording weigh by its
    true duration and keeps oracle closure exact at the corpus level.
    Timing rates average over the reports that carry them.
    """
    if not reports:
        raise ArgumentError("no reports to combine")
    resolution = reports[0].resolution_ms
    if any(r.resolution_ms != resolution for r in reports):
        raise ArgumentError("cannot combine reports at different resolutions")
    confusion = ConfusionCounts()
    ceiling = ConfusionCounts()
    window = ConfusionCounts()
    flag_counts: dict[str, int] = {}
    for report in reports:
        confusion = confusion + report.confusion
        ceiling = ceiling + report.ceiling_confusion
        window = window + report.window_confusion
        for flag, count in report.flag_counts.items():
            flag_counts[flag] = flag_counts.get(flag, 0) + count

    def mean_timing(values: list[float | None]) -> float | None:
        present = [v for v in values if v is not None]
        return sum(present) / len(present) if present else None

    return EvalReport(
        confusion=confusion,
        ceiling_confusion=ceiling,
        window_confusion=window,
        resolution_ms=resolution,
        flag_counts=flag_counts,
        transcribe_s_per_audio_h=mean_timing(
            [r.transcribe_s_per_audio_h for r in reports]
        ),
        inference_s_per_audio_h=mean_timing(
            [r.inference_s_per_audio_h for r in reports]
        ),
    )


def ad_duration_histogram(
    corpus: Iterable[Timeline], bin_width_s: int, max_s: int = 120
) -> list[tuple[int, int]]:
    """Histogram of individual ad-span durations.

    Spans are deliberately unmerged (annotators separate distinct ads) and
    spans flagged as station jingles are excluded. Bins are
    ``[k*bin_width_s, (k+1)*bin_width_s)`` seconds from zero; the range
    extends past ``max_s`` if a longer ad exists, and zero bins stay in.
    """
    if bin_width_s <= 0:
        raise ArgumentError(f"bin width must be positive, got {bin_width_s}")
    bin_ms = bin_width_s * 1000
    counts: dict[int, int] = {}
    for timeline in corpus:
        for span in timeline.spans:
            if span.label is Label.AD and not span.jingle:
                index = span.duration_ms // bin_ms
                counts[index] = counts.get(index, 0) + 1
    n_bins = max(max_s // bin_width_s, max(counts, default=0) + 1)
    return [(k * bin_width_s, counts.get(k, 0)) for k in range(n_bins)]


def coverage_bins(corpus: Iterable[Timeline]) -> list[tuple[str, int, int]]:
    """Day profile in 48 half-hour bins: (bin start HH:MM, sample ms, ad ms).

    Recordings are projected onto the wall clock from their start time and
    wrap across midnight, so a late-night recording contributes to the
    early-morning bins.
    """
    sample = [0] * 48
    ad = [0] * 48
    for timeline in corpus:
        start = timeline.recorded_at
        day_offset = (
            start.hour * 3600_000 + start.minute * 60_000 + start.second * 1000
        )
        cursor = 0
        while cursor < timeline.duration_ms:
            position = (day_offset + cursor) % MS_PER_DAY
            bin_index = position % MS_PER_DAY // COVERAGE_BIN_MS
            boundary = (bin_index + 1) * COVERAGE_BIN_MS
            step = min(boundary - position, timeline.duration_ms - cursor)
            sample[bin_index] += step
            ad[bin_index] += overlap_ms(timeline, cursor, cursor + step, Label.AD)
            cursor += step
    labels = [f"{k // 2:02d}:{(k % 2) * 30:02d}" for k in range(48)]
    return list(zip(labels, sample, ad))


def write_histogram_csv(rows: list[tuple[int, int]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin_start", "count"])
        writer.writerows(rows)


def write_coverage_csv(rows: list[tuple[str, int, int]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin_start_hhmm", "sample_ms", "ad_ms"])
        writer.writerows(rows)
