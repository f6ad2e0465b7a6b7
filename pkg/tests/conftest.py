"""Shared fixtures and brute-force oracles.

The tick-loop functions here are deliberately naive: they walk every
100 ms tick and are the independent reference the interval arithmetic
must match exactly.
"""

from __future__ import annotations

import random
from datetime import datetime, timezone

import pytest

from raddet.evaluation import ConfusionCounts, LabelStep
from raddet.timeline import TICK_MS, Label, LabelSpan, Theme, Timeline


def make_timeline(
    boundaries_ms: list[int],
    labels: list[Label],
    station_id: str = "station-x",
    theme: Theme = Theme.MUSIC,
    recorded_at: datetime | None = None,
) -> Timeline:
    """Timeline from consecutive boundaries [b0=0, b1, ..., bn=duration]."""
    spans = tuple(
        LabelSpan(start, end, label)
        for start, end, label in zip(boundaries_ms, boundaries_ms[1:], labels)
    )
    return Timeline(
        station_id=station_id,
        recorded_at=recorded_at or datetime(2022, 5, 31, 7, 0, tzinfo=timezone.utc),
        theme=theme,
        duration_ms=boundaries_ms[-1],
        spans=spans,
    )


def random_timeline(rng: random.Random, max_ticks: int = 1200) -> Timeline:
    """Random valid timeline; boundaries on the 100 ms grid, labels free."""
    n_ticks = rng.randint(2, max_ticks)
    duration = n_ticks * TICK_MS
    n_cuts = rng.randint(0, min(12, n_ticks - 1))
    cuts = sorted(rng.sample(range(1, n_ticks), n_cuts)) if n_cuts else []
    boundaries = [0] + [c * TICK_MS for c in cuts] + [duration]
    labels = [rng.choice((Label.AD, Label.NO_AD)) for _ in range(len(boundaries) - 1)]
    return make_timeline(boundaries, labels)


def tick_overlap_ms(timeline: Timeline, start: int, end: int, label: Label) -> int:
    """Brute force: count 100 ms ticks carrying ``label`` in [start, end)."""
    ticks = 0
    for t in range(start, end, TICK_MS):
        if timeline.span_at(t).label is label:
            ticks += 1
    return ticks * TICK_MS


def tick_confusion(
    truth: Timeline, predicted: LabelStep, resolution_ms: int = TICK_MS
) -> ConfusionCounts:
    """Brute force: one truth/prediction lookup per resolution tick."""

    def predicted_at(t: int) -> Label:
        for start, end, label in predicted:
            if start <= t < end:
                return label
        raise AssertionError(f"step function undefined at {t}")

    tp = fp = fn = tn = 0
    for t in range(0, truth.duration_ms, resolution_ms):
        truth_label = truth.span_at(t).label
        pred_label = predicted_at(t)
        if truth_label is Label.AD:
            if pred_label is Label.AD:
                tp += 1
            else:
                fn += 1
        else:
            if pred_label is Label.AD:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


@pytest.fixture
def sixty_second_timeline() -> Timeline:
    """The worked 60 s example: no-ad / ad / no-ad with 30 s of ad."""
    return make_timeline(
        [0, 20_000, 50_000, 60_000], [Label.NO_AD, Label.AD, Label.NO_AD]
    )
