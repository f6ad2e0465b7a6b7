"""Timeline parsing, rounding, and the interval-overlap algebra."""

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raddet.errors import CoverageError, LabelError, RangeError, SchemaError
from raddet.timeline import (
    Label,
    Theme,
    labelstudio_to_document,
    majority_label,
    overlap_ms,
    parse_annotations,
    snap_to_tick,
)

from .conftest import make_timeline, random_timeline, tick_overlap_ms


def canonical_doc(spans, duration_ms=60_000):
    return {
        "station_id": "station-x",
        "recorded_at": "2022-05-31T07:00:00Z",
        "theme": "music",
        "duration_ms": duration_ms,
        "spans": spans,
    }


class TestRounding:
    def test_exact_multiples_unchanged(self):
        assert snap_to_tick(20_000) == 20_000
        assert snap_to_tick(0) == 0

    def test_half_to_even(self):
        # 20 050 sits between 20 000 (even tick) and 20 100 (odd tick).
        assert snap_to_tick(20_050) == 20_000
        assert snap_to_tick(20_150) == 20_200
        assert snap_to_tick(50) == 0
        assert snap_to_tick(150) == 200

    def test_ordinary_nearest(self):
        assert snap_to_tick(20_049) == 20_000
        assert snap_to_tick(20_051) == 20_100
        assert snap_to_tick(19_999.6) == 20_000

    def test_float_half_cases(self):
        assert snap_to_tick(250.0) == 200
        assert snap_to_tick(350.0) == 400

    def test_rejects_non_numbers(self):
        with pytest.raises(SchemaError):
            snap_to_tick("100")
        with pytest.raises(SchemaError):
            snap_to_tick(True)


class TestParseAnnotations:
    def test_three_span_document(self):
        doc = canonical_doc(
            [
                {"start_ms": 0, "end_ms": 20_000, "label": "no-ad", "confidence": 1.0},
                {"start_ms": 20_000, "end_ms": 50_000, "label": "ad", "confidence": 0.9},
                {"start_ms": 50_000, "end_ms": 60_000, "label": "no-ad", "confidence": 1.0},
            ]
        )
        timeline = parse_annotations(doc)
        assert len(timeline.spans) == 3
        assert timeline.label_ms(Label.AD) == 30_000
        assert timeline.theme is Theme.MUSIC

    def test_boundaries_snap_before_validation(self):
        doc = canonical_doc(
            [
                {"start_ms": 0, "end_ms": 20_050, "label": "no-ad"},
                {"start_ms": 20_050, "end_ms": 60_000, "label": "ad"},
            ]
        )
        timeline = parse_annotations(doc)
        assert timeline.spans[0].end_ms == 20_000
        assert timeline.spans[1].start_ms == 20_000

    def test_gap_surviving_rounding_is_coverage_error(self):
        doc = canonical_doc(
            [
                {"start_ms": 0, "end_ms": 20_000, "label": "no-ad"},
                {"start_ms": 20_300, "end_ms": 60_000, "label": "ad"},
            ]
        )
        with pytest.raises(CoverageError) as err:
            parse_annotations(doc)
        assert err.value.boundary_ms == 20_000

    def test_overlap_is_coverage_error(self):
        doc = canonical_doc(
            [
                {"start_ms": 0, "end_ms": 30_000, "label": "no-ad"},
                {"start_ms": 29_000, "end_ms": 60_000, "label": "ad"},
            ]
        )
        with pytest.raises(CoverageError):
            parse_annotations(doc)

    def test_unknown_label(self):
        doc = canonical_doc([{"start_ms": 0, "end_ms": 60_000, "label": "music"}])
        with pytest.raises(LabelError):
            parse_annotations(doc)

    def test_missing_key_is_schema_error(self):
        doc = canonical_doc([{"start_ms": 0, "end_ms": 60_000, "label": "ad"}])
        del doc["theme"]
        with pytest.raises(SchemaError):
            parse_annotations(doc)

    def test_span_collapsing_under_rounding_is_coverage_error(self):
        doc = canonical_doc(
            [
                {"start_ms": 0, "end_ms": 20_020, "label": "no-ad"},
                {"start_ms": 20_020, "end_ms": 20_040, "label": "ad"},
                {"start_ms": 20_040, "end_ms": 60_000, "label": "no-ad"},
            ]
        )
        with pytest.raises(CoverageError):
            parse_annotations(doc)

    def test_roundtrip_is_identity(self):
        rng = random.Random(7)
        for _ in range(25):
            timeline = random_timeline(rng)
            again = parse_annotations(timeline.to_document())
            assert again == timeline
            # And the serialized form is stable too.
            assert json.dumps(again.to_document()) == json.dumps(timeline.to_document())

    def test_confidence_optional_and_carried(self):
        doc = canonical_doc(
            [
                {"start_ms": 0, "end_ms": 30_000, "label": "no-ad"},
                {"start_ms": 30_000, "end_ms": 60_000, "label": "ad", "confidence": 0.4},
            ]
        )
        timeline = parse_annotations(doc)
        assert timeline.spans[0].confidence == 1.0
        assert timeline.spans[1].confidence == 0.4


class TestOverlap:
    def test_single_span_intersection(self, sixty_second_timeline):
        assert overlap_ms(sixty_second_timeline, 10_000, 30_000, Label.AD) == 10_000

    def test_whole_timeline(self, sixty_second_timeline):
        assert overlap_ms(sixty_second_timeline, 0, 60_000, Label.AD) == 30_000

    def test_coverage_closure(self, sixty_second_timeline):
        for start, end in [(0, 60_000), (5_500, 42_300), (19_900, 20_100)]:
            ad = overlap_ms(sixty_second_timeline, start, end, Label.AD)
            no_ad = overlap_ms(sixty_second_timeline, start, end, Label.NO_AD)
            assert ad + no_ad == end - start

    def test_out_of_range_query(self, sixty_second_timeline):
        with pytest.raises(RangeError):
            overlap_ms(sixty_second_timeline, 0, 60_100, Label.AD)
        with pytest.raises(RangeError):
            overlap_ms(sixty_second_timeline, 30_000, 30_000, Label.AD)

    def test_matches_tick_oracle_on_random_instances(self):
        rng = random.Random(20_240_101)
        for _ in range(300):
            timeline = random_timeline(rng, max_ticks=400)
            n_ticks = timeline.duration_ms // 100
            a = rng.randrange(n_ticks)
            b = rng.randrange(n_ticks)
            start, end = (min(a, b) * 100, (max(a, b) + 1) * 100)
            for label in (Label.AD, Label.NO_AD):
                assert overlap_ms(timeline, start, end, label) == tick_overlap_ms(
                    timeline, start, end, label
                )


class TestMajority:
    def test_clear_majority(self):
        timeline = make_timeline([0, 5_000, 30_000, 40_000], [Label.NO_AD, Label.AD, Label.NO_AD])
        assert majority_label(timeline, 0, 40_000) is Label.AD

    def test_no_ad_at_all(self):
        timeline = make_timeline([0, 40_000], [Label.NO_AD])
        assert majority_label(timeline, 0, 40_000) is Label.NO_AD

    def test_exact_tie_is_no_ad(self):
        timeline = make_timeline([0, 10_000, 20_000], [Label.AD, Label.NO_AD])
        assert majority_label(timeline, 0, 20_000) is Label.NO_AD

    def test_flip_point_sweep(self):
        # Slide a 10 s ad across a fixed 20 s window; the label flips only
        # when the ad occupies strictly more than half the window.
        for ad_start in range(0, 30_000, 100):
            timeline = make_timeline(
                [0, ad_start, ad_start + 10_000, 40_000],
                [Label.NO_AD, Label.AD, Label.NO_AD],
            ) if ad_start > 0 else make_timeline(
                [0, 10_000, 40_000], [Label.AD, Label.NO_AD]
            )
            window = (10_000, 30_000)
            inside = overlap_ms(timeline, *window, Label.AD)
            expected = Label.AD if inside > 10_000 else Label.NO_AD
            assert majority_label(timeline, *window) is expected


class TestMergedView:
    def test_adjacent_same_label_preserved_then_merged(self):
        timeline = make_timeline(
            [0, 10_000, 20_000, 30_000], [Label.AD, Label.AD, Label.NO_AD]
        )
        assert len(timeline.spans) == 3
        merged = timeline.merged_spans()
        assert [(s.start_ms, s.end_ms, s.label) for s in merged] == [
            (0, 20_000, Label.AD),
            (20_000, 30_000, Label.NO_AD),
        ]

    @given(st.integers(min_value=1, max_value=2**31))
    @settings(max_examples=50, deadline=None)
    def test_merge_preserves_label_measure(self, seed):
        timeline = random_timeline(random.Random(seed), max_ticks=200)
        merged = timeline.merged_spans()
        for label in (Label.AD, Label.NO_AD):
            assert sum(s.duration_ms for s in merged if s.label is label) == (
                timeline.label_ms(label)
            )
        # Merged view is strictly alternating.
        for a, b in zip(merged, merged[1:]):
            assert a.label is not b.label


class TestLabelStudioConverter:
    def test_normalizes_seconds_to_canonical(self):
        task = {
            "data": {
                "station_id": "station-x",
                "recorded_at": "2022-05-31T07:00:00Z",
                "theme": "music",
                "duration_ms": 60_000,
            },
            "annotations": [
                {
                    "result": [
                        {"value": {"start": 0.0, "end": 20.0, "labels": ["no-ad"]}},
                        {"value": {"start": 20.0, "end": 50.0, "labels": ["ad"]}},
                        {"value": {"start": 50.0, "end": 60.0, "labels": ["no-ad"]}},
                    ]
                }
            ],
        }
        timeline = parse_annotations(labelstudio_to_document(task))
        assert timeline.label_ms(Label.AD) == 30_000

    def test_multi_label_region_rejected(self):
        task = {
            "data": {"station_id": "s", "recorded_at": "2022-01-01T00:00:00Z", "theme": "music"},
            "annotations": [
                {"result": [{"value": {"start": 0, "end": 1, "labels": ["ad", "no-ad"]}}]}
            ],
        }
        with pytest.raises(SchemaError):
            labelstudio_to_document(task)
