"""Window grids, chunk plans, and transcript-segment assignment."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raddet.errors import ArgumentError, SegmentOrderError
from raddet.windowing import (
    TranscriptSegment,
    assign_segments,
    assign_to_windows,
    build_grid,
    plan_exact_chunks,
    plan_parent_segments,
)


class TestBuildGrid:
    def test_three_hours_of_forty_second_windows(self):
        grid = build_grid(3 * 3600 * 1000, 40)
        assert len(grid) == 270
        assert all(w.duration_ms == 40_000 for w in grid.windows)

    def test_tail_remainder(self):
        grid = build_grid(605_000, 60)
        assert len(grid) == 11
        assert grid.windows[-1].start_ms == 600_000
        assert grid.windows[-1].end_ms == 605_000

    def test_aligned_duration(self):
        grid = build_grid(600_000, 10)
        assert len(grid) == 60
        assert grid.windows[-1].end_ms == 600_000

    def test_rejects_non_positive(self):
        with pytest.raises(ArgumentError):
            build_grid(0, 10)
        with pytest.raises(ArgumentError):
            build_grid(1000, 0)

    @given(
        st.integers(min_value=1, max_value=4 * 3600 * 10),
        st.integers(min_value=1, max_value=120),
    )
    @settings(max_examples=200, deadline=None)
    def test_partition_property(self, duration_ticks, window_len_s):
        duration_ms = duration_ticks * 100
        grid = build_grid(duration_ms, window_len_s)
        assert grid.windows[0].start_ms == 0
        assert grid.windows[-1].end_ms == duration_ms
        for a, b in zip(grid.windows, grid.windows[1:]):
            assert a.end_ms == b.start_ms
        assert sum(w.duration_ms for w in grid.windows) == duration_ms
        expected = -(-duration_ms // (window_len_s * 1000))  # ceil
        assert len(grid) == expected


class TestChunkPlan:
    def test_one_request_per_window(self):
        grid = build_grid(3 * 3600 * 1000, 40)
        requests = plan_exact_chunks(grid, "rec-1")
        assert len(requests) == 270
        assert requests[7].start_ms == 7 * 40_000
        assert requests[7].end_ms == 8 * 40_000
        assert requests[7].window_index == 7

    def test_tail_request(self):
        grid = build_grid(605_000, 60)
        assert plan_exact_chunks(grid)[-1].end_ms - plan_exact_chunks(grid)[-1].start_ms == 5_000

    @given(
        st.integers(min_value=1, max_value=3600 * 10),
        st.integers(min_value=1, max_value=90),
    )
    @settings(max_examples=100, deadline=None)
    def test_requests_tile_the_recording(self, duration_ticks, window_len_s):
        duration_ms = duration_ticks * 100
        requests = plan_exact_chunks(build_grid(duration_ms, window_len_s))
        cursor = 0
        for request in requests:
            assert request.start_ms == cursor
            assert request.end_ms > request.start_ms
            cursor = request.end_ms
        assert cursor == duration_ms


class TestParentSegments:
    def test_ten_minute_parents(self):
        parents = plan_parent_segments(3 * 3600 * 1000)
        assert len(parents) == 18
        assert parents[0] == (0, 600_000)
        assert parents[-1] == (17 * 600_000, 18 * 600_000)

    def test_short_tail_parent(self):
        parents = plan_parent_segments(650_000)
        assert parents == [(0, 600_000), (600_000, 650_000)]


class TestAssignSegments:
    def grid10(self, duration_ms=60_000):
        return build_grid(duration_ms, 10)

    def test_containment(self):
        texts = assign_segments(
            self.grid10(), [TranscriptSegment(12_300, 18_700, "hello there")]
        )
        assert texts[1] == "hello there"
        assert texts[0] == ""

    def test_majority_overlap_wins(self):
        texts = assign_segments(self.grid10(), [TranscriptSegment(8_000, 14_000, "x")])
        assert texts[1] == "x"
        assert texts[0] == ""

    def test_tie_goes_to_earlier_window(self):
        texts = assign_segments(self.grid10(), [TranscriptSegment(5_000, 15_000, "x")])
        assert texts[0] == "x"
        assert texts[1] == ""

    def test_time_order_join(self):
        texts = assign_segments(
            self.grid10(),
            [
                TranscriptSegment(10_500, 12_000, "first"),
                TranscriptSegment(12_000, 14_000, "second"),
                TranscriptSegment(15_000, 19_000, "third"),
            ],
        )
        assert texts[1] == "first second third"

    def test_all_windows_present_in_map(self):
        texts = assign_segments(self.grid10(), [])
        assert sorted(texts) == list(range(6))
        assert set(texts.values()) == {""}

    def test_unsorted_rejected(self):
        with pytest.raises(SegmentOrderError):
            assign_segments(
                self.grid10(),
                [TranscriptSegment(20_000, 25_000, "b"), TranscriptSegment(0, 5_000, "a")],
            )

    def test_overlapping_rejected(self):
        with pytest.raises(SegmentOrderError):
            assign_segments(
                self.grid10(),
                [TranscriptSegment(0, 6_000, "a"), TranscriptSegment(5_000, 9_000, "b")],
            )

    @given(st.integers(min_value=1, max_value=2**31))
    @settings(max_examples=100, deadline=None)
    def test_totality_no_text_dropped_or_duplicated(self, seed):
        rng = random.Random(seed)
        duration_ms = rng.randint(5, 600) * 1000
        grid = build_grid(duration_ms, rng.choice([5, 10, 20, 40]))
        segments = []
        cursor = 0
        i = 0
        while cursor < duration_ms - 200:
            start = cursor + rng.randint(0, 2000)
            end = min(start + rng.randint(100, 15_000), duration_ms)
            if end <= start:
                break
            segments.append(TranscriptSegment(start, end, f"seg{i}"))
            cursor = end + rng.randint(0, 1500)
            i += 1
        assigned = assign_to_windows(grid, segments)
        flattened = [s for segs in assigned.values() for s in segs]
        assert sorted(flattened, key=lambda s: s.start_ms) == segments
        assert len(flattened) == len(segments)

    def test_exact_nonexact_parity_on_aligned_segments(self):
        # Segments cut exactly at window boundaries reproduce per-chunk text.
        grid = build_grid(40_000, 10)
        segments = [
            TranscriptSegment(0, 10_000, "w0"),
            TranscriptSegment(10_000, 20_000, "w1"),
            TranscriptSegment(20_000, 30_000, "w2"),
            TranscriptSegment(30_000, 40_000, "w3"),
        ]
        assert assign_segments(grid, segments) == {0: "w0", 1: "w1", 2: "w2", 3: "w3"}
