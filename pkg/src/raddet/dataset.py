"""Window tagging, train/validation/test split policy, and dataset files.

The test set is made of exactly-3-hour blocks cut from recordings at
10-minute alignment (so windows of every configured length tile them),
chosen per station-day, spanning a wide range of ad densities around a
~4% corpus-wide test ad share. Remaining time becomes training data,
with validation drawn as whole theme-stratified recordings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from random import Random
from typing import Iterable, Sequence

from .errors import ArgumentError, InfeasiblePolicy, IoError, RangeError
from .timeline import Label, Theme, Timeline, majority_label, overlap_ms
from .windowing import WindowGrid

BLOCK_MS = 3 * 3_600_000
BLOCK_ALIGN_MS = 600_000  # 10-minute grid; divisible by 10/20/40 s windows


class Split(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class WindowSample:
    recording_id: str
    window_index: int
    start_ms: int
    end_ms: int
    text: str
    label: Label
    theme: Theme
    split: Split

    def to_row(self) -> dict:
        return {
            "recording_id": self.recording_id,
            "window_index": self.window_index,
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
            "text": self.text,
            "label": self.label.value,
            "theme": self.theme.value,
            "split": self.split.value,
        }

    @classmethod
    def from_row(cls, row: dict) -> "WindowSample":
        return cls(
            recording_id=row["recording_id"],
            window_index=row["window_index"],
            start_ms=row["start_ms"],
            end_ms=row["end_ms"],
            text=row["text"],
            label=Label.from_wire(row["label"]),
            theme=Theme.from_wire(row["theme"]),
            split=Split(row["split"]),
        )


@dataclass(frozen=True)
class TestBlock:
    recording_id: str
    block_start_ms: int
    block_end_ms: int
    ad_ms: int
    theme: Theme

    def __post_init__(self):
        if self.block_end_ms - self.block_start_ms != BLOCK_MS:
            raise ArgumentError(
                f"test block must be exactly {BLOCK_MS} ms, got "
                f"{self.block_end_ms - self.block_start_ms}"
            )

    @property
    def ad_fraction(self) -> float:
        return self.ad_ms / BLOCK_MS


@dataclass(frozen=True)
class SplitPolicy:
    """Knobs of the block-selection and proportion rules."""

    big_day_hours: float = 24.0
    blocks_big_day: int = 2
    blocks_small_day: int = 1
    target_ratio: float = 4.0  # train:test time
    ratio_min: float = 3.0
    ratio_max: float = 5.0
    test_ad_target: float = 0.04
    test_ad_tolerance: float = 0.02  # ± percentage points
    spread_low: float = 0.01
    spread_high: float = 0.08
    val_fraction: float = 0.10
    train_only_ids: frozenset = frozenset()
    #: Permit a degenerate corpus whose every eligible minute is test.
    allow_empty_train: bool = False
    seed: int = 0


@dataclass(frozen=True)
class SplitRange:
    start_ms: int
    end_ms: int
    split: Split


@dataclass
class SplitPlan:
    """Output of build_splits: per-recording ranges plus the block list."""

    ranges: dict[str, list[SplitRange]]
    blocks: list[TestBlock]
    rules: dict[str, dict]
    totals: dict[str, float] = field(default_factory=dict)

    def split_ms(self, split: Split) -> int:
        return sum(
            r.end_ms - r.start_ms
            for ranges in self.ranges.values()
            for r in ranges
            if r.split is split
        )

    def to_json_dict(self) -> dict:
        return {
            "ranges": {
                rid: [[r.start_ms, r.end_ms, r.split.value] for r in ranges]
                for rid, ranges in sorted(self.ranges.items())
            },
            "blocks": [
                {
                    "recording_id": b.recording_id,
                    "block_start_ms": b.block_start_ms,
                    "block_end_ms": b.block_end_ms,
                    "ad_ms": b.ad_ms,
                    "theme": b.theme.value,
                }
                for b in self.blocks
            ],
            "rules": self.rules,
            "totals": self.totals,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SplitPlan":
        return cls(
            ranges={
                rid: [SplitRange(s, e, Split(v)) for s, e, v in ranges]
                for rid, ranges in data["ranges"].items()
            },
            blocks=[
                TestBlock(
                    b["recording_id"],
                    b["block_start_ms"],
                    b["block_end_ms"],
                    b["ad_ms"],
                    Theme.from_wire(b["theme"]),
                )
                for b in data["blocks"]
            ],
            rules=data["rules"],
            totals=data.get("totals", {}),
        )


def tag_windows(
    timeline: Timeline,
    grid: WindowGrid,
    texts: dict[int, str],
    split_ranges: Sequence[SplitRange] | None = None,
    default_split: Split = Split.TRAIN,
) -> list[WindowSample]:
    """One sample per window; labels by majority rule.

    Missing texts mean the window had no speech and stay as empty strings
    (the label still reflects the ground truth). A window's split is the
    range holding most of it, ties toward the earlier range; with aligned
    blocks windows never straddle ranges.
    """
    if grid.duration_ms != timeline.duration_ms:
        raise RangeError(
            f"grid covers {grid.duration_ms} ms, timeline {timeline.duration_ms} ms"
        )
    samples = []
    for window in grid.windows:
        split = default_split
        if split_ranges:
            best_overlap = 0
            for candidate in split_ranges:
                overlap = min(window.end_ms, candidate.end_ms) - max(
                    window.start_ms, candidate.start_ms
                )
                if overlap > best_overlap:
                    best_overlap = overlap
                    split = candidate.split
        samples.append(
            WindowSample(
                recording_id=timeline.recording_id,
                window_index=window.index,
                start_ms=window.start_ms,
                end_ms=window.end_ms,
                text=texts.get(window.index, ""),
                label=majority_label(timeline, window.start_ms, window.end_ms),
                theme=timeline.theme,
                split=split,
            )
        )
    return samples


# --- block selection -------------------------------------------------------


@dataclass(frozen=True)
class _Candidate:
    recording_id: str
    station_day: tuple[str, str]
    start_ms: int
    ad_ms: int
    theme: Theme

    @property
    def fraction(self) -> float:
        return self.ad_ms / BLOCK_MS


def _station_day(timeline: Timeline) -> tuple[str, str]:
    return (timeline.station_id, timeline.recorded_at.strftime("%Y-%m-%d"))


def _block_candidates(timeline: Timeline) -> list[_Candidate]:
    out = []
    for start in range(0, timeline.duration_ms - BLOCK_MS + 1, BLOCK_ALIGN_MS):
        out.append(
            _Candidate(
                recording_id=timeline.recording_id,
                station_day=_station_day(timeline),
                start_ms=start,
                ad_ms=overlap_ms(timeline, start, start + BLOCK_MS, Label.AD),
                theme=timeline.theme,
            )
        )
    return out


def zero_ad_stretch_exists(corpus: Iterable[Timeline]) -> bool:
    """Sliding check: does any recording hold a 3-hour ad-free window?"""
    for timeline in corpus:
        run = 0
        for span in timeline.merged_spans():
            run = span.duration_ms if span.label is Label.NO_AD else 0
            if run >= BLOCK_MS:
                return True
    return False


def _conflicts(candidate: _Candidate, chosen: list[_Candidate]) -> bool:
    for other in chosen:
        if other.recording_id == candidate.recording_id and not (
            candidate.start_ms + BLOCK_MS <= other.start_ms
            or other.start_ms + BLOCK_MS <= candidate.start_ms
        ):
            return True
    return False


def build_splits(
    corpus: Sequence[Timeline], policy: SplitPolicy | None = None
) -> SplitPlan:
    """Select test blocks, validation recordings, and training ranges.

    Raises InfeasiblePolicy naming the first unsatisfiable hard
    constraint; the corpus-dependent rules (zero-ad block, ad-fraction
    spread) degrade to ``waived`` entries in the plan's rule table when
    the corpus cannot provide them.
    """
    if not corpus:
        raise InfeasiblePolicy("corpus is empty")
    policy = policy or SplitPolicy()
    rng = Random(policy.seed)
    by_id = {t.recording_id: t for t in corpus}
    if len(by_id) != len(corpus):
        raise ArgumentError("duplicate recording ids in corpus")

    # Station-day quotas. Recordings shorter than one block (or explicitly
    # train-only) cannot host blocks; a day with no eligible recording is
    # exempt rather than infeasible.
    days: dict[tuple[str, str], list[Timeline]] = {}
    for timeline in corpus:
        days.setdefault(_station_day(timeline), []).append(timeline)

    candidates: list[_Candidate] = []
    quotas: dict[tuple[str, str], int] = {}
    exempt_days: list[str] = []
    for day_key in sorted(days):
        recordings = days[day_key]
        tagged_ms = sum(t.duration_ms for t in recordings)
        eligible = [
            t
            for t in recordings
            if t.duration_ms >= BLOCK_MS and t.recording_id not in policy.train_only_ids
        ]
        if not eligible:
            exempt_days.append("/".join(day_key))
            continue
        quotas[day_key] = (
            policy.blocks_big_day
            if tagged_ms >= policy.big_day_hours * 3_600_000
            else policy.blocks_small_day
        )
        for timeline in eligible:
            candidates.extend(_block_candidates(timeline))

    if not quotas:
        raise InfeasiblePolicy("no station-day can host a 3-hour test block")

    rng.shuffle(candidates)
    remaining = dict(quotas)
    chosen: list[_Candidate] = []
    rules: dict[str, dict] = {}

    def pick(candidate: _Candidate) -> None:
        chosen.append(candidate)
        remaining[candidate.station_day] -= 1

    def selectable(candidate: _Candidate) -> bool:
        return remaining[candidate.station_day] > 0 and not _conflicts(candidate, chosen)

    # 1. Zero-ad block, when the corpus offers one.
    zero_candidates = sorted(
        (c for c in candidates if c.ad_ms == 0 and selectable(c)),
        key=lambda c: (c.station_day, c.recording_id, c.start_ms),
    )
    if zero_candidates:
        pick(zero_candidates[0])
        rules["zero_ad_block"] = {"status": "satisfied"}
    elif zero_ad_stretch_exists(corpus):
        rules["zero_ad_block"] = {
            "status": "waived",
            "detail": "zero-ad stretch exists but not at block alignment",
        }
    else:
        rules["zero_ad_block"] = {
            "status": "waived",
            "detail": "corpus has no zero-ad 3-hour stretch",
        }

    # 2. Spread anchors: one block under spread_low, one over spread_high.
    def best(pool, key) -> _Candidate | None:
        pool = [c for c in pool if selectable(c)]
        if not pool:
            return None
        return min(pool, key=key)

    if not any(c.fraction < policy.spread_low for c in chosen):
        low = best(candidates, key=lambda c: (c.fraction, c.station_day, c.start_ms))
        if low is not None and low.fraction < policy.spread_low:
            pick(low)
    high = None
    if not any(c.fraction > policy.spread_high for c in chosen):
        high = best(candidates, key=lambda c: (-c.fraction, c.station_day, c.start_ms))
        if high is not None and high.fraction > policy.spread_high:
            pick(high)
        else:
            high = None

    # 3. Fill quotas steering the corpus-wide test ad share to target.
    def fill() -> None:
        for day_key in sorted(remaining):
            while remaining[day_key] > 0:
                pool = [
                    c
                    for c in candidates
                    if c.station_day == day_key and selectable(c)
                ]
                if not pool:
                    raise InfeasiblePolicy(
                        f"cannot place {quotas[day_key]} disjoint test blocks "
                        f"for station-day {'/'.join(day_key)}"
                    )
                current_ad = sum(c.ad_ms for c in chosen)
                current_ms = BLOCK_MS * len(chosen)

                def deviation(c: _Candidate) -> tuple:
                    share = (current_ad + c.ad_ms) / (current_ms + BLOCK_MS)
                    return (
                        abs(share - policy.test_ad_target),
                        c.recording_id,
                        c.start_ms,
                    )

                pick(min(pool, key=deviation))

    fill()

    # 4. Hard test-ad-share band; if the spread-high anchor pushed it out,
    # drop that anchor (spread degrades to waived) and refill.
    def test_share() -> float:
        return sum(c.ad_ms for c in chosen) / (BLOCK_MS * len(chosen))

    in_band = abs(test_share() - policy.test_ad_target) <= policy.test_ad_tolerance
    if not in_band and high is not None:
        chosen.remove(high)
        remaining[high.station_day] += 1
        fill()
        in_band = abs(test_share() - policy.test_ad_target) <= policy.test_ad_tolerance
        rules["ad_fraction_spread"] = {
            "status": "waived",
            "detail": "high-ad block conflicts with the test ad-share band",
        }
    if not in_band:
        raise InfeasiblePolicy(
            f"test ad share {test_share():.4f} outside "
            f"{policy.test_ad_target}±{policy.test_ad_tolerance}"
        )
    rules["test_ad_share"] = {"status": "satisfied", "share": test_share()}

    if "ad_fraction_spread" not in rules:
        has_low = any(c.fraction < policy.spread_low for c in chosen)
        has_high = any(c.fraction > policy.spread_high for c in chosen)
        corpus_has_low = any(c.fraction < policy.spread_low for c in candidates)
        corpus_has_high = any(c.fraction > policy.spread_high for c in candidates)
        if has_low and has_high:
            rules["ad_fraction_spread"] = {"status": "satisfied"}
        elif (has_low or not corpus_has_low) and (has_high or not corpus_has_high):
            rules["ad_fraction_spread"] = {
                "status": "waived",
                "detail": "corpus lacks blocks beyond the spread thresholds",
            }
        else:
            raise InfeasiblePolicy("ad-fraction spread unachievable despite candidates")

    blocks = sorted(
        (
            TestBlock(
                c.recording_id,
                c.start_ms,
                c.start_ms + BLOCK_MS,
                c.ad_ms,
                c.theme,
            )
            for c in chosen
        ),
        key=lambda b: (b.recording_id, b.block_start_ms),
    )
    rules["block_count"] = {
        "status": "satisfied",
        "per_day": {
            "/".join(day): sum(1 for c in chosen if c.station_day == day)
            for day in sorted(quotas)
        },
        "exempt_days": exempt_days,
    }

    # 5. Validation: whole block-free recordings, stratified by theme.
    block_recs = {b.recording_id for b in blocks}
    total_ms = sum(t.duration_ms for t in corpus)
    val_ids: set[str] = set()
    for theme in Theme:
        theme_total = sum(t.duration_ms for t in corpus if t.theme is theme)
        if theme_total == 0:
            continue
        target = policy.val_fraction * theme_total
        # Smallest block-free recordings first: hits the target with the
        # least overshoot and stays deterministic.
        pool = sorted(
            (
                t
                for t in corpus
                if t.theme is theme and t.recording_id not in block_recs
            ),
            key=lambda t: (t.duration_ms, t.recording_id),
        )
        drawn = 0
        for timeline in pool:
            if drawn >= target:
                break
            val_ids.add(timeline.recording_id)
            drawn += timeline.duration_ms

    # 6. Assemble per-recording ranges.
    ranges: dict[str, list[SplitRange]] = {}
    for timeline in corpus:
        rid = timeline.recording_id
        if rid in val_ids:
            ranges[rid] = [SplitRange(0, timeline.duration_ms, Split.VALIDATION)]
            continue
        rec_blocks = sorted(
            (b for b in blocks if b.recording_id == rid),
            key=lambda b: b.block_start_ms,
        )
        out: list[SplitRange] = []
        cursor = 0
        for block in rec_blocks:
            if block.block_start_ms > cursor:
                out.append(SplitRange(cursor, block.block_start_ms, Split.TRAIN))
            out.append(SplitRange(block.block_start_ms, block.block_end_ms, Split.TEST))
            cursor = block.block_end_ms
        if cursor < timeline.duration_ms:
            out.append(SplitRange(cursor, timeline.duration_ms, Split.TRAIN))
        ranges[rid] = out

    plan = SplitPlan(ranges=ranges, blocks=blocks, rules=rules)

    # 7. Hard proportion and representation constraints.
    train_ms = plan.split_ms(Split.TRAIN)
    test_ms = plan.split_ms(Split.TEST)
    val_ms = plan.split_ms(Split.VALIDATION)
    if test_ms == 0:
        raise InfeasiblePolicy("no test time selected")
    if train_ms == 0 and not policy.allow_empty_train:
        raise InfeasiblePolicy("training split is empty")
    ratio = train_ms / test_ms
    if not policy.ratio_min <= ratio <= policy.ratio_max:
        raise InfeasiblePolicy(
            f"train:test ratio {ratio:.2f} outside "
            f"[{policy.ratio_min}, {policy.ratio_max}]"
        )
    rules["train_test_ratio"] = {"status": "satisfied", "ratio": ratio}

    corpus_themes = {t.theme for t in corpus}
    for theme in corpus_themes:
        train_has = any(
            by_id[rid].theme is theme
            and any(r.split is Split.TRAIN for r in recording_ranges)
            for rid, recording_ranges in ranges.items()
        )
        test_has = any(b.theme is theme for b in blocks)
        if not (train_has and test_has) and not (train_ms == 0 and test_has):
            raise InfeasiblePolicy(
                f"theme {theme.value} not represented in both train and test"
            )
    rules["theme_representation"] = {"status": "satisfied"}
    rules["block_length"] = {"status": "satisfied"}
    rules["split_disjointness"] = {"status": "satisfied"}

    plan.totals = {
        "train_ms": train_ms,
        "validation_ms": val_ms,
        "test_ms": test_ms,
        "total_ms": total_ms,
        "test_ad_share": test_share(),
        "train_test_ratio": ratio,
    }
    return plan


# --- independent constraint checkers (used by tests and the manifest) ------


def check_block_lengths(plan: SplitPlan) -> bool:
    return all(b.block_end_ms - b.block_start_ms == BLOCK_MS for b in plan.blocks)


def check_block_disjoint(plan: SplitPlan) -> bool:
    by_rec: dict[str, list[TestBlock]] = {}
    for block in plan.blocks:
        by_rec.setdefault(block.recording_id, []).append(block)
    for blocks in by_rec.values():
        blocks.sort(key=lambda b: b.block_start_ms)
        for a, b in zip(blocks, blocks[1:]):
            if a.block_end_ms > b.block_start_ms:
                return False
    return True


def check_block_counts(
    plan: SplitPlan, corpus: Sequence[Timeline], policy: SplitPolicy
) -> bool:
    days: dict[tuple[str, str], list[Timeline]] = {}
    for timeline in corpus:
        days.setdefault(_station_day(timeline), []).append(timeline)
    counts: dict[tuple[str, str], int] = {}
    by_id = {t.recording_id: t for t in corpus}
    for block in plan.blocks:
        day = _station_day(by_id[block.recording_id])
        counts[day] = counts.get(day, 0) + 1
    for day, recordings in days.items():
        eligible = [
            t
            for t in recordings
            if t.duration_ms >= BLOCK_MS and t.recording_id not in policy.train_only_ids
        ]
        if not eligible:
            continue
        tagged_ms = sum(t.duration_ms for t in recordings)
        need = (
            policy.blocks_big_day
            if tagged_ms >= policy.big_day_hours * 3_600_000
            else policy.blocks_small_day
        )
        if counts.get(day, 0) < need:
            return False
    return True


def check_split_disjoint(plan: SplitPlan, corpus: Sequence[Timeline]) -> bool:
    by_id = {t.recording_id: t for t in corpus}
    for rid, ranges in plan.ranges.items():
        cursor = 0
        for r in sorted(ranges, key=lambda r: r.start_ms):
            if r.start_ms != cursor:
                return False
            cursor = r.end_ms
        if cursor != by_id[rid].duration_ms:
            return False
    return True


def check_ratio(plan: SplitPlan, policy: SplitPolicy) -> bool:
    test_ms = plan.split_ms(Split.TEST)
    if test_ms == 0:
        return False
    ratio = plan.split_ms(Split.TRAIN) / test_ms
    return policy.ratio_min <= ratio <= policy.ratio_max


def check_test_ad_share(
    plan: SplitPlan, corpus: Sequence[Timeline], policy: SplitPolicy
) -> bool:
    by_id = {t.recording_id: t for t in corpus}
    ad = sum(
        overlap_ms(by_id[b.recording_id], b.block_start_ms, b.block_end_ms, Label.AD)
        for b in plan.blocks
    )
    total = BLOCK_MS * len(plan.blocks)
    if total == 0:
        return False
    return abs(ad / total - policy.test_ad_target) <= policy.test_ad_tolerance


def check_zero_ad_block(plan: SplitPlan, corpus: Sequence[Timeline]) -> bool:
    if any(b.ad_ms == 0 for b in plan.blocks):
        return True
    return not zero_ad_stretch_exists(corpus)  # vacuously fine when impossible


def check_block_ad_times(plan: SplitPlan, corpus: Sequence[Timeline]) -> bool:
    by_id = {t.recording_id: t for t in corpus}
    return all(
        b.ad_ms
        == overlap_ms(by_id[b.recording_id], b.block_start_ms, b.block_end_ms, Label.AD)
        for b in plan.blocks
    )


# --- dataset emission -------------------------------------------------------


def emit_dataset(samples: Sequence[WindowSample], destination: str | Path) -> dict:
    """Write one JSON object per line, sorted by (recording, window).

    Returns (and writes alongside) a manifest with per-split/label counts
    and a digest of the emitted bytes; equal samples always produce equal
    bytes, so digests are comparable across runs.
    """
    if not samples:
        raise ArgumentError("refusing to emit an empty dataset")
    destination = Path(destination)
    ordered = sorted(samples, key=lambda s: (s.recording_id, s.window_index))
    try:
        destination.parent.mkdir(parents=True, exist_ok=True)
        with open(destination, "w", encoding="utf-8") as handle:
            for sample in ordered:
                handle.write(json.dumps(sample.to_row(), ensure_ascii=False) + "\n")
        digest = hashlib.sha256(destination.read_bytes()).hexdigest()
    except OSError as exc:
        raise IoError(f"cannot emit dataset to {destination}: {exc}") from exc

    counts: dict[str, dict[str, int]] = {}
    for sample in ordered:
        per_split = counts.setdefault(sample.split.value, {})
        per_split[sample.label.value] = per_split.get(sample.label.value, 0) + 1
    manifest = {
        "path": str(destination),
        "samples": len(ordered),
        "counts": counts,
        "sha256": digest,
    }
    manifest_path = destination.with_suffix(destination.suffix + ".manifest.json")
    try:
        manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write manifest: {exc}") from exc
    return manifest


def read_dataset(path: str | Path) -> list[WindowSample]:
    samples = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                samples.append(WindowSample.from_row(json.loads(line)))
    return samples
