"""Synthetic broadcast corpora with ground truth and utterance scripts.

Generates, per recording, a canonical annotation document and the
"audio" script the mock transcribers read. Ad breaks follow the shape of
real programming: clusters of 15-35 s spots (peaking at 20-30 s)
separated by long program stretches, with the overall ad share steered
by a target fraction. Everything derives from one seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from random import Random

from .errors import ArgumentError
from .mocks import AD_SENTINEL
from .timeline import TICK_MS, Label, Theme

AD_WORDS = [
    "descuento", "llama", "ahora", "gratis", "promoción", "compra",
    "seguro", "financiación", "rebajas", "tienda", "envío", "cliente",
    "precio", "increíble", "aprovecha",
]
CHATTER_WORDS = [
    "noticias", "tiempo", "música", "canción", "entrevista", "deporte",
    "mañana", "programa", "invitado", "historia", "ciudad", "gente",
    "momento", "gracias", "bueno", "vamos", "tarde", "semana", "disco",
    "estudio", "teléfono", "pregunta",
]

#: Fraction of the no-ad airtime that carries speech, per theme. Music
#: stations leave long text-free stretches (songs); talk shows rarely do.
SPEECH_COVERAGE = {Theme.MUSIC: 0.3, Theme.TALK_SHOW: 0.85}


def _snap(rng_value: float) -> int:
    return max(TICK_MS, int(round(rng_value / TICK_MS)) * TICK_MS)


def _sentence(rng: Random, words: list[str], sentinel: str | None = None) -> str:
    tokens = [rng.choice(words) for _ in range(rng.randint(4, 9))]
    if sentinel is not None:
        tokens.insert(rng.randrange(len(tokens) + 1), sentinel)
    return " ".join(tokens)


@dataclass(frozen=True)
class RecordingPlan:
    station_id: str
    theme: Theme
    recorded_at: datetime
    duration_ms: int
    ad_fraction: float
    #: Carve one ad span per ~12 as a short jingle (analytics-only marker).
    jingle_share: float = 0.08

    @property
    def recording_id(self) -> str:
        return f"{self.station_id}_{self.recorded_at.strftime('%Y%m%dT%H%M%S')}"


def _schedule(rng: Random, plan: RecordingPlan) -> list[tuple[int, int, Label, bool]]:
    """(start, end, label, jingle) spans covering [0, duration)."""
    duration = plan.duration_ms
    if plan.ad_fraction <= 0.0:
        return [(0, duration, Label.NO_AD, False)]

    # Mean program stretch so that cluster_size ads of mean length hit the
    # target fraction on average.
    mean_ad_ms = 25_000.0
    mean_cluster = 3.0
    mean_program_ms = mean_cluster * mean_ad_ms * (1.0 - plan.ad_fraction) / plan.ad_fraction

    spans: list[tuple[int, int, Label, bool]] = []
    cursor = 0
    # Lead with a program stretch about half the usual length.
    program = _snap(rng.uniform(0.3, 0.8) * mean_program_ms)
    while cursor < duration:
        end = min(cursor + program, duration)
        spans.append((cursor, end, Label.NO_AD, False))
        cursor = end
        if cursor >= duration:
            break
        for _ in range(rng.randint(1, 5)):
            ad_len = _snap(rng.triangular(15_000, 35_000, 25_000))
            jingle = rng.random() < plan.jingle_share
            if jingle:
                ad_len = _snap(rng.uniform(4_000, 9_000))
            end = min(cursor + ad_len, duration)
            if end - cursor < TICK_MS:
                break
            spans.append((cursor, end, Label.AD, jingle))
            cursor = end
            if cursor >= duration:
                break
        program = _snap(rng.uniform(0.6, 1.4) * mean_program_ms)
    # A recording must not end the instant an ad does more often than real
    # schedules do; if the last span is an ad reaching the end, that is fine.
    return spans


def _speech_for_span(
    rng: Random,
    start: int,
    end: int,
    label: Label,
    theme: Theme,
    noise_prob: float,
) -> list[dict]:
    utterances = []
    cursor = start
    coverage = 1.0 if label is Label.AD else SPEECH_COVERAGE[theme]
    while cursor < end - 500:
        u_len = _snap(rng.uniform(2_000, 5_000 if label is Label.AD else 8_000))
        u_end = min(cursor + u_len, end)
        if u_end - cursor >= 500:
            if label is Label.AD:
                sentinel = AD_SENTINEL if rng.random() < 0.9 else None
                text = _sentence(rng, AD_WORDS, sentinel)
            else:
                sentinel = AD_SENTINEL if rng.random() < noise_prob else None
                text = _sentence(rng, CHATTER_WORDS, sentinel)
            utterances.append({"start_ms": cursor, "end_ms": u_end, "text": text})
        if coverage >= 1.0:
            gap = rng.choice([0, 0, TICK_MS])
        else:
            gap = _snap(u_len * (1.0 - coverage) / coverage * rng.uniform(0.5, 1.5))
        cursor = u_end + gap
    return utterances


def generate_recording(
    rng: Random, plan: RecordingPlan, noise_prob: float = 0.01
) -> tuple[dict, list[dict]]:
    """One canonical annotation document and its utterance script."""
    spans = _schedule(rng, plan)
    document = {
        "station_id": plan.station_id,
        "recorded_at": plan.recorded_at.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "theme": plan.theme.value,
        "duration_ms": plan.duration_ms,
        "spans": [],
    }
    for start, end, label, jingle in spans:
        entry = {
            "start_ms": start,
            "end_ms": end,
            "label": label.value,
            "confidence": round(rng.uniform(0.85, 1.0), 2),
        }
        if jingle:
            entry["jingle"] = True
        document["spans"].append(entry)

    script: list[dict] = []
    for start, end, label, _ in spans:
        script.extend(_speech_for_span(rng, start, end, label, plan.theme, noise_prob))
    return document, script


def _plans(profile: str, seed: int) -> list[RecordingPlan]:
    base_day = datetime(2022, 5, 31, tzinfo=timezone.utc)
    rng = Random(seed * 7919 + 13)

    def at(day: int, hour: int, minute: int = 0) -> datetime:
        return base_day + timedelta(days=day, hours=hour, minutes=minute)

    if profile == "mini":
        # Ten half-hour recordings, ~4% ad time, 20-30 s ads: the
        # paper-like corpus for closure/ordering checks.
        plans = []
        for i in range(10):
            theme = Theme.MUSIC if i % 3 else Theme.TALK_SHOW
            duration = 30 * 60_000 + rng.choice([0, 12_300, 47_700, 300])
            plans.append(
                RecordingPlan(
                    station_id=f"station_{chr(ord('a') + i % 5)}",
                    theme=theme,
                    recorded_at=at(i // 5, 6 + 2 * (i % 5)),
                    duration_ms=duration,
                    ad_fraction=rng.uniform(0.03, 0.055),
                )
            )
        return plans

    if profile == "splits":
        # Seven stations for the split-policy criteria: one 24 h
        # station-day (two test blocks), six 16 h station-days (one
        # each), a zero-ad overnight recording, and a high-ad morning.
        plans = []
        hours_16 = [(6, 5), (11, 6), (17, 5)]  # (start hour, length h)
        for s in range(7):
            station = f"station_{chr(ord('a') + s)}"
            theme = Theme.TALK_SHOW if s >= 5 else Theme.MUSIC
            if s == 0:
                for k in range(4):
                    plans.append(
                        RecordingPlan(
                            station_id=station,
                            theme=theme,
                            recorded_at=at(0, 6 * k),
                            duration_ms=6 * 3_600_000,
                            ad_fraction=rng.uniform(0.03, 0.05),
                        )
                    )
                continue
            for j, (hour, length) in enumerate(hours_16):
                if s == 1 and j == 0:
                    fraction = 0.13  # morning drive, heavy spots
                elif s == 2 and j == 2:
                    fraction = 0.0  # overnight, advertiser-free
                else:
                    fraction = rng.uniform(0.02, 0.045)
                plans.append(
                    RecordingPlan(
                        station_id=station,
                        theme=theme,
                        recorded_at=at(0, hour),
                        duration_ms=length * 3_600_000,
                        ad_fraction=fraction,
                    )
                )
        return plans

    if profile == "sweep":
        # Small corpus for grid runs: two 3 h block donors (one music,
        # one talk, ad-light vs ad-heavy), an hour of training and half
        # an hour of validation per theme.
        return [
            RecordingPlan("station_a", Theme.MUSIC, at(0, 22), 3 * 3_600_000, 0.006),
            RecordingPlan("station_b", Theme.TALK_SHOW, at(0, 7), 3 * 3_600_000, 0.09),
            RecordingPlan("station_a", Theme.MUSIC, at(1, 9), 3_600_000, 0.05),
            RecordingPlan("station_b", Theme.TALK_SHOW, at(1, 15), 3_600_000, 0.05),
            RecordingPlan("station_c", Theme.MUSIC, at(1, 12), 1_800_000, 0.04),
            RecordingPlan("station_d", Theme.TALK_SHOW, at(1, 18), 1_800_000, 0.04),
        ]

    raise ArgumentError(f"unknown corpus profile {profile!r}")


def generate_corpus(out_dir: str | Path, profile: str, seed: int) -> dict:
    """Write annotations/ and audio/ under ``out_dir``; returns the manifest."""
    root = Path(out_dir)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    (root / "audio").mkdir(parents=True, exist_ok=True)

    manifest: dict = {"profile": profile, "seed": seed, "recordings": []}
    for plan in _plans(profile, seed):
        rng = Random(f"{seed}:{plan.recording_id}")
        document, script = generate_recording(rng, plan)
        annotation_path = root / "annotations" / f"{plan.recording_id}.json"
        annotation_path.write_text(
            json.dumps(document, ensure_ascii=False, indent=1), encoding="utf-8"
        )
        script_path = root / "audio" / f"{plan.recording_id}.jsonl"
        with open(script_path, "w", encoding="utf-8") as handle:
            for utterance in script:
                handle.write(json.dumps(utterance, ensure_ascii=False) + "\n")
        ad_ms = sum(
            span["end_ms"] - span["start_ms"]
            for span in document["spans"]
            if span["label"] == Label.AD.value
        )
        manifest["recordings"].append(
            {
                "recording_id": plan.recording_id,
                "theme": plan.theme.value,
                "duration_ms": plan.duration_ms,
                "ad_ms": ad_ms,
            }
        )
    (root / "corpus.json").write_text(
        json.dumps(manifest, indent=1), encoding="utf-8"
    )
    return manifest
