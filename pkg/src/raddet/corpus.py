"""Corpus layout: annotation documents plus their audio references.

A corpus directory holds ``annotations/<recording_id>.json`` in the
canonical format and ``audio/<recording_id>.<ext>`` — real audio for
production backends or a ``.jsonl`` utterance script for the mocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .cache import recording_digest
from .errors import SchemaError
from .timeline import Timeline, load_annotation_file


@dataclass(frozen=True)
class Recording:
    recording_id: str
    timeline: Timeline
    audio_path: Path

    @property
    def digest(self) -> str:
        return recording_digest(self.audio_path)


def find_audio(corpus_root: Path, recording_id: str) -> Path:
    audio_dir = corpus_root / "audio"
    matches = sorted(audio_dir.glob(f"{recording_id}.*"))
    if not matches:
        raise SchemaError(f"no audio file for recording {recording_id!r} in {audio_dir}")
    if len(matches) > 1:
        raise SchemaError(
            f"ambiguous audio for {recording_id!r}: {[m.name for m in matches]}"
        )
    return matches[0]


def load_corpus(corpus_root: str | Path) -> list[Recording]:
    """All recordings under a corpus root, sorted by recording id."""
    root = Path(corpus_root)
    annotation_dir = root / "annotations"
    if not annotation_dir.is_dir():
        raise SchemaError(f"{root} has no annotations/ directory")
    recordings = []
    for path in sorted(annotation_dir.glob("*.json")):
        timeline = load_annotation_file(path)
        recording_id = path.stem
        recordings.append(
            Recording(
                recording_id=recording_id,
                timeline=timeline,
                audio_path=find_audio(root, recording_id),
            )
        )
    if not recordings:
        raise SchemaError(f"no annotation documents found under {annotation_dir}")
    return recordings


def corpus_index(recordings: list[Recording]) -> dict[str, tuple[Timeline, Path]]:
    """Oracle-friendly view keyed by recording id."""
    return {r.recording_id: (r.timeline, r.audio_path) for r in recordings}
