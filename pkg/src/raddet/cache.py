"""Content-addressed transcription cache.

Layout: ``<root>/<recording-digest>/<seg>-<win>-<size>.segments.jsonl``
plus a ``.meta.json`` sidecar carrying the backend identity and the
wall-clock cost of the original transcription. The digest covers the
recording's audio bytes, so re-recorded audio never aliases; a sidecar
identity mismatch is treated as a miss and overwritten.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import IoError
from .protocol import ModelSize
from .windowing import Segmentation, TranscriptSegment


def recording_digest(audio_path: str | Path) -> str:
    hasher = hashlib.sha256()
    try:
        with open(audio_path, "rb") as handle:
            for block in iter(lambda: handle.read(1 << 20), b""):
                hasher.update(block)
    except OSError as exc:
        raise IoError(f"cannot digest {audio_path}: {exc}") from exc
    return hasher.hexdigest()


def entry_basename(
    segmentation: Segmentation, window_len_s: int, model_size: ModelSize
) -> str:
    return f"{segmentation.value}-{window_len_s}-{model_size.value}"


@dataclass(frozen=True)
class CacheEntry:
    segments: tuple[TranscriptSegment, ...]
    backend_identity: str
    transcribe_wall_s: float
    audio_ms: int

    @property
    def seconds_per_audio_hour(self) -> float:
        return self.transcribe_wall_s / (self.audio_ms / 3_600_000.0)


class TranscriptionCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _paths(
        self,
        digest: str,
        segmentation: Segmentation,
        window_len_s: int,
        model_size: ModelSize,
    ) -> tuple[Path, Path]:
        base = self.root / digest / entry_basename(segmentation, window_len_s, model_size)
        return base.with_suffix(".segments.jsonl"), base.with_suffix(".meta.json")

    def load(
        self,
        digest: str,
        segmentation: Segmentation,
        window_len_s: int,
        model_size: ModelSize,
        backend_identity: str | None = None,
    ) -> CacheEntry | None:
        """Stored entry, or None on miss or backend-identity mismatch."""
        segments_path, meta_path = self._paths(
            digest, segmentation, window_len_s, model_size
        )
        if not segments_path.exists() or not meta_path.exists():
            return None
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None
        if backend_identity is not None and meta.get("backend_identity") != backend_identity:
            return None
        segments = []
        try:
            with open(segments_path, encoding="utf-8") as handle:
                for line in handle:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    segments.append(
                        TranscriptSegment(row["start_ms"], row["end_ms"], row["text"])
                    )
        except (OSError, json.JSONDecodeError, KeyError):
            return None
        return CacheEntry(
            segments=tuple(segments),
            backend_identity=meta["backend_identity"],
            transcribe_wall_s=float(meta["transcribe_wall_s"]),
            audio_ms=int(meta["audio_ms"]),
        )

    def store(
        self,
        digest: str,
        segmentation: Segmentation,
        window_len_s: int,
        model_size: ModelSize,
        entry: CacheEntry,
    ) -> None:
        segments_path, meta_path = self._paths(
            digest, segmentation, window_len_s, model_size
        )
        try:
            segments_path.parent.mkdir(parents=True, exist_ok=True)
            with open(segments_path, "w", encoding="utf-8") as handle:
                for segment in entry.segments:
                    handle.write(
                        json.dumps(
                            {
                                "start_ms": segment.start_ms,
                                "end_ms": segment.end_ms,
                                "text": segment.text,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
            meta_path.write_text(
                json.dumps(
                    {
                        "backend_identity": entry.backend_identity,
                        "transcribe_wall_s": entry.transcribe_wall_s,
                        "audio_ms": entry.audio_ms,
                    },
                    indent=2,
                ),
                encoding="utf-8",
            )
        except OSError as exc:
            raise IoError(f"cannot write cache entry: {exc}") from exc
