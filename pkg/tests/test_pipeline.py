"""Transcription caching, text projection, and block evaluation."""

import pytest

from raddet.backends import BackendClient, InProcessTransport
from raddet.cache import TranscriptionCache
from raddet.corpus import Recording, load_corpus
from raddet.evaluation import oracle_window_labels
from raddet.mocks import OracleClassifier, ScriptTranscriber
from raddet.pipeline import (
    BlockView,
    backend_identity,
    evaluate_block,
    transcribe_recording,
)
from raddet.protocol import BackendDescriptor, BackendKind, ModelSize, Transport
from raddet.synth import generate_corpus
from raddet.windowing import Segmentation, assign_segments


@pytest.fixture(scope="module")
def mini_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini-corpus")
    generate_corpus(root, "mini", seed=11)
    return load_corpus(root)


def transcriber(size=ModelSize.SMALL, seed=0, command="mock-transcriber"):
    descriptor = BackendDescriptor(
        BackendKind.TRANSCRIBER, Transport.SUBPROCESS_STDIO, command, size
    )
    return BackendClient(
        descriptor, transport=InProcessTransport(ScriptTranscriber(size, seed).handle)
    )


def oracle_classifier(recordings: list[Recording], window_len_s, segmentation, cache_root=None):
    handler = OracleClassifier(
        corpus={r.recording_id: (r.timeline, r.audio_path) for r in recordings},
        window_len_s=window_len_s,
        segmentation=segmentation,
        model_size=ModelSize.SMALL,
        cache_root=cache_root,
    )
    descriptor = BackendDescriptor(
        BackendKind.CLASSIFIER, Transport.SUBPROCESS_STDIO, "mock-oracle"
    )
    return BackendClient(descriptor, transport=InProcessTransport(handler.handle))


class TestTranscribeRecording:
    def test_cold_then_cached(self, mini_corpus, tmp_path):
        cache = TranscriptionCache(tmp_path / "cache")
        recording = mini_corpus[0]
        client = transcriber()
        cold = transcribe_recording(recording, Segmentation.EXACT, 10, client, cache)
        warm = transcribe_recording(recording, Segmentation.EXACT, 10, client, cache)
        assert not cold.from_cache
        assert warm.from_cache
        assert warm.texts == cold.texts
        assert warm.wall_s == cold.wall_s  # stored measurement is reused

    def test_identity_mismatch_is_a_miss(self, mini_corpus, tmp_path):
        cache = TranscriptionCache(tmp_path / "cache")
        recording = mini_corpus[0]
        a = transcriber(command="backend-a")
        b = transcriber(command="backend-b")
        first = transcribe_recording(recording, Segmentation.EXACT, 40, a, cache)
        second = transcribe_recording(recording, Segmentation.EXACT, 40, b, cache)
        assert not first.from_cache
        assert not second.from_cache
        assert backend_identity(a.descriptor) != backend_identity(b.descriptor)

    def test_nonexact_texts_match_assignment(self, mini_corpus, tmp_path):
        cache = TranscriptionCache(tmp_path / "cache")
        recording = mini_corpus[1]
        client = transcriber()
        result = transcribe_recording(
            recording, Segmentation.NON_EXACT, 20, client, cache
        )
        assert result.segments is not None
        assert result.texts == assign_segments(result.grid, result.segments)

    def test_exact_chunk_texts_identical_across_variants(self, mini_corpus, tmp_path):
        recording = mini_corpus[2]
        cache = TranscriptionCache(tmp_path / "cache")
        small = transcribe_recording(
            recording, Segmentation.EXACT, 10,
            transcriber(ModelSize.SMALL, seed=1, command="a"), cache,
        )
        large = transcribe_recording(
            recording, Segmentation.EXACT, 10,
            transcriber(ModelSize.LARGE, seed=2, command="b"), cache,
        )
        assert small.texts == large.texts

    def test_nonexact_segments_differ_across_sizes(self, mini_corpus, tmp_path):
        recording = mini_corpus[2]
        cache = TranscriptionCache(tmp_path / "cache")
        small = transcribe_recording(
            recording, Segmentation.NON_EXACT, 10,
            transcriber(ModelSize.SMALL, command="a"), cache,
        )
        large = transcribe_recording(
            recording, Segmentation.NON_EXACT, 10,
            transcriber(ModelSize.LARGE, command="b"), cache,
        )
        assert small.segments != large.segments


class TestEvaluateBlock:
    def test_oracle_closure_full_view_exact(self, mini_corpus, tmp_path):
        cache = TranscriptionCache(tmp_path / "cache")
        classifier = oracle_classifier(mini_corpus, 10, Segmentation.EXACT)
        for recording in mini_corpus[:4]:
            result = transcribe_recording(
                recording, Segmentation.EXACT, 10, transcriber(), cache
            )
            report = evaluate_block(
                BlockView.full(recording), result, classifier, "oracle", 10
            )
            assert report.f1_macro == pytest.approx(report.ceiling_f1_macro, abs=1e-12)

    def test_oracle_closure_nonexact_uses_same_assignment(self, mini_corpus, tmp_path):
        cache_root = tmp_path / "cache"
        cache = TranscriptionCache(cache_root)
        classifier = oracle_classifier(
            mini_corpus, 20, Segmentation.NON_EXACT, cache_root=cache_root
        )
        for recording in mini_corpus[:4]:
            result = transcribe_recording(
                recording, Segmentation.NON_EXACT, 20, transcriber(), cache
            )
            report = evaluate_block(
                BlockView.full(recording), result, classifier, "oracle", 20
            )
            assert report.f1_macro == pytest.approx(report.ceiling_f1_macro, abs=1e-12)

    def test_block_ceiling_matches_recording_labels(self, mini_corpus, tmp_path):
        # Slice a 10-minute-aligned block and check the ceiling labels come
        # from the recording-level grid.
        cache = TranscriptionCache(tmp_path / "cache")
        recording = mini_corpus[0]
        result = transcribe_recording(
            recording, Segmentation.EXACT, 10, transcriber(), cache
        )
        block = BlockView.over(recording, 600_000, 1_200_000)
        labels = oracle_window_labels(recording.timeline, result.grid, None)
        classifier = oracle_classifier(mini_corpus, 10, Segmentation.EXACT)
        report = evaluate_block(block, result, classifier, "oracle", 10)
        assert report.f1_macro == pytest.approx(report.ceiling_f1_macro, abs=1e-12)
        assert labels  # recording-level labels exist for projection
