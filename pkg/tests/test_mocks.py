"""Mock backend behavior: determinism, oracle correctness, keyword expectations."""

import json
import random

import pytest

from raddet.cache import CacheEntry, TranscriptionCache, recording_digest
from raddet.evaluation import oracle_window_labels
from raddet.mocks import (
    AD_SENTINEL,
    KeywordClassifier,
    MemorizingClassifier,
    OracleClassifier,
    ScriptTranscriber,
    parse_audio_ref,
)
from raddet.protocol import ModelSize, make_request
from raddet.timeline import Label, majority_label
from raddet.windowing import Segmentation, TranscriptSegment, build_grid

from .conftest import make_timeline


def write_script(path, utterances):
    with open(path, "w", encoding="utf-8") as handle:
        for u in utterances:
            handle.write(json.dumps(u) + "\n")


@pytest.fixture
def script_path(tmp_path):
    path = tmp_path / "rec.jsonl"
    write_script(
        path,
        [
            {"start_ms": 1_000, "end_ms": 5_000, "text": "uno dos tres cuatro"},
            {"start_ms": 6_000, "end_ms": 11_000, "text": f"{AD_SENTINEL} gran rebaja"},
            {"start_ms": 12_000, "end_ms": 19_000, "text": "vuelta al estudio amigos"},
        ],
    )
    return path


def transcribe(handler, ref, mode, offset=0, size="small", rid=1):
    request = make_request(rid, "transcribe", {
        "audio_path": str(ref), "mode": mode, "model_size": size, "offset_ms": offset,
    })
    response = handler.handle(request)
    assert "error" not in response, response
    return response["payload"]


class TestParseAudioRef:
    def test_fragment(self):
        path, start, end = parse_audio_ref("/a/b.jsonl#1500-2500")
        assert (str(path), start, end) == ("/a/b.jsonl", 1500, 2500)

    def test_plain_path(self):
        path, start, end = parse_audio_ref("/a/b.wav")
        assert (str(path), start, end) == ("/a/b.wav", None, None)


class TestScriptTranscriber:
    def test_chunk_words_split_at_boundaries(self, script_path):
        handler = ScriptTranscriber(ModelSize.SMALL)
        # Words of the first utterance sit at midpoints 1.5/2.5/3.5/4.5 s.
        left = transcribe(handler, f"{script_path}#0-3000", "chunk")["text"]
        right = transcribe(handler, f"{script_path}#3000-6000", "chunk", 3000)["text"]
        assert left == "uno dos"
        assert right == "tres cuatro"

    def test_chunk_text_identical_across_sizes_and_seeds(self, script_path):
        texts = set()
        for size in ModelSize:
            for seed in (0, 7):
                handler = ScriptTranscriber(size, seed=seed)
                texts.add(
                    transcribe(
                        handler, f"{script_path}#0-19000", "chunk", size=size.value
                    )["text"]
                )
        assert len(texts) == 1

    def test_long_form_segments_sorted_and_within_range(self, script_path):
        handler = ScriptTranscriber(ModelSize.LARGE)
        payload = transcribe(handler, f"{script_path}#0-19000", "long_form", size="large")
        segments = payload["segments"]
        assert segments
        for a, b in zip(segments, segments[1:]):
            assert a["end_ms"] <= b["start_ms"]
        assert all(0 <= s["start_ms"] < s["end_ms"] <= 19_000 for s in segments)

    def test_long_form_granularity_differs_by_size(self, tmp_path):
        path = tmp_path / "long.jsonl"
        write_script(
            path,
            [
                {"start_ms": i * 3_000, "end_ms": i * 3_000 + 2_800, "text": f"frase {i}"}
                for i in range(20)
            ],
        )
        counts = {}
        for size in ModelSize:
            handler = ScriptTranscriber(size)
            counts[size] = len(
                transcribe(handler, f"{path}#0-60000", "long_form", size=size.value)["segments"]
            )
        assert counts[ModelSize.LARGE] > counts[ModelSize.SMALL]

    def test_long_form_echoes_sparse_scripted_segments(self, tmp_path):
        # Utterances separated by >4 s never merge, so a 600 s parent
        # request echoes the script exactly, at any size.
        utterances = [
            {"start_ms": 10_000, "end_ms": 14_000, "text": "uno"},
            {"start_ms": 30_000, "end_ms": 33_000, "text": "dos"},
            {"start_ms": 300_000, "end_ms": 304_500, "text": "tres"},
        ]
        path = tmp_path / "sparse.jsonl"
        write_script(path, utterances)
        for size in ModelSize:
            handler = ScriptTranscriber(size, seed=3)
            payload = transcribe(
                handler, f"{path}#0-600000", "long_form", size=size.value
            )
            assert payload["segments"] == utterances

    def test_deterministic_given_seed(self, script_path):
        a = ScriptTranscriber(ModelSize.MEDIUM, seed=11)
        b = ScriptTranscriber(ModelSize.MEDIUM, seed=11)
        ref = f"{script_path}#0-19000"
        assert transcribe(a, ref, "long_form", size="medium") == transcribe(
            b, ref, "long_form", size="medium"
        )

    def test_size_mismatch_rejected(self, script_path):
        handler = ScriptTranscriber(ModelSize.SMALL)
        request = make_request(1, "transcribe", {
            "audio_path": str(script_path), "mode": "chunk",
            "model_size": "large", "offset_ms": 0,
        })
        assert handler.handle(request)["error"]["code"] == "bad_request"


class TestOracleClassifier:
    def classify(self, handler, texts, rid, base):
        request = make_request(5, "classify", {
            "model_ref": "oracle",
            "texts": texts,
            "context": {"recording_id": rid, "base_index": base},
        })
        response = handler.handle(request)
        assert "error" not in response, response
        return [Label.from_wire(v) for v in response["payload"]["labels"]]

    def test_exact_matches_majority_labels(self, tmp_path, sixty_second_timeline):
        audio = tmp_path / "rec.jsonl"
        write_script(audio, [])
        handler = OracleClassifier(
            corpus={"rec": (sixty_second_timeline, audio)},
            window_len_s=10,
            segmentation=Segmentation.EXACT,
            model_size=ModelSize.SMALL,
        )
        labels = self.classify(handler, [""] * 6, "rec", 0)
        expected = [
            majority_label(sixty_second_timeline, i * 10_000, (i + 1) * 10_000)
            for i in range(6)
        ]
        assert labels == expected

    def test_batch_windows_line_up_via_base_index(self, tmp_path, sixty_second_timeline):
        audio = tmp_path / "rec.jsonl"
        write_script(audio, [])
        handler = OracleClassifier(
            corpus={"rec": (sixty_second_timeline, audio)},
            window_len_s=10,
            segmentation=Segmentation.EXACT,
            model_size=ModelSize.SMALL,
        )
        first = self.classify(handler, ["", ""], "rec", 0)
        rest = self.classify(handler, ["", "", "", ""], "rec", 2)
        expected = [
            majority_label(sixty_second_timeline, i * 10_000, (i + 1) * 10_000)
            for i in range(6)
        ]
        assert first + rest == expected

    def test_context_required(self, tmp_path, sixty_second_timeline):
        audio = tmp_path / "rec.jsonl"
        write_script(audio, [])
        handler = OracleClassifier(
            corpus={"rec": (sixty_second_timeline, audio)},
            window_len_s=10,
            segmentation=Segmentation.EXACT,
            model_size=ModelSize.SMALL,
        )
        request = make_request(1, "classify", {"model_ref": "oracle", "texts": ["x"]})
        assert handler.handle(request)["error"]["code"] == "bad_request"

    def test_nonexact_uses_cached_assignment(self, tmp_path):
        truth = make_timeline(
            [0, 5_000, 15_000, 20_000], [Label.NO_AD, Label.AD, Label.NO_AD]
        )
        audio = tmp_path / "rec.jsonl"
        write_script(audio, [{"start_ms": 0, "end_ms": 1, "text": "x"}])
        cache = TranscriptionCache(tmp_path / "cache")
        segments = (TranscriptSegment(5_000, 15_000, "promo"),)
        cache.store(
            recording_digest(audio),
            Segmentation.NON_EXACT,
            10,
            ModelSize.SMALL,
            CacheEntry(segments, "test", 0.1, 20_000),
        )
        handler = OracleClassifier(
            corpus={"rec": (truth, audio)},
            window_len_s=10,
            segmentation=Segmentation.NON_EXACT,
            model_size=ModelSize.SMALL,
            cache_root=tmp_path / "cache",
        )
        labels = self.classify(handler, ["promo", ""], "rec", 0)
        expected = oracle_window_labels(truth, build_grid(20_000, 10), list(segments))
        assert labels == [expected[0], expected[1]]
        # Window 0 holds the whole segment (tie toward earlier window),
        # whose content is pure ad.
        assert labels[0] is Label.AD


class TestKeywordAndMemorizer:
    def test_keyword_expectation_list(self, tmp_path):
        handler = KeywordClassifier()
        texts, expected = [], []
        for i in range(40):
            if i % 4 == 0:
                texts.append(f"compre {AD_SENTINEL} ya")
                expected.append("ad")
            else:
                texts.append(f"programa numero {i}")
                expected.append("no-ad")
        request = make_request(2, "classify", {"model_ref": "m", "texts": texts})
        assert handler.handle(request)["payload"]["labels"] == expected

    def test_memorizer_achieves_perfect_train_f1_on_100_samples(self, tmp_path):
        rng = random.Random(17)
        rows = [
            {
                "text": f"muestra {i} " + " ".join(
                    rng.choice(["radio", "tienda", "compra", "cancion"])
                    for _ in range(4)
                ),
                "label": "ad" if i % 5 == 0 else "no-ad",
            }
            for i in range(100)
        ]
        dataset = tmp_path / "train.jsonl"
        dataset.write_text(
            "".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8"
        )
        handler = MemorizingClassifier(tmp_path / "models")
        train_request = make_request(1, "train", {
            "train_path": str(dataset), "val_path": str(dataset),
            "config": {
                "learning_rate": 5e-5, "epochs": 3, "warmup_ratio": 0.1,
                "weight_decay": 0.01, "adam_epsilon": 1e-8,
            },
        })
        response = handler.handle(train_request)
        assert "error" not in response
        model_ref = response["payload"]["model_ref"]
        # Memorization saturates immediately: perfect validation F1 at
        # every epoch, best checkpoint is epoch 1.
        assert response["payload"]["epoch_val_f1"] == [100.0, 100.0, 100.0]
        classify_request = make_request(2, "classify", {
            "model_ref": model_ref, "texts": [r["text"] for r in rows] + ["unseen"],
        })
        labels = handler.handle(classify_request)["payload"]["labels"]
        assert labels[:-1] == [r["label"] for r in rows]  # train F1 = 100.0
        assert labels[-1] == "no-ad"
