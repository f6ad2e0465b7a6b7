"""Wire schema validation and round-trip properties."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raddet.errors import ProtocolError, SchemaError
from raddet.protocol import (
    BackendDescriptor,
    BackendKind,
    ClassifierTrainingConfig,
    ModelSize,
    Prediction,
    PredictionFlag,
    Transport,
    make_error_response,
    make_request,
    make_response,
    parse_error,
    validate_request,
    validate_response,
)
from raddet.timeline import Label

text_strategy = st.text(max_size=40)

transcribe_payloads = st.fixed_dictionaries(
    {
        "audio_path": text_strategy.filter(bool),
        "mode": st.sampled_from(["chunk", "long_form"]),
        "model_size": st.sampled_from(["small", "medium", "large"]),
        "offset_ms": st.integers(min_value=0, max_value=10**9),
    }
)
classify_payloads = st.fixed_dictionaries(
    {"model_ref": text_strategy, "texts": st.lists(text_strategy, max_size=8)}
)
train_payloads = st.fixed_dictionaries(
    {
        "train_path": text_strategy,
        "val_path": text_strategy,
        "config": st.just(ClassifierTrainingConfig().to_payload()),
    }
)
llm_payloads = st.fixed_dictionaries({"system": text_strategy, "user": text_strategy})


class TestRequestRoundTrip:
    @given(
        st.integers(min_value=0, max_value=2**31),
        st.one_of(
            st.tuples(st.just("transcribe"), transcribe_payloads),
            st.tuples(st.just("classify"), classify_payloads),
            st.tuples(st.just("train"), train_payloads),
            st.tuples(st.just("llm_classify"), llm_payloads),
        ),
    )
    @settings(max_examples=200, deadline=None)
    def test_serialize_parse_identity(self, request_id, op_payload):
        op, payload = op_payload
        request = make_request(request_id, op, payload)
        decoded = json.loads(json.dumps(request))
        assert validate_request(decoded) == request

    def test_unknown_op_rejected(self):
        with pytest.raises(ProtocolError):
            make_request(1, "summon", {})
        with pytest.raises(ProtocolError):
            validate_request({"id": 1, "op": "summon", "payload": {}})

    def test_missing_payload_field(self):
        request = make_request(1, "transcribe", {"audio_path": "x"})
        with pytest.raises(ProtocolError):
            validate_request(request)

    def test_classify_context_is_optional_but_typed(self):
        payload = {"model_ref": "m", "texts": ["a"], "context": {"recording_id": "r", "base_index": 0}}
        validate_request(make_request(1, "classify", payload))
        bad = {"model_ref": "m", "texts": ["a"], "context": {"recording_id": "r"}}
        with pytest.raises(ProtocolError):
            validate_request(make_request(1, "classify", bad))


class TestResponses:
    def test_classify_response_shape(self):
        response = make_response(3, {"labels": ["ad", "no-ad"], "scores": [0.9, 0.1]})
        payload = validate_response("classify", response)
        assert payload["labels"] == ["ad", "no-ad"]

    def test_classify_rejects_unknown_label(self):
        response = make_response(3, {"labels": ["maybe"], "scores": None})
        with pytest.raises(ProtocolError):
            validate_response("classify", response)

    def test_classify_rejects_score_mismatch(self):
        response = make_response(3, {"labels": ["ad"], "scores": [0.5, 0.5]})
        with pytest.raises(ProtocolError):
            validate_response("classify", response)

    def test_transcribe_modes(self):
        chunk = make_response(1, {"text": "hola"})
        assert validate_response("transcribe", chunk, mode="chunk")["text"] == "hola"
        long_form = make_response(
            1, {"segments": [{"start_ms": 0, "end_ms": 100, "text": "a"}]}
        )
        validate_response("transcribe", long_form, mode="long_form")
        with pytest.raises(ProtocolError):
            validate_response("transcribe", chunk, mode="long_form")

    def test_error_response(self):
        error = make_error_response(9, "timeout", "too slow")
        assert parse_error(error) == ("timeout", "too slow")


class TestDomainTypes:
    def test_descriptor_model_size_only_for_transcribers(self):
        BackendDescriptor(
            BackendKind.TRANSCRIBER, Transport.SUBPROCESS_STDIO, "cmd", ModelSize.SMALL
        )
        with pytest.raises(SchemaError):
            BackendDescriptor(
                BackendKind.CLASSIFIER, Transport.SUBPROCESS_STDIO, "cmd", ModelSize.SMALL
            )
        with pytest.raises(SchemaError):
            BackendDescriptor(BackendKind.TRANSCRIBER, Transport.SUBPROCESS_STDIO, "cmd")

    def test_training_config_defaults(self):
        config = ClassifierTrainingConfig()
        assert config.learning_rate == 5e-5
        assert config.epochs == 3
        assert config.warmup_ratio == 0.1
        assert config.weight_decay == 0.01
        assert config.adam_epsilon == 1e-8
        assert ClassifierTrainingConfig.from_payload(config.to_payload()) == config

    def test_flagged_prediction_must_fall_back(self):
        Prediction(0, Label.NO_AD, flags=frozenset({PredictionFlag.REFUSED}))
        with pytest.raises(SchemaError):
            Prediction(0, Label.AD, flags=frozenset({PredictionFlag.REFUSED}))

    def test_score_bounds(self):
        with pytest.raises(SchemaError):
            Prediction(0, Label.AD, score=1.5)
