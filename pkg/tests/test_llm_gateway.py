import pytest

from ragfuzz.llm_gateway import (
    ChatRequest,
    GatewayTimeout,
    GatewayUnavailable,
    HttpChatProvider,
    LlmGateway,
    ReplayMiss,
    ReplayProvider,
    SchemaViolation,
    ScriptedResponder,
    ScriptEntry,
    Transcript,
    extract_json,
)

SENTENCES_SCHEMA = {
    "type": "object",
    "properties": {"sentences": {"type": "array", "items": {"type": "string"}}},
    "required": ["sentences"],
}


def _req(user="hello", system="sys", **kw):
    return ChatRequest(system_prompt=system, user_prompt=user, **kw)


class TestScriptedResponder:
    def test_first_match_wins(self):
        responder = ScriptedResponder([
            ScriptEntry({"contains": "alpha"}, "first"),
            ScriptEntry({"any": True}, "fallback"),
        ])
        assert responder.respond(_req("alpha beta")) == "first"
        assert responder.respond(_req("gamma")) == "fallback"

    def test_strict_unmatched_raises_with_diagnostic(self):
        responder = ScriptedResponder([ScriptEntry({"contains": "alpha"}, "x")])
        with pytest.raises(GatewayUnavailable) as exc:
            responder.respond(_req("nothing relevant"))
        assert "nothing relevant" in str(exc.value)

    def test_once_entries_are_consumed(self):
        responder = ScriptedResponder([
            ScriptEntry({"any": True}, "one", once=True),
            ScriptEntry({"any": True}, "two"),
        ])
        assert responder.respond(_req()) == "one"
        assert responder.respond(_req()) == "two"

    def test_json_response_serialised(self):
        responder = ScriptedResponder([ScriptEntry({"any": True}, {"a": 1})])
        assert responder.respond(_req()) == '{"a": 1}'


class TestComplete:
    def test_scripted_echo(self):
        gateway = LlmGateway(ScriptedResponder([ScriptEntry({"any": True}, "canned")]))
        response = gateway.complete(_req())
        assert response.text == "canned"
        assert response.usage["response_chars"] == 6

    def test_max_output_truncates(self):
        gateway = LlmGateway(ScriptedResponder([ScriptEntry({"any": True}, "x" * 100)]))
        assert gateway.complete(_req(max_output=10)).text == "x" * 10

    def test_zero_timeout_against_live_provider(self):
        provider = HttpChatProvider(endpoint="http://localhost:1/v1", model_id="m")
        with pytest.raises(GatewayTimeout):
            provider.respond(_req(timeout=0))


class TestCompleteStructured:
    def test_valid_parse(self):
        gateway = LlmGateway(ScriptedResponder(
            [ScriptEntry({"any": True}, {"sentences": ["a", "b"]})]))
        value = gateway.complete_structured(_req(), SENTENCES_SCHEMA)
        assert value == {"sentences": ["a", "b"]}
        assert gateway.history[-1].retries == 0

    def test_prose_exhausts_retries(self):
        gateway = LlmGateway(ScriptedResponder(
            [ScriptEntry({"any": True}, "not json at all")]), retries=3)
        with pytest.raises(SchemaViolation) as exc:
            gateway.complete_structured(_req(), SENTENCES_SCHEMA)
        assert exc.value.raw_text == "not json at all"

    def test_valid_on_second_try_records_one_retry(self):
        gateway = LlmGateway(ScriptedResponder([
            ScriptEntry({"any": True}, "garbage", once=True),
            ScriptEntry({"any": True}, {"sentences": ["ok"]}),
        ]), retries=3)
        value = gateway.complete_structured(_req(), SENTENCES_SCHEMA)
        assert value == {"sentences": ["ok"]}
        assert gateway.history[-1].retries == 1

    def test_fenced_json_accepted(self):
        gateway = LlmGateway(ScriptedResponder(
            [ScriptEntry({"any": True}, '```json\n{"sentences": ["x"]}\n```')]))
        assert gateway.complete_structured(_req(), SENTENCES_SCHEMA)["sentences"] == ["x"]


class TestRecordReplay:
    def test_round_trip(self, tmp_path):
        transcript = tmp_path / "session.jsonl"
        live = LlmGateway(ScriptedResponder([ScriptEntry({"any": True}, "answer")]),
                          record_to=transcript)
        live.complete(_req("q1"))
        live.complete(_req("q2"))
        replay = LlmGateway(ReplayProvider(transcript))
        assert replay.complete(_req("q1")).text == "answer"
        assert replay.complete(_req("q2")).text == "answer"

    def test_replay_miss_on_altered_prompt(self, tmp_path):
        transcript = tmp_path / "session.jsonl"
        live = LlmGateway(ScriptedResponder([ScriptEntry({"any": True}, "a")]),
                          record_to=transcript)
        live.complete(_req("original"))
        replay = LlmGateway(ReplayProvider(transcript))
        with pytest.raises(ReplayMiss):
            replay.complete(_req("altered"))

    def test_empty_transcript_misses_immediately(self, tmp_path):
        transcript = tmp_path / "none.jsonl"
        replay = LlmGateway(ReplayProvider(transcript))
        with pytest.raises(ReplayMiss):
            replay.complete(_req())

    def test_repeated_identical_requests_replay_fifo(self, tmp_path):
        transcript = tmp_path / "session.jsonl"
        t = Transcript(transcript)
        t.append(_req("same"), "first")
        t.append(_req("same"), "second")
        replay = LlmGateway(ReplayProvider(transcript))
        assert replay.complete(_req("same")).text == "first"
        assert replay.complete(_req("same")).text == "second"
        with pytest.raises(ReplayMiss):
            replay.complete(_req("same"))


def test_extract_json_variants():
    assert extract_json('{"a": 1}') == {"a": 1}
    assert extract_json('prefix text {"a": [1, 2]} suffix') == {"a": [1, 2]}
    assert extract_json('```json\n[1, 2]\n```') == [1, 2]
    with pytest.raises(ValueError):
        extract_json("no json here")
