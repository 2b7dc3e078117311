import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragfuzz import rtsp


class TestParseRequest:
    def test_fig_style_pause_request(self):
        raw = b"PAUSE rtsp://s/m RTSP/1.0\r\nCSeq: 5\r\nSession: 000022B8\r\n\r\n"
        req = rtsp.parse_request(raw)
        assert req.method == "PAUSE"
        assert req.header("CSeq") == "5"
        assert req.header("Session") == "000022B8"
        assert rtsp.serialize_request(req) == raw

    def test_empty_input_is_malformed(self):
        with pytest.raises(rtsp.MalformedRequest):
            rtsp.parse_request(b"")

    def test_missing_request_line(self):
        with pytest.raises(rtsp.MalformedRequest):
            rtsp.parse_request(b"CSeq: 1\r\n\r\n")

    def test_unknown_method_raises_but_retains_request(self):
        raw = b"FROBNICATE rtsp://s/m RTSP/1.0\r\nCSeq: 1\r\n\r\n"
        with pytest.raises(rtsp.UnknownMethod) as exc:
            rtsp.parse_request(raw)
        assert exc.value.request.method == "FROBNICATE"
        req = rtsp.parse_request(raw, allow_unknown_method=True)
        assert req.method == "FROBNICATE"

    def test_lf_only_line_endings_normalise(self):
        req = rtsp.parse_request(b"OPTIONS * RTSP/1.0\nCSeq: 2\n\n")
        assert req.method == "OPTIONS"
        assert req.header("CSeq") == "2"

    def test_header_names_case_insensitive_order_preserved(self):
        raw = b"OPTIONS * RTSP/1.0\r\nb: 2\r\nA: 1\r\n\r\n"
        req = rtsp.parse_request(raw)
        assert req.header("B") == "2"
        assert [name for name, _ in req.headers] == ["b", "A"]

    def test_corpus_round_trip(self, corpus_files):
        assert len(corpus_files) == 20
        for path in corpus_files:
            raw = path.read_bytes()
            assert rtsp.serialize_request(rtsp.parse_request(raw)) == raw, path.name


class TestSerialize:
    def test_minimal_options_structure(self):
        req = rtsp.RtspRequest("OPTIONS", "*", headers=(("CSeq", "1"),))
        raw = rtsp.serialize_request(req)
        assert raw == b"OPTIONS * RTSP/1.0\r\nCSeq: 1\r\n\r\n"
        assert raw.count(b"\r\n") == 3  # 2 terminated lines + blank line

    def test_body_length_matches_content_length(self):
        req = rtsp.RtspRequest("SET_PARAMETER", "rtsp://s/m",
                               headers=(("CSeq", "2"),)).with_body(b"volume: 0.5\r\n")
        assert int(req.header("Content-Length")) == len(req.body)
        reparsed = rtsp.parse_request(rtsp.serialize_request(req))
        assert reparsed.body == req.body


_header_name = st.from_regex(r"[A-Za-z][A-Za-z0-9\-]{0,12}", fullmatch=True)
_header_value = st.from_regex(r"[!-~][ -~]{0,30}[!-~]|[!-~]", fullmatch=True)


@settings(max_examples=150, deadline=None)
@given(
    method=st.sampled_from(rtsp.METHODS),
    uri=st.from_regex(r"rtsp://[a-z0-9./\-]{1,24}", fullmatch=True),
    headers=st.lists(st.tuples(_header_name, _header_value), max_size=5),
)
def test_parse_serialize_identity_on_constructible_requests(method, uri, headers):
    req = rtsp.RtspRequest(method, uri, headers=tuple(headers))
    assert rtsp.parse_request(rtsp.serialize_request(req)) == req


class TestTemplates:
    NUMBERED = (
        "1. DESCRIBE <<VALUE>> RTSP/1.0\n"
        "CSeq: <<VALUE>>\n"
        "Accept: <<VALUE>>\n"
        "\n"
        "2. SETUP <<VALUE>> RTSP/1.0\n"
        "CSeq: <<VALUE>>\n"
        "Transport: <<VALUE>>\n"
    )

    def test_parse_numbered_blocks(self):
        templates = rtsp.parse_template_text(self.NUMBERED)
        assert [t.method for t in templates] == ["DESCRIBE", "SETUP"]
        assert templates[0].lines[2] == "Accept: <<VALUE>>"

    def test_empty_text_gives_no_templates(self):
        assert rtsp.parse_template_text("") == []

    def test_renumbering_is_presentation_only(self):
        renumbered = self.NUMBERED.replace("1. DESCRIBE", "7. DESCRIBE")
        renumbered = renumbered.replace("2. SETUP", "9. SETUP")
        assert rtsp.parse_template_text(renumbered) == rtsp.parse_template_text(self.NUMBERED)

    def test_bad_numbering_rejected(self):
        with pytest.raises(rtsp.TemplateFormatError):
            rtsp.parse_template_text("x. DESCRIBE <<VALUE>> RTSP/1.0\n")

    def test_format_parse_format_fixpoint(self):
        templates = rtsp.parse_template_text(self.NUMBERED)
        rendered = rtsp.format_template_text(templates)
        assert rtsp.format_template_text(rtsp.parse_template_text(rendered)) == rendered

    def test_instantiate_and_reparse(self):
        tpl = rtsp.parse_template_text(self.NUMBERED)[0]
        req = rtsp.instantiate_template(
            tpl, ["rtsp://target.example/media/stream1", "9", "application/sdp"])
        assert req == rtsp.parse_request(rtsp.serialize_request(req))
        assert req.header("Accept") == "application/sdp"

    def test_binding_arity_checked(self):
        tpl = rtsp.parse_template_text(self.NUMBERED)[0]
        with pytest.raises(rtsp.BindingArity):
            rtsp.instantiate_template(tpl, ["rtsp://x", "1"])


class TestParseSeed:
    def test_sequence_order_preserved(self):
        data = (
            b"DESCRIBE rtsp://s/m RTSP/1.0\r\nCSeq: 1\r\n\r\n"
            b"SETUP rtsp://s/m RTSP/1.0\r\nCSeq: 2\r\n\r\n"
            b"PLAY rtsp://s/m RTSP/1.0\r\nCSeq: 3\r\n\r\n"
        )
        seq = rtsp.parse_seed(data)
        assert seq.methods == ("DESCRIBE", "SETUP", "PLAY")
        assert seq.to_bytes() == data

    def test_interleaved_response_excluded(self):
        data = (
            b"SETUP rtsp://s/m RTSP/1.0\r\nCSeq: 1\r\n\r\n"
            b"RTSP/1.0 200 OK\r\nCSeq: 1\r\nSession: 000022B8\r\n\r\n"
            b"PLAY rtsp://s/m RTSP/1.0\r\nCSeq: 2\r\n\r\n"
        )
        seq = rtsp.parse_seed(data)
        assert seq.methods == ("SETUP", "PLAY")
        assert seq.dropped_responses == 1
        assert not any(r.method.startswith("RTSP/") for r in seq.requests)

    def test_garbage_raises_empty_seed(self):
        with pytest.raises(rtsp.EmptySeed):
            rtsp.parse_seed(b"\x00\x01\x02 nonsense \xff\xfe")

    def test_body_boundary_respected(self):
        body = b"v=0\r\n"
        data = (
            b"ANNOUNCE rtsp://s/m RTSP/1.0\r\nCSeq: 1\r\nContent-Length: 5\r\n\r\n"
            + body
            + b"PLAY rtsp://s/m RTSP/1.0\r\nCSeq: 2\r\n\r\n"
        )
        seq = rtsp.parse_seed(data)
        assert seq.methods == ("ANNOUNCE", "PLAY")
        assert seq.requests[0].body == body


class TestFsm:
    def test_anchored_transitions(self):
        S = rtsp.FsmState
        assert rtsp.fsm_next(S.PLAYING, "PAUSE", 2) is S.READY
        assert rtsp.fsm_next(S.INIT, "SETUP", 2) is S.READY
        assert rtsp.fsm_next(S.PLAYING, "TEARDOWN", 2) is S.INIT

    @pytest.mark.parametrize("state", list(rtsp.FsmState))
    @pytest.mark.parametrize("method", rtsp.METHODS)
    @pytest.mark.parametrize("status_class", [1, 3, 4, 5])
    def test_non_2xx_never_moves(self, state, method, status_class):
        assert rtsp.fsm_next(state, method, status_class) is state

    def test_unknown_combination_self_loops(self):
        S = rtsp.FsmState
        assert rtsp.fsm_next(S.INIT, "PLAY", 2) is S.INIT
        assert rtsp.fsm_next(S.PLAYING, "SETUP", 2) is S.PLAYING

    def test_table_total_over_in_scope_methods(self):
        for state in rtsp.FsmState:
            for method in rtsp.METHODS:
                assert rtsp.fsm_next(state, method, 2) in set(rtsp.FsmState)
