"""Deterministic offline providers for the scripted demo and tests.

The canned script assets cover the fixed-output stages (statement
extraction, chunk metadata, grammar mapping, plateau instructions). Seed
enrichment has to answer for arbitrary seed content, so the scripted demo
routes those prompts to a rule-based responder that enumerates FSM-valid
insertion points instead of improvising. Everything here is a pure function
of the request text.
"""

from __future__ import annotations

import re

from ragfuzz.crews import apply_plan, valid_insertions
from ragfuzz.llm_gateway import ChatRequest, ScriptedResponder
from ragfuzz.rtsp import (
    EmptySeed,
    RtspRequest,
    SeedSequence,
    parse_seed,
    serialize_request,
)
from ragfuzz.target import SESSION_REQUIRED

ENRICH_MARKER = "[stage: seed-enrichment]"
CHUNK_META_MARKER = "[stage: chunk-metadata]"

_METHODS_RE = re.compile(r"Methods to insert:\s*([A-Z_,\s]+)")
_SEQUENCE_MARK = "Original sequence:\n"

# Parameter bodies attached to inserted parameter methods: one known name
# (exercises the accept path) and one unknown (exercises the 451 path).
_PARAM_BODIES = {
    "GET_PARAMETER": b"volume\r\n",
    "SET_PARAMETER": b"navigation: on\r\n",
}


def _session_value(seed: SeedSequence) -> str:
    for req in seed.requests:
        value = req.header("Session")
        if value:
            return value
    return "000022B8"


def _insert_request(method: str, uri: str, cseq: int, session: str) -> RtspRequest:
    headers = [("CSeq", str(cseq))]
    if method == "SETUP":
        headers.append(("Transport", "RTP/AVP;unicast;client_port=9000-9001"))
    if method in SESSION_REQUIRED:
        headers.append(("Session", session))
    req = RtspRequest(method=method, uri=uri, headers=tuple(headers))
    body = _PARAM_BODIES.get(method)
    if body:
        req = req.with_body(body)
    return req


def answer_enrichment(user_prompt: str) -> str:
    """Build an enriched sequence for an enrichment-stage prompt by taking
    the first FSM-valid insertion plan (lexicographic position order)."""
    match = _METHODS_RE.search(user_prompt)
    if not match or _SEQUENCE_MARK not in user_prompt:
        raise ValueError("not an enrichment prompt")
    missing = [m.strip() for m in match.group(1).split(",") if m.strip()]
    raw = user_prompt.split(_SEQUENCE_MARK, 1)[1]
    seed = parse_seed(raw.encode("latin-1"))
    plans = valid_insertions(seed, missing)
    if not plans:
        raise EmptySeed("no valid insertion plan")
    positions = plans[0]
    uri = seed.requests[0].uri if seed.requests else "rtsp://target.example/media/stream1"
    session = _session_value(seed)
    inserted = {
        m: _insert_request(m, uri, len(seed.requests) + i + 1, session)
        for i, m in enumerate(missing)
    }
    methods = apply_plan(list(seed.methods), missing, positions)
    out = []
    orig = list(seed.requests)
    for m in methods:
        if orig and orig[0].method == m:
            out.append(orig.pop(0))
        else:
            out.append(inserted[m])
    return b"".join(serialize_request(r) for r in out).decode("latin-1")


def answer_chunk_metadata(user_prompt: str) -> str:
    """Title and summary computed from the bullet list itself; the summary
    concatenates the member statements so it tracks the chunk's content the
    way a regenerated summary would."""
    import json

    bullets = [ln[2:].strip() for ln in user_prompt.splitlines()
               if ln.startswith("- ") and ln[2:].strip()]
    if not bullets:
        raise ValueError("not a chunk metadata prompt")
    title = " ".join(bullets[0].split()[:8]).rstrip(".,;")
    summary = " ".join(bullets)
    if len(summary) > 600:
        summary = summary[:600]
    return json.dumps({"title": title, "summary": summary})


class RuleBasedEnricher:
    """Provider answering only enrichment prompts (tests drive it directly)."""

    def respond(self, req: ChatRequest) -> str:
        return answer_enrichment(req.user_prompt)


class DemoProvider:
    """Scripted assets + rule-based enrichment and chunk metadata, strict
    otherwise.

    This is what --gateway scripted wires up: canned entries answer the
    fixed-output stages (statement extraction, grammar, plateau), while
    enrichment and chunk-metadata prompts are computed from the request
    text, so the whole demo runs offline and deterministically for any
    seed corpus.
    """

    def __init__(self, script_path, strict: bool = True):
        self.script = ScriptedResponder.from_file(script_path, strict=False)
        self.strict = strict
        self._enricher = RuleBasedEnricher()

    def respond(self, req: ChatRequest) -> str:
        if ENRICH_MARKER in req.system_prompt:
            return self._enricher.respond(req)
        if CHUNK_META_MARKER in req.system_prompt:
            return answer_chunk_metadata(req.user_prompt)
        text = self.script.respond(req)
        if text:
            return text
        if self.strict:
            from ragfuzz.llm_gateway import GatewayUnavailable

            head = req.user_prompt[:120].replace("\n", " ")
            raise GatewayUnavailable(
                f"demo script has no entry for request (user={head!r}...)"
            )
        return ""
