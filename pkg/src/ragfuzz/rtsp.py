"""RTSP message model: parsing, serialization, grammar templates, seed
sequences, and the session state machine.

Parsing is deliberately lenient where a fuzzer needs it to be (LF-only line
endings are normalized, unknown method tokens can be kept opaque, junk
header lines are skipped) and strict where correctness matters (the
serializer always emits CRLF-terminated lines). All types are immutable
value objects; parse/serialize are pure functions.

Server-to-client messages (REDIRECT, embedded responses) are out of scope
for templates and seeds: seeds carry client requests only, and anything
parsing as a response is excluded at the seed boundary.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

RTSP_VERSION = "RTSP/1.0"
PLACEHOLDER = "<<VALUE>>"

# In-scope client methods, in canonical enumeration order.
METHODS = (
    "OPTIONS",
    "DESCRIBE",
    "ANNOUNCE",
    "SETUP",
    "PLAY",
    "PAUSE",
    "TEARDOWN",
    "GET_PARAMETER",
    "SET_PARAMETER",
    "RECORD",
)
METHOD_SET = frozenset(METHODS)

# Methods that never change session state (explicit self-loops in the FSM).
STATELESS_METHODS = frozenset(
    {"OPTIONS", "DESCRIBE", "ANNOUNCE", "GET_PARAMETER", "SET_PARAMETER"}
)


class MalformedRequest(ValueError):
    """Input has no parseable request line."""


class UnknownMethod(ValueError):
    """Request line carries a method token outside the RTSP set.

    The parsed request is retained on .request so lenient callers can still
    use it (mutated inputs must be representable without crashing).
    """

    def __init__(self, message: str, request: "RtspRequest"):
        super().__init__(message)
        self.request = request


class TemplateFormatError(ValueError):
    """Numbered grammar text does not follow the block format."""


class BindingArity(ValueError):
    """Binding count does not match the template's placeholder count."""


class EmptySeed(ValueError):
    """Seed bytes contained zero parseable client requests."""


@dataclass(frozen=True)
class RtspRequest:
    method: str
    uri: str
    version: str = RTSP_VERSION
    headers: tuple = ()  # ordered (name, value) pairs
    body: bytes = b""

    def header(self, name: str) -> Optional[str]:
        """First header value matching name, case-insensitively."""
        low = name.lower()
        for hname, hvalue in self.headers:
            if hname.lower() == low:
                return hvalue
        return None

    def with_header(self, name: str, value: str) -> "RtspRequest":
        """Replace the first header of this name, or append it."""
        low = name.lower()
        out = []
        done = False
        for hname, hvalue in self.headers:
            if not done and hname.lower() == low:
                out.append((hname, value))
                done = True
            else:
                out.append((hname, hvalue))
        if not done:
            out.append((name, value))
        return replace(self, headers=tuple(out))

    def with_body(self, body: bytes, content_type: str = "text/parameters") -> "RtspRequest":
        """Attach a body and keep Content-Length consistent with it."""
        req = self.with_header("Content-Type", content_type)
        req = req.with_header("Content-Length", str(len(body)))
        return replace(req, body=body)


@dataclass(frozen=True)
class RtspResponse:
    status_code: int
    reason: str
    headers: tuple = ()
    body: bytes = b""

    @property
    def status_class(self) -> int:
        return self.status_code // 100

    def header(self, name: str) -> Optional[str]:
        low = name.lower()
        for hname, hvalue in self.headers:
            if hname.lower() == low:
                return hvalue
        return None


def serialize_request(req: RtspRequest) -> bytes:
    lines = [f"{req.method} {req.uri} {req.version}"]
    for name, value in req.headers:
        lines.append(f"{name}: {value}")
    head = "\r\n".join(lines).encode("latin-1")
    return head + b"\r\n\r\n" + req.body


def serialize_response(resp: RtspResponse) -> bytes:
    lines = [f"{RTSP_VERSION} {resp.status_code} {resp.reason}"]
    for name, value in resp.headers:
        lines.append(f"{name}: {value}")
    head = "\r\n".join(lines).encode("latin-1")
    return head + b"\r\n\r\n" + resp.body


def _split_head_body(data: bytes) -> tuple:
    """Return (head bytes, body bytes, normalized flag)."""
    idx = data.find(b"\r\n\r\n")
    if idx >= 0:
        return data[:idx], data[idx + 4 :], False
    idx = data.find(b"\n\n")
    if idx >= 0:
        return data[:idx], data[idx + 2 :], True
    return data, b"", False


def _head_lines(head: bytes) -> list:
    if b"\r\n" in head:
        return head.split(b"\r\n")
    return head.split(b"\n")


def parse_request(data: bytes, allow_unknown_method: bool = False) -> RtspRequest:
    """Parse one RTSP client request.

    Raises MalformedRequest when no request line is present, UnknownMethod
    (carrying the parsed request) when the method token is outside the RTSP
    set and allow_unknown_method is false. The version token is kept opaque
    so syntactically broken requests still reach the target.
    """
    if not data or not data.strip():
        raise MalformedRequest("empty input")
    head, body, _ = _split_head_body(data)
    lines = _head_lines(head)
    try:
        first = lines[0].decode("latin-1")
    except IndexError:  # pragma: no cover - split always yields one element
        raise MalformedRequest("no request line")
    parts = first.split(" ", 2)
    if len(parts) != 3 or not parts[0] or not parts[1]:
        raise MalformedRequest(f"bad request line: {first!r}")
    method, uri, version = parts
    if method.startswith("RTSP/"):
        raise MalformedRequest("input is a response, not a request")
    headers = []
    for raw in lines[1:]:
        if not raw:
            continue
        line = raw.decode("latin-1")
        name, sep, value = line.partition(":")
        if not sep or not name.strip():
            continue  # junk header line, dropped (lenient)
        headers.append((name.strip(), value.strip()))
    req = RtspRequest(method=method, uri=uri, version=version, headers=tuple(headers), body=body)
    if method not in METHOD_SET and not allow_unknown_method:
        raise UnknownMethod(f"unknown method {method!r}", req)
    return req


def parse_response(data: bytes) -> RtspResponse:
    if not data or not data.strip():
        raise MalformedRequest("empty input")
    head, body, _ = _split_head_body(data)
    lines = _head_lines(head)
    first = lines[0].decode("latin-1")
    parts = first.split(" ", 2)
    if len(parts) < 2 or not parts[0].startswith("RTSP/"):
        raise MalformedRequest(f"bad status line: {first!r}")
    try:
        code = int(parts[1])
    except ValueError:
        raise MalformedRequest(f"bad status code in {first!r}")
    reason = parts[2] if len(parts) == 3 else ""
    headers = []
    for raw in lines[1:]:
        if not raw:
            continue
        line = raw.decode("latin-1")
        name, sep, value = line.partition(":")
        if not sep or not name.strip():
            continue
        headers.append((name.strip(), value.strip()))
    return RtspResponse(status_code=code, reason=reason, headers=tuple(headers), body=body)


# ---------------------------------------------------------------------------
# Grammar templates (numbered text format)

@dataclass(frozen=True)
class GrammarTemplate:
    """A request skeleton: request line + header lines with <<VALUE>> slots."""

    method: str
    lines: tuple  # logical lines without terminators; lines[0] is the request line

    @property
    def placeholder_count(self) -> int:
        return sum(line.count(PLACEHOLDER) for line in self.lines)


_BLOCK_HEAD_RE = re.compile(r"^(\d+)\.\s+(.*)$")


def parse_template_text(text: str) -> list:
    """Parse the numbered block format into templates.

    Blocks are blank-line separated; each starts with "N. <request line>"
    followed by one header line per row. Numbering is presentation only;
    a non-numeric prefix raises TemplateFormatError.
    """
    templates = []
    blocks = [b for b in re.split(r"\n\s*\n", text.strip()) if b.strip()]
    for block in blocks:
        lines = [ln.rstrip("\r") for ln in block.splitlines() if ln.strip()]
        m = _BLOCK_HEAD_RE.match(lines[0])
        if not m:
            raise TemplateFormatError(f"block does not start with 'N. ': {lines[0]!r}")
        request_line = m.group(2).strip()
        method = request_line.split(" ", 1)[0]
        if not method:
            raise TemplateFormatError(f"empty request line in block {m.group(1)}")
        templates.append(GrammarTemplate(method=method, lines=(request_line, *lines[1:])))
    return templates


def format_template_text(templates: Sequence[GrammarTemplate]) -> str:
    """Inverse of parse_template_text (numbering regenerated from order)."""
    blocks = []
    for i, tpl in enumerate(templates, start=1):
        lines = [f"{i}. {tpl.lines[0]}"]
        lines.extend(tpl.lines[1:])
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def instantiate_template(template: GrammarTemplate, bindings: Sequence[str]) -> RtspRequest:
    """Substitute placeholders in order and parse the result.

    The substituted text must survive a parse/serialize round-trip; a
    template whose lines get silently dropped by the lenient parser is
    rejected (MalformedRequest) rather than returned incomplete.
    """
    expected = template.placeholder_count
    if len(bindings) != expected:
        raise BindingArity(f"template wants {expected} bindings, got {len(bindings)}")
    it = iter(bindings)
    out_lines = []
    for line in template.lines:
        while PLACEHOLDER in line:
            line = line.replace(PLACEHOLDER, str(next(it)), 1)
        out_lines.append(line)
    text = "\r\n".join(out_lines) + "\r\n\r\n"
    data = text.encode("latin-1")
    req = parse_request(data)
    if serialize_request(req) != data:
        raise MalformedRequest(f"template for {template.method} does not round-trip")
    return req


# ---------------------------------------------------------------------------
# Seed sequences

@dataclass(frozen=True)
class SeedSequence:
    """Ordered client requests forming one fuzz input (responses excluded)."""

    requests: tuple = ()
    dropped_responses: int = 0  # diagnostic only, not serialized

    def to_bytes(self) -> bytes:
        return b"".join(serialize_request(r) for r in self.requests)

    @property
    def methods(self) -> tuple:
        return tuple(r.method for r in self.requests)


_REQUEST_LINE_RE = re.compile(rb"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+ \S+ \S+$")


def _looks_like_request_line(line: bytes) -> bool:
    return bool(_REQUEST_LINE_RE.match(line)) and not line.startswith(b"RTSP/")


def parse_seed(data: bytes) -> SeedSequence:
    """Split raw bytes into client requests.

    Message boundary = blank line ending the header block, plus the body
    length from Content-Length when present and valid. Blocks that parse as
    responses are excluded (counted in dropped_responses); garbage blocks
    are skipped. Zero surviving requests raises EmptySeed.
    """
    requests = []
    dropped = 0
    pos = 0
    n = len(data)
    while pos < n:
        chunk = data[pos:]
        if not chunk.strip():
            break
        head, body_rest, _ = _split_head_body(chunk)
        sep_len = len(chunk) - len(head) - len(body_rest)
        lines = _head_lines(head)
        first = lines[0]
        consumed = len(head) + sep_len
        body_len = 0
        if first.startswith(b"RTSP/"):
            dropped += 1
            body_len = _content_length(lines)
        elif not _looks_like_request_line(first):
            # Garbage block: skip up to the next plausible request line.
            nxt = _next_message_start(data, pos + 1)
            if nxt <= pos:
                break
            pos = nxt
            continue
        else:
            try:
                req = parse_request(head + b"\r\n\r\n", allow_unknown_method=True)
            except MalformedRequest:
                nxt = _next_message_start(data, pos + 1)
                if nxt <= pos:
                    break
                pos = nxt
                continue
            body_len = _content_length(lines)
            body = chunk[len(head) + sep_len : len(head) + sep_len + body_len]
            requests.append(replace(req, body=body))
        pos += consumed + body_len
        if sep_len == 0:  # header block never terminated; nothing follows
            break
    if not requests:
        raise EmptySeed("no parseable client requests in seed")
    return SeedSequence(requests=tuple(requests), dropped_responses=dropped)


def _content_length(lines: Iterable[bytes]) -> int:
    for raw in lines:
        name, sep, value = raw.partition(b":")
        if sep and name.strip().lower() == b"content-length":
            try:
                cl = int(value.strip())
            except ValueError:
                return 0
            return cl if cl >= 0 else 0
    return 0


def _next_message_start(data: bytes, start: int) -> int:
    """Offset of the next blank-line boundary followed by a request line."""
    search = start
    while True:
        idx = data.find(b"\n", search)
        if idx < 0:
            return len(data)
        candidate = data[idx + 1 :]
        if candidate[:1] == b"\r" and candidate[1:2] == b"\n":
            search = idx + 1
            continue
        line_end = candidate.find(b"\n")
        line = candidate[: line_end if line_end >= 0 else len(candidate)].rstrip(b"\r")
        if line and _looks_like_request_line(line):
            return idx + 1
        search = idx + 1


# ---------------------------------------------------------------------------
# Session state machine

class FsmState(enum.Enum):
    INIT = "INIT"
    READY = "READY"
    PLAYING = "PLAYING"
    RECORDING = "RECORDING"


# Explicit state-changing transitions on a 2xx response.
_EXPLICIT = {
    (FsmState.INIT, "SETUP"): FsmState.READY,
    (FsmState.READY, "PLAY"): FsmState.PLAYING,
    (FsmState.READY, "RECORD"): FsmState.RECORDING,
    (FsmState.PLAYING, "PAUSE"): FsmState.READY,
    (FsmState.RECORDING, "PAUSE"): FsmState.READY,
}


def fsm_next(state: FsmState, method: str, status_class: int) -> FsmState:
    """Next session state. Non-2xx outcomes never move the machine."""
    if status_class != 2:
        return state
    if method == "TEARDOWN":
        return FsmState.INIT
    if method in STATELESS_METHODS:
        return state
    return _EXPLICIT.get((state, method), state)


def fsm_allows(state: FsmState, method: str) -> bool:
    """True when (state, method) is an explicit row of the transition table
    (including the defined self-loops), as opposed to the implicit
    unknown-combination self-loop."""
    if method in STATELESS_METHODS or method == "TEARDOWN":
        return True
    return (state, method) in _EXPLICIT


def walk_is_valid(methods: Sequence[str], start: FsmState = FsmState.INIT) -> bool:
    """True when every step of the 2xx-assumed walk uses an explicit row."""
    state = start
    for method in methods:
        if not fsm_allows(state, method):
            return False
        state = fsm_next(state, method, 2)
    return True
