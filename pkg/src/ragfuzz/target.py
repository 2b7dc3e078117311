"""Deterministic in-process RTSP server with synthetic branch probes.

Stands in for a real media server at desk scale: it implements the session
state machine from ragfuzz.rtsp, validates headers the way text-protocol
servers do, and fires a stable probe id at every distinct decision point so
coverage is observable without process instrumentation.

Status vocabulary: 200, 400 (syntax), 404 (unknown resource), 451 (unknown
parameter), 454 (session not found), 455 (method not valid in this state),
457 (invalid Range), 501 (method not implemented), 551 (Require option not
supported).

Seeded bugs, documented and stable:
  B1  Session header value longer than 64 bytes -> simulated crash
  B2  negative CSeq while the machine is PLAYING -> simulated hang (timeout)

Determinism: identical request sequences after reset() produce identical
responses and probe sequences; session ids restart at the configured base on
every reset so recorded seeds stay valid across executions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ragfuzz.rtsp import (
    METHOD_SET,
    RTSP_VERSION,
    FsmState,
    RtspRequest,
    RtspResponse,
)

DEFAULT_SESSION_BASE = 0x22B8

KNOWN_URIS = frozenset(
    {
        "rtsp://target.example/media/stream1",
        "rtsp://target.example/media/stream2",
        "rtsp://target.example/media/stream3",
    }
)
KNOWN_PARAMETERS = frozenset({"position", "volume", "packets_received"})
SESSION_REQUIRED = frozenset({"PLAY", "PAUSE", "TEARDOWN", "RECORD"})
RESOURCE_METHODS = frozenset({"DESCRIBE", "SETUP", "ANNOUNCE"})

_REASONS = {
    200: "OK",
    400: "Bad Request",
    404: "Not Found",
    451: "Parameter Not Understood",
    454: "Session Not Found",
    455: "Method Not Valid in This State",
    457: "Invalid Range",
    461: "Unsupported Transport",
    501: "Not Implemented",
    551: "Option not supported",
}

_DESCRIBE_BODY = (
    b"v=0\r\no=- 0 0 IN IP4 target.example\r\ns=stream\r\n"
    b"m=video 0 RTP/AVP 96\r\n"
)

# Every decision point, in a fixed order; the index is the probe id.
PROBE_SITES = (
    "version.ok",
    "version.bad",
    "cseq.ok",
    "cseq.missing",
    "cseq.invalid",
    "cseq.negative",
    "require.present",
    "session.absent",
    "session.present",
    "session.stale",
    "session.missing",
    "session.valid.READY",
    "session.valid.PLAYING",
    "session.valid.RECORDING",
    "method.unknown",
    "body.present",
    "body.clength_mismatch",
    "uri.ok.DESCRIBE",
    "uri.ok.SETUP",
    "uri.ok.ANNOUNCE",
    "uri.unknown.DESCRIBE",
    "uri.unknown.SETUP",
    "uri.unknown.ANNOUNCE",
    "options.INIT",
    "options.READY",
    "options.PLAYING",
    "options.RECORDING",
    "options.with_session",
    "options.sessionless",
    "describe.INIT",
    "describe.READY",
    "describe.PLAYING",
    "describe.RECORDING",
    "describe.accept_sdp",
    "describe.accept_other",
    "describe.accept_absent",
    "describe.with_session",
    "describe.sessionless",
    "announce.INIT",
    "announce.READY",
    "announce.PLAYING",
    "announce.RECORDING",
    "announce.ctype_present",
    "announce.ctype_absent",
    "announce.body_present",
    "announce.body_absent",
    "setup.ok",
    "setup.wrong_state.READY",
    "setup.wrong_state.PLAYING",
    "setup.wrong_state.RECORDING",
    "setup.transport.missing",
    "setup.transport.bad",
    "setup.transport.client_port",
    "setup.transport.plain",
    "setup.transport.tcp",
    "setup.transport.multicast",
    "play.ok",
    "play.wrong_state.PLAYING",
    "play.wrong_state.RECORDING",
    "play.range_absent",
    "play.range_npt",
    "play.range_now",
    "play.range_bad",
    "pause.from_playing",
    "pause.from_recording",
    "pause.wrong_state.READY",
    "record.ok",
    "record.wrong_state.PLAYING",
    "record.wrong_state.RECORDING",
    "teardown.READY",
    "teardown.PLAYING",
    "teardown.RECORDING",
    "getparam.INIT",
    "getparam.READY",
    "getparam.PLAYING",
    "getparam.RECORDING",
    "getparam.ping",
    "getparam.param_ok",
    "getparam.param_unknown",
    "getparam.param.position",
    "getparam.param.volume",
    "getparam.param.packets_received",
    "getparam.with_session",
    "getparam.sessionless",
    "setparam.INIT",
    "setparam.READY",
    "setparam.PLAYING",
    "setparam.RECORDING",
    "setparam.ping",
    "setparam.param_ok",
    "setparam.param_unknown",
    "setparam.param.position",
    "setparam.param.volume",
    "setparam.param.packets_received",
    "setparam.with_session",
    "setparam.sessionless",
)

PROBE_IDS = {name: i for i, name in enumerate(PROBE_SITES)}


class SimCrash(RuntimeError):
    """Simulated memory-safety crash; signature is stable across reruns."""

    def __init__(self, signature: str):
        super().__init__(signature)
        self.signature = signature


class SimHang(RuntimeError):
    """Simulated hang, reported by the harness as a timeout."""

    def __init__(self, signature: str):
        super().__init__(signature)
        self.signature = signature


@dataclass
class SimSession:
    session_id: str
    state: FsmState
    cseq_last: int = 0


class SimRtspTarget:
    """One instance per campaign; reset() between sequences."""

    def __init__(self, session_id_base: int = DEFAULT_SESSION_BASE):
        self.session_id_base = session_id_base & 0xFFFFFFFF
        self.sessions: dict = {}
        self.fired: set = set()
        self._next_session_value = self.session_id_base
        self._last_session: Optional[str] = None

    def reset(self, rng=None) -> None:
        """Clear sessions and probe history; restart the session id
        generator (rng randomizes the base when given, otherwise ids repeat
        deterministically so recorded seeds stay valid)."""
        self.sessions.clear()
        self.fired.clear()
        self._last_session = None
        if rng is not None:
            self._next_session_value = rng.getrandbits(32)
        else:
            self._next_session_value = self.session_id_base

    @property
    def current_state(self) -> FsmState:
        if self._last_session and self._last_session in self.sessions:
            return self.sessions[self._last_session].state
        return FsmState.INIT

    def _new_session(self) -> SimSession:
        sid = format(self._next_session_value, "08X")
        self._next_session_value = (self._next_session_value + 1) & 0xFFFFFFFF
        session = SimSession(session_id=sid, state=FsmState.READY)
        self.sessions[sid] = session
        self._last_session = sid
        return session

    def handle(self, req: RtspRequest):
        """Process one request; returns (response, fired probe ids)."""
        probes: list = []

        def fire(name: str) -> None:
            pid = PROBE_IDS[name]
            probes.append(pid)
            self.fired.add(pid)

        def respond(status: int, headers=(), body: bytes = b"") -> tuple:
            hdrs = []
            cseq = req.header("CSeq")
            if cseq is not None:
                hdrs.append(("CSeq", cseq))
            hdrs.extend(headers)
            return (
                RtspResponse(status_code=status, reason=_REASONS[status],
                             headers=tuple(hdrs), body=body),
                probes,
            )

        # --- request-level syntax ------------------------------------------
        if req.version != RTSP_VERSION:
            fire("version.bad")
            return respond(400)
        fire("version.ok")

        raw_cseq = req.header("CSeq")
        if raw_cseq is None:
            fire("cseq.missing")
            return respond(400)
        try:
            cseq = int(raw_cseq.strip())
        except ValueError:
            fire("cseq.invalid")
            return respond(400)
        if cseq < 0:
            if self.current_state is FsmState.PLAYING:
                raise SimHang("hang.negative-cseq-playing")  # seeded bug B2
            fire("cseq.negative")
            return respond(400)
        fire("cseq.ok")

        if req.body:
            fire("body.present")
            declared = req.header("Content-Length")
            if declared is not None:
                try:
                    if int(declared.strip()) != len(req.body):
                        fire("body.clength_mismatch")
                        return respond(400)
                except ValueError:
                    fire("body.clength_mismatch")
                    return respond(400)

        require = req.header("Require")
        if require is not None:
            fire("require.present")
            return respond(551, headers=(("Unsupported", require),))

        # --- session resolution (B1 lives here) ----------------------------
        sid = req.header("Session")
        session = None
        if sid is not None:
            if len(sid) > 64:
                raise SimCrash("crash.session-header-overflow")  # seeded bug B1
            fire("session.present")
            session = self.sessions.get(sid)
            if session is None:
                fire("session.stale")
                return respond(454)
            fire(f"session.valid.{session.state.value}")
            self._last_session = sid
        else:
            fire("session.absent")
            if req.method in SESSION_REQUIRED:
                fire("session.missing")
                return respond(454)

        if req.method not in METHOD_SET:
            fire("method.unknown")
            return respond(501)

        if req.method in RESOURCE_METHODS and session is None:
            if req.uri in KNOWN_URIS:
                fire(f"uri.ok.{req.method}")
            else:
                fire(f"uri.unknown.{req.method}")
                return respond(404)

        state = session.state if session else self.current_state
        if session:
            session.cseq_last = cseq

        # --- method dispatch ------------------------------------------------
        if req.method == "OPTIONS":
            fire(f"options.{state.value}")
            fire("options.with_session" if session else "options.sessionless")
            return respond(200, headers=(("Public", ", ".join(sorted(METHOD_SET))),))

        if req.method == "DESCRIBE":
            fire(f"describe.{state.value}")
            fire("describe.with_session" if session else "describe.sessionless")
            accept = req.header("Accept")
            if accept is None:
                fire("describe.accept_absent")
            elif "application/sdp" in accept:
                fire("describe.accept_sdp")
            else:
                fire("describe.accept_other")
            return respond(
                200,
                headers=(("Content-Type", "application/sdp"),
                         ("Content-Length", str(len(_DESCRIBE_BODY)))),
                body=_DESCRIBE_BODY,
            )

        if req.method == "ANNOUNCE":
            fire(f"announce.{state.value}")
            ctype = req.header("Content-Type")
            fire("announce.ctype_present" if ctype is not None else "announce.ctype_absent")
            fire("announce.body_present" if req.body else "announce.body_absent")
            return respond(200)

        if req.method == "SETUP":
            if state is not FsmState.INIT:
                fire(f"setup.wrong_state.{state.value}")
                return respond(455)
            transport = req.header("Transport")
            if transport is None:
                fire("setup.transport.missing")
                return respond(461)
            if "RTP/AVP" not in transport:
                fire("setup.transport.bad")
                return respond(461)
            if "TCP" in transport or "interleaved=" in transport:
                fire("setup.transport.tcp")
            elif "multicast" in transport:
                fire("setup.transport.multicast")
            elif "client_port=" in transport:
                fire("setup.transport.client_port")
            else:
                fire("setup.transport.plain")
            fire("setup.ok")
            new = self._new_session()
            return respond(
                200,
                headers=(("Session", new.session_id), ("Transport", transport)),
            )

        if req.method == "PLAY":
            if state is not FsmState.READY:
                fire(f"play.wrong_state.{state.value}")
                return respond(455)
            range_header = req.header("Range")
            if range_header is None:
                fire("play.range_absent")
            elif range_header.startswith("npt=now"):
                fire("play.range_now")
            elif range_header.startswith("npt="):
                fire("play.range_npt")
            else:
                fire("play.range_bad")
                return respond(457)
            fire("play.ok")
            session.state = FsmState.PLAYING
            return respond(200, headers=(("Session", session.session_id),))

        if req.method == "PAUSE":
            if state is FsmState.PLAYING:
                fire("pause.from_playing")
            elif state is FsmState.RECORDING:
                fire("pause.from_recording")
            else:
                fire(f"pause.wrong_state.{state.value}")
                return respond(455)
            # session retained: pausing frees nothing server-side
            session.state = FsmState.READY
            return respond(200, headers=(("Session", session.session_id),))

        if req.method == "RECORD":
            if state is not FsmState.READY:
                fire(f"record.wrong_state.{state.value}")
                return respond(455)
            fire("record.ok")
            session.state = FsmState.RECORDING
            return respond(200, headers=(("Session", session.session_id),))

        if req.method == "TEARDOWN":
            fire(f"teardown.{state.value}")
            del self.sessions[session.session_id]
            return respond(200)

        # GET_PARAMETER / SET_PARAMETER
        tag = "getparam" if req.method == "GET_PARAMETER" else "setparam"
        fire(f"{tag}.{state.value}")
        fire(f"{tag}.with_session" if session else f"{tag}.sessionless")
        if not req.body:
            fire(f"{tag}.ping")
            return respond(200)
        names = [
            line.split(":", 1)[0].strip().lower()
            for line in req.body.decode("latin-1").splitlines()
            if line.strip()
        ]
        unknown = [n for n in names if n not in KNOWN_PARAMETERS]
        if unknown:
            fire(f"{tag}.param_unknown")
            return respond(451)
        for name in names:
            fire(f"{tag}.param.{name}")
        fire(f"{tag}.param_ok")
        if req.method == "GET_PARAMETER":
            return respond(200, headers=(("Content-Length", str(len(req.body))),),
                           body=req.body)
        return respond(200)


# ---------------------------------------------------------------------------
# Declarative decision table (cross-checked against handle() by the tests)
#
# Each row: (name, pre_state, method, header variant, expected status,
# expected post state). pre_state is primed via SETUP / SETUP+PLAY /
# SETUP+RECORD; "expected post state" is the session state the sim must be
# in afterwards, which for every 2xx row must equal fsm_next(pre, method, 2).

I, R, P, C = FsmState.INIT, FsmState.READY, FsmState.PLAYING, FsmState.RECORDING

DECISION_ROWS = (
    ("options", I, "OPTIONS", "plain", 200, I),
    ("options", R, "OPTIONS", "plain", 200, R),
    ("options", P, "OPTIONS", "plain", 200, P),
    ("options", C, "OPTIONS", "plain", 200, C),
    ("describe", I, "DESCRIBE", "accept_sdp", 200, I),
    ("describe", R, "DESCRIBE", "plain", 200, R),
    ("describe", P, "DESCRIBE", "plain", 200, P),
    ("describe", C, "DESCRIBE", "plain", 200, C),
    ("describe-404", I, "DESCRIBE", "bad_uri", 404, I),
    ("announce", I, "ANNOUNCE", "plain", 200, I),
    ("announce", R, "ANNOUNCE", "plain", 200, R),
    ("announce-404", I, "ANNOUNCE", "bad_uri", 404, I),
    ("setup", I, "SETUP", "transport_udp", 200, R),
    ("setup-455", R, "SETUP", "with_session", 455, R),
    ("setup-455", P, "SETUP", "with_session", 455, P),
    ("setup-455", C, "SETUP", "with_session", 455, C),
    ("setup-461", I, "SETUP", "no_transport", 461, I),
    ("setup-461", I, "SETUP", "bad_transport", 461, I),
    ("setup-404", I, "SETUP", "bad_uri", 404, I),
    ("play", R, "PLAY", "with_session", 200, P),
    ("play-range", R, "PLAY", "range_npt", 200, P),
    ("play-455", P, "PLAY", "with_session", 455, P),
    ("play-455", C, "PLAY", "with_session", 455, C),
    ("play-457", R, "PLAY", "bad_range", 457, R),
    ("play-454", I, "PLAY", "no_session", 454, I),
    ("pause", P, "PAUSE", "with_session", 200, R),
    ("pause", C, "PAUSE", "with_session", 200, R),
    ("pause-455", R, "PAUSE", "with_session", 455, R),
    ("pause-454", I, "PAUSE", "no_session", 454, I),
    ("record", R, "RECORD", "with_session", 200, C),
    ("record-455", P, "RECORD", "with_session", 455, P),
    ("record-455", C, "RECORD", "with_session", 455, C),
    ("teardown", R, "TEARDOWN", "with_session", 200, I),
    ("teardown", P, "TEARDOWN", "with_session", 200, I),
    ("teardown", C, "TEARDOWN", "with_session", 200, I),
    ("teardown-454", I, "TEARDOWN", "no_session", 454, I),
    ("getparam", I, "GET_PARAMETER", "plain", 200, I),
    ("getparam", R, "GET_PARAMETER", "plain", 200, R),
    ("getparam", P, "GET_PARAMETER", "plain", 200, P),
    ("getparam", C, "GET_PARAMETER", "plain", 200, C),
    ("getparam-451", I, "GET_PARAMETER", "unknown_param", 451, I),
    ("setparam", I, "SET_PARAMETER", "known_param", 200, I),
    ("setparam", R, "SET_PARAMETER", "known_param", 200, R),
    ("setparam-451", I, "SET_PARAMETER", "unknown_param", 451, I),
    ("stale-session", I, "PLAY", "stale_session", 454, I),
    ("require-551", I, "OPTIONS", "require", 551, I),
    ("version-400", I, "OPTIONS", "bad_version", 400, I),
    ("cseq-400", I, "OPTIONS", "no_cseq", 400, I),
    ("cseq-400", I, "OPTIONS", "bad_cseq", 400, I),
    ("cseq-400", I, "OPTIONS", "negative_cseq", 400, I),
    ("unknown-501", I, "REDIRECT", "plain", 501, I),
)


def state_after(target: SimRtspTarget) -> FsmState:
    return target.current_state


def serve_tcp(target: SimRtspTarget, host: str = "127.0.0.1", port: int = 8554,
              max_requests: int = 100) -> None:
    """Tiny localhost wrapper for poking the sim by hand with an RTSP
    client (one connection, blocking). Campaigns and tests never use this;
    they call handle() in-process."""
    import socket

    from ragfuzz.rtsp import parse_seed, serialize_response

    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        conn, _addr = server.accept()
        with conn:
            buffer = b""
            handled = 0
            while handled < max_requests:
                data = conn.recv(4096)
                if not data:
                    break
                buffer += data
                try:
                    seq = parse_seed(buffer)
                except Exception:
                    continue
                buffer = b""
                for req in seq.requests:
                    try:
                        resp, _probes = target.handle(req)
                    except (SimCrash, SimHang):
                        return
                    conn.sendall(serialize_response(resp))
                    handled += 1
