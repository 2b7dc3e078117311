#!/usr/bin/env python3
"""Regenerate the committed demo assets: seed corpus and gateway script.

Run from the repo root after changing the fixture document, the section
budget default, or the statement map below. Matchers are derived from the
sections the pipeline actually produces, so the scripted gateway stays in
sync with the ingest path.
"""

import json
from pathlib import Path

from ragfuzz import rfc_pipeline as rp
from ragfuzz.rtsp import RtspRequest, serialize_request

ASSETS = Path(__file__).resolve().parent.parent / "src" / "ragfuzz" / "assets"
DEMO = ASSETS / "demo"

STREAM = "rtsp://target.example/media/stream{n}"


def _req(method, uri, *headers):
    return RtspRequest(method=method, uri=uri, headers=tuple(headers))


def build_seeds():
    transport = ("Transport", "RTP/AVP;unicast;client_port=9000-9001")
    session = ("Session", "000022B8")
    seeds = {
        "seed_01.raw": [
            _req("OPTIONS", STREAM.format(n=1), ("CSeq", "1")),
            _req("DESCRIBE", STREAM.format(n=1), ("CSeq", "2"),
                 ("Accept", "application/sdp")),
            _req("SETUP", STREAM.format(n=1), ("CSeq", "3"), transport),
            _req("PLAY", STREAM.format(n=1), ("CSeq", "4"), session),
            _req("TEARDOWN", STREAM.format(n=1), ("CSeq", "5"), session),
        ],
        "seed_02.raw": [
            _req("SETUP", STREAM.format(n=2), ("CSeq", "1"), transport),
            _req("PLAY", STREAM.format(n=2), ("CSeq", "2"), session),
            _req("TEARDOWN", STREAM.format(n=2), ("CSeq", "3"), session),
        ],
        "seed_03.raw": [
            _req("OPTIONS", STREAM.format(n=3), ("CSeq", "1")),
            _req("SETUP", STREAM.format(n=3), ("CSeq", "2"), transport),
            _req("TEARDOWN", STREAM.format(n=3), ("CSeq", "3"), session),
        ],
    }
    (DEMO / "seeds").mkdir(parents=True, exist_ok=True)
    for name, requests in seeds.items():
        data = b"".join(serialize_request(r) for r in requests)
        (DEMO / "seeds" / name).write_bytes(data)
        print(f"wrote seeds/{name} ({len(data)} bytes)")


# Hand-authored statement decomposition per kept paragraph, keyed by the
# paragraph's opening words. Packet examples are echoed verbatim.
STATEMENTS = {
    "Real Time Streaming Protocol (RTSP) -- Desk": [
        "The Real Time Streaming Protocol is abbreviated RTSP.",
    ],
    "The Real Time Streaming Protocol, or RTSP, is": [
        "The Real Time Streaming Protocol is an application-level protocol for control over the delivery of data with real-time properties.",
        "RTSP provides an extensible framework to enable controlled, on-demand delivery of real-time data, such as audio and video.",
        "An RTSP client issues requests to a server.",
        "The server answers each RTSP request with a response that carries a status code.",
    ],
    "Lines in RTSP messages are terminated": [
        "Lines in RTSP messages are terminated by CRLF.",
        "RTSP methods are idempotent unless otherwise noted.",
        "For the scheme 'rtsp', a persistent connection is assumed.",
        "The 'rtsp' scheme requires that commands are issued via a reliable protocol, specifically TCP.",
    ],
    "2. Method Definitions": [],
    "The OPTIONS method represents": [
        "The OPTIONS method represents a request for information about the communication options available on the request/response chain.",
        "An RTSP server answers OPTIONS with a Public header listing the methods the server supports.",
        "OPTIONS may be issued at any time in any state.",
    ],
    "The DESCRIBE method retrieves": [
        "The DESCRIBE method retrieves the description of a media object.",
        "The DESCRIBE method accepts application/sdp.",
        "The client states the formats the client understands in an Accept header.",
        "The reply to DESCRIBE carries the session description.",
        "DESCRIBE does not alter session state.",
    ],
    "The ANNOUNCE method posts": [
        "The ANNOUNCE method posts the description of a presentation to the server.",
        "ANNOUNCE sent by a client carries a Content-Type header and the description in its body.",
        "ANNOUNCE does not change the state of an established session.",
    ],
    "SETUP starts an RTSP session.": [
        "SETUP starts an RTSP session.",
        "A SETUP request specifies the transport mechanism for a single stream in a Transport header.",
        "The server answers a successful SETUP with a Session header carrying the session identifier.",
        "A SETUP request without a Transport header cannot be honored by the server.",
    ],
    "PLAY starts data transmission": [
        "PLAY starts data transmission on a stream allocated via SETUP.",
        "A PLAY request may carry a Range header selecting the playback interval in npt units.",
        "A PLAY request without a Range header resumes at the pause point.",
        "The server refuses PLAY when no session has been established.",
    ],
    "A PAUSE request temporarily halts": [
        "A PAUSE request temporarily halts delivery on a stream without freeing the allocation.",
        "PAUSE does not free server resources.",
        "A paused session keeps its Session identifier.",
        "Delivery resumes when the client issues PLAY on the same session.",
    ],
    "TEARDOWN stops stream delivery": [
        "TEARDOWN stops stream delivery and frees the resources associated with the session.",
        "TEARDOWN causes the RTSP session to cease to exist on the server.",
        "A session identifier is no longer valid after the server processes TEARDOWN for the session.",
    ],
    "The GET_PARAMETER method retrieves": [
        "The GET_PARAMETER method retrieves the value of a parameter of a presentation or stream.",
        "A GET_PARAMETER request with no body acts as a liveness check.",
        "The SET_PARAMETER method requests the server to set the value of a parameter.",
        "The server answers 451 when the server does not understand a parameter named in SET_PARAMETER.",
    ],
    "The RECORD method initiates": [
        "The RECORD method initiates recording a range of media data according to the presentation description.",
        "RECORD is only meaningful once a session exists.",
        "The server moves the session to the recording state on a successful RECORD.",
    ],
    "3. Session State": [],
    "RTSP methods that contribute to state": [
        "RTSP methods that contribute to state use the Session header field.",
        "The server keeps one state machine per RTSP session.",
        "SETUP moves the state machine from its initial state to ready.",
        "PLAY moves the state machine from ready to playing.",
        "RECORD moves the state machine from ready to recording.",
        "PAUSE returns the state machine from playing or recording to ready.",
        "TEARDOWN returns the state machine to its initial state from any state.",
        "A method that is not valid in the current state is answered with status code 455.",
        "A request naming an unknown session is answered with status code 454.",
    ],
    "A client request carrying a sequence number": [
        "A client request carries a sequence number and a session identifier.",
    ],
    "PAUSE rtsp://example.com/media.mp4": None,  # packet example: echo verbatim
    "The CSeq header pairs": [
        "The CSeq header pairs each RTSP request with its response.",
        "Every RTSP request carries a CSeq header.",
        "The server echoes the same CSeq value in its response.",
    ],
    "4. Transport and Status Codes": [],
    "The Transport header of SETUP names": [
        "The Transport header of SETUP names the transport protocol, profile and port selection.",
        "An example transport specification is RTP/AVP with unicast delivery and a client_port pair.",
        "A server that cannot use any of the offered transports answers 461 Unsupported Transport.",
        "A malformed Range value on PLAY is answered with 457 Invalid Range.",
        "A Require header naming an unsupported option is answered with 551 Option not supported.",
    ],
}


GRAMMAR_MAPPING = {
    "OPTIONS": ["OPTIONS <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
                "Require: <<VALUE>>"],
    "DESCRIBE": ["DESCRIBE <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
                 "Accept: <<VALUE>>"],
    "ANNOUNCE": ["ANNOUNCE <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
                 "Content-Type: <<VALUE>>"],
    "SETUP": ["SETUP <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
              "Transport: <<VALUE>>"],
    "PLAY": ["PLAY <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
             "Session: <<VALUE>>", "Range: <<VALUE>>"],
    "PAUSE": ["PAUSE <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
              "Session: <<VALUE>>"],
    "TEARDOWN": ["TEARDOWN <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
                 "Session: <<VALUE>>"],
    "GET_PARAMETER": ["GET_PARAMETER <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
                      "Session: <<VALUE>>"],
    "SET_PARAMETER": ["SET_PARAMETER <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
                      "Session: <<VALUE>>"],
    "RECORD": ["RECORD <<VALUE>> RTSP/1.0", "CSeq: <<VALUE>>",
               "Session: <<VALUE>>", "Range: <<VALUE>>"],
}

PLATEAU_INSTRUCTION = (
    "To get past the stall, send a PAUSE request while the session is in the "
    "Playing state so the machine moves from Playing to Ready. Use the active "
    "session id 000022B8 with the next sequence number, CSeq 5, and keep every "
    "line CRLF-terminated."
)

PLATEAU_REFINED = (
    PLATEAU_INSTRUCTION
    + " Known reports against this server name session teardown handling and "
    "oversized header values; keep the Session header an 8-digit hex id so the "
    "request exercises the state change rather than the length check."
)

PLATEAU_PACKET = (
    "Pausing active playback forces the Playing to Ready transition on the "
    "current session.\n\n"
    "PAUSE rtsp://target.example/media/stream1 RTSP/1.0\r\n"
    "CSeq: 5\r\n"
    "Session: 000022B8\r\n"
    "\r\n"
)


def build_gateway_script():
    text = (DEMO / "mini_rfc.txt").read_text(encoding="utf-8")
    paragraphs = rp.segment(text)
    kept = [p for p in paragraphs if rp.filter_paragraph(p)]
    sections = rp.assemble_sections(kept)

    prefix_map = list(STATEMENTS.items())

    def statements_for(paragraph):
        stripped = paragraph.text.strip()
        for prefix, statements in prefix_map:
            if stripped.startswith(prefix):
                if statements is None:
                    return [paragraph.text]
                return list(statements)
        raise SystemExit(f"no statement mapping for paragraph: {stripped[:60]!r}")

    entries = []
    for section in sections:
        sentences = []
        for paragraph in section.paragraphs:
            sentences.extend(statements_for(paragraph))
        marker = section.paragraphs[0].text.strip()[:56]
        entries.append({
            "matcher": {"system_contains": "[stage: statement-extraction]",
                        "contains": marker},
            "response": {"sentences": sentences},
        })

    entries.append({
        "matcher": {"system_contains": "[stage: grammar-extraction]"},
        "response": GRAMMAR_MAPPING,
    })
    entries.append({
        "matcher": {"system_contains": "[stage: plateau-analysis]"},
        "response": PLATEAU_INSTRUCTION,
    })
    entries.append({
        "matcher": {"system_contains": "[stage: plateau-vulnerabilities]"},
        "response": PLATEAU_REFINED,
    })
    entries.append({
        "matcher": {"system_contains": "[stage: plateau-generation]"},
        "response": PLATEAU_PACKET,
    })

    out = DEMO / "gateway_script.json"
    out.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out.relative_to(ASSETS.parent.parent.parent)} "
          f"({len(entries)} entries, {len(sections)} sections)")


if __name__ == "__main__":
    build_seeds()
    build_gateway_script()
