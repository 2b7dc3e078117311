#!/usr/bin/env python3
"""Generate frozen test fixtures: golden embedding vectors and the RTSP
round-trip message corpus.

The embedding section deliberately re-implements the documented hashing
contract (seeded FNV-1a over lowercased UTF-8 character n-grams of size
3..5, sign from the hash top bit, L2 normalisation) without importing the
package, so the golden file is an independent oracle, not an echo.
"""

import json
import math
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"

GOLDEN_STRINGS = [
    "SETUP starts an RTSP session.",
    "PLAY starts data transmission on a stream allocated via SETUP.",
    "PAUSE does not free server resources.",
    "TEARDOWN causes the RTSP session to cease to exist on the server.",
    "Lines in RTSP messages are terminated by CRLF.",
    "The CSeq header pairs each request with its response.",
    "A Transport header names the transport protocol and profile.",
    "status code 455 answers a method that is not valid in this state",
    "retrieval unit for protocol knowledge",
    "x",
]

DIMS = 256
SEED = 2326


def fnv1a64(data: bytes, seed: int) -> int:
    mask = 0xFFFFFFFFFFFFFFFF
    h = (0xCBF29CE484222325 ^ ((seed & mask) * 0x100000001B3)) & mask
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & mask
    return h


def embed(text: str, dims: int = DIMS, seed: int = SEED) -> list:
    raw = text.lower().encode("utf-8")
    acc = [0.0] * dims
    for size in (3, 4, 5):
        if len(raw) < size:
            break
        for i in range(len(raw) - size + 1):
            h = fnv1a64(raw[i : i + size], seed)
            if (h >> 63) & 1:
                acc[h % dims] -= 1.0
            else:
                acc[h % dims] += 1.0
    sq = sum(v * v for v in acc)
    if sq > 0.0:
        norm = math.sqrt(sq)
        acc = [v / norm for v in acc]
    return acc


def write_golden():
    payload = {
        "dims": DIMS,
        "seed": SEED,
        "vectors": {text: embed(text) for text in GOLDEN_STRINGS},
    }
    out = DATA / "embedder_golden.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    print(f"wrote {out}")


def write_corpus():
    from ragfuzz.rtsp import RtspRequest, serialize_request

    uri = "rtsp://target.example/media/stream{n}"
    transport = ("Transport", "RTP/AVP;unicast;client_port=9000-9001")
    session = ("Session", "000022B8")
    messages = [
        RtspRequest("OPTIONS", uri.format(n=1), headers=(("CSeq", "1"),)),
        RtspRequest("OPTIONS", "*", headers=(("CSeq", "2"), ("User-Agent", "desk"))),
        RtspRequest("DESCRIBE", uri.format(n=1),
                    headers=(("CSeq", "3"), ("Accept", "application/sdp"))),
        RtspRequest("DESCRIBE", uri.format(n=2),
                    headers=(("CSeq", "4"), ("Accept", "text/html, application/sdp"))),
        RtspRequest("ANNOUNCE", uri.format(n=1),
                    headers=(("CSeq", "5"),)).with_body(
                        b"v=0\r\ns=demo\r\n", content_type="application/sdp"),
        RtspRequest("SETUP", uri.format(n=1), headers=(("CSeq", "6"), transport)),
        RtspRequest("SETUP", uri.format(n=2),
                    headers=(("CSeq", "7"),
                             ("Transport", "RTP/AVP/TCP;interleaved=0-1"))),
        RtspRequest("PLAY", uri.format(n=1), headers=(("CSeq", "8"), session)),
        RtspRequest("PLAY", uri.format(n=1),
                    headers=(("CSeq", "9"), session, ("Range", "npt=0-"))),
        RtspRequest("PLAY", uri.format(n=1),
                    headers=(("CSeq", "10"), session, ("Range", "npt=now-"))),
        RtspRequest("PAUSE", "rtsp://s/m",
                    headers=(("CSeq", "5"), session)),
        RtspRequest("PAUSE", uri.format(n=2),
                    headers=(("CSeq", "11"), session, ("User-Agent", "desk"))),
        RtspRequest("TEARDOWN", uri.format(n=1), headers=(("CSeq", "12"), session)),
        RtspRequest("TEARDOWN", uri.format(n=3), headers=(("CSeq", "13"), session)),
        RtspRequest("GET_PARAMETER", uri.format(n=1),
                    headers=(("CSeq", "14"), session)).with_body(b"packets_received\r\n"),
        RtspRequest("GET_PARAMETER", uri.format(n=1),
                    headers=(("CSeq", "15"),)),
        RtspRequest("SET_PARAMETER", uri.format(n=1),
                    headers=(("CSeq", "16"), session)).with_body(b"volume: 0.5\r\n"),
        RtspRequest("RECORD", uri.format(n=1),
                    headers=(("CSeq", "17"), session, ("Range", "npt=0-30"))),
        RtspRequest("RECORD", uri.format(n=2), headers=(("CSeq", "18"), session)),
        RtspRequest("OPTIONS", uri.format(n=3),
                    headers=(("CSeq", "19"), ("Require", "implicit-play"))),
    ]
    corpus = DATA / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    for i, msg in enumerate(messages):
        (corpus / f"msg_{i:02d}.bin").write_bytes(serialize_request(msg))
    print(f"wrote {len(messages)} messages under {corpus}")


if __name__ == "__main__":
    write_golden()
    write_corpus()
