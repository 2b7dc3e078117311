"""Uniform chat-completion access: live HTTP provider, scripted responder
for offline runs, JSON-schema constrained output with bounded retries, and
record/replay transcripts for byte-identical reruns.

With a ScriptedResponder or a ReplayProvider every downstream module is a
deterministic function of its inputs; complete_structured never returns an
unvalidated parse.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import jsonschema


class GatewayTimeout(RuntimeError):
    """Provider did not answer within the request's time budget."""


class GatewayUnavailable(RuntimeError):
    """Transport failure, or a strict scripted responder had no match."""


class SchemaViolation(RuntimeError):
    """Output failed schema validation after all retries.

    Carries the last raw text for logging.
    """

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class ReplayMiss(KeyError):
    """Replay transcript has no recorded response for this request."""


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    model_id: str = "offline"
    temperature: float = 0.0
    schema: Optional[dict] = None
    max_output: int = 8192
    timeout: Optional[float] = None

    def digest(self) -> str:
        """Stable hash of the semantic request fields (replay key)."""
        payload = json.dumps(
            {
                "system": self.system_prompt,
                "user": self.user_prompt,
                "model": self.model_id,
                "temperature": self.temperature,
                "schema": self.schema,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ChatResponse:
    text: str
    parsed: Any = None
    usage: dict = field(default_factory=dict)
    latency: float = 0.0
    retries: int = 0


@dataclass
class ScriptEntry:
    matcher: dict
    response: Any  # str, or a JSON-able value serialized on match
    once: bool = False
    used: bool = False

    def matches(self, req: ChatRequest) -> bool:
        if self.once and self.used:
            return False
        if self.matcher.get("any"):
            return True
        ok = True
        if "contains" in self.matcher:
            ok = ok and self.matcher["contains"] in req.user_prompt
        if "system_contains" in self.matcher:
            ok = ok and self.matcher["system_contains"] in req.system_prompt
        if "regex" in self.matcher:
            ok = ok and re.search(self.matcher["regex"], req.user_prompt) is not None
        return ok

    def render(self) -> str:
        if isinstance(self.response, str):
            return self.response
        return json.dumps(self.response)


class ScriptedResponder:
    """Ordered (matcher, canned response) script; first match wins.

    strict mode raises GatewayUnavailable on any unmatched request rather
    than improvising. Entries marked once are consumed on match, which lets
    a script queue distinct answers for repeated identical prompts.
    Internally synchronized: concurrent calls cannot double-consume an
    entry.
    """

    def __init__(self, entries, strict: bool = True):
        import threading

        self.entries = list(entries)
        self.strict = strict
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, strict: bool = True) -> "ScriptedResponder":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = [
            ScriptEntry(
                matcher=item["matcher"],
                response=item["response"],
                once=bool(item.get("once", False)),
            )
            for item in raw
        ]
        return cls(entries, strict=strict)

    def respond(self, req: ChatRequest) -> str:
        with self._lock:
            for entry in self.entries:
                if entry.matches(req):
                    entry.used = True
                    return entry.render()
        if self.strict:
            head = req.user_prompt[:120].replace("\n", " ")
            raise GatewayUnavailable(
                f"scripted responder has no entry matching request "
                f"(system={req.system_prompt[:60]!r}..., user={head!r}...)"
            )
        return ""


class CallableProvider:
    """Adapter for a deterministic function req -> text (offline strategies)."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn

    def respond(self, req: ChatRequest) -> str:
        return self.fn(req)


class HttpChatProvider:
    """Generic chat-completions REST provider.

    Config: endpoint URL, model id, API key read from an environment
    variable. A zero/negative time budget raises GatewayTimeout before any
    dispatch; transport errors map to GatewayUnavailable.
    """

    def __init__(self, endpoint: str, model_id: str, api_key_env: str = "RAGFUZZ_API_KEY",
                 session=None):
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key_env = api_key_env
        self._session = session

    @classmethod
    def from_config(cls, path) -> "HttpChatProvider":
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            endpoint=cfg["endpoint"],
            model_id=cfg.get("model_id", "default"),
            api_key_env=cfg.get("api_key_env", "RAGFUZZ_API_KEY"),
        )

    def respond(self, req: ChatRequest) -> str:
        if req.timeout is not None and req.timeout <= 0:
            raise GatewayTimeout("time budget exhausted before dispatch")
        import requests

        session = self._session
        if session is None:
            session = requests.Session()
            self._session = session
        payload = {
            "model": req.model_id if req.model_id != "offline" else self.model_id,
            "temperature": req.temperature,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
        }
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = session.post(self.endpoint, json=payload, headers=headers,
                                timeout=req.timeout)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except requests.Timeout as exc:
            raise GatewayTimeout(str(exc)) from exc
        except Exception as exc:
            raise GatewayUnavailable(str(exc)) from exc


class Transcript:
    """Append-only JSONL of (request hash, request, response text)."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, req: ChatRequest, text: str) -> None:
        record = {
            "hash": req.digest(),
            "request": {"system": req.system_prompt, "user": req.user_prompt,
                        "model": req.model_id},
            "response": text,
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def load(self) -> dict:
        """hash -> FIFO list of recorded responses."""
        table: dict = {}
        if not self.path.exists():
            return table
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            table.setdefault(record["hash"], []).append(record["response"])
        return table


class ReplayProvider:
    """Serves recorded responses keyed by request hash (FIFO per hash)."""

    def __init__(self, transcript_path):
        self.table = Transcript(transcript_path).load()

    def respond(self, req: ChatRequest) -> str:
        queue = self.table.get(req.digest())
        if not queue:
            raise ReplayMiss(f"no recorded response for request {req.digest()[:12]}")
        return queue.pop(0)


def extract_json(text: str) -> Any:
    """Parse the first JSON value in possibly chatty model output."""
    stripped = text.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", stripped, re.DOTALL)
    if fence:
        stripped = fence.group(1).strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    start = min((i for i in (stripped.find("{"), stripped.find("[")) if i >= 0),
                default=-1)
    if start < 0:
        raise ValueError("no JSON value in output")
    decoder = json.JSONDecoder()
    value, _ = decoder.raw_decode(stripped[start:])
    return value


@dataclass
class CallRecord:
    kind: str
    retries: int
    ok: bool


# Default model profile per pipeline task; live deployments override these
# with real model ids in the provider config.
DEFAULT_MODEL_PROFILES = {
    "statement-extraction": "offline",
    "chunk-metadata": "offline",
    "grammar": "offline",
    "enrichment": "offline",
    "plateau": "offline",
}


class LlmGateway:
    """Provider wrapper adding output truncation, schema-validated parsing
    with bounded retries, and optional transcript recording. Safe for
    concurrent complete() calls; history appends are atomic."""

    def __init__(self, provider, retries: int = 3, record_to=None):
        self.provider = provider
        self.retries = max(1, retries)
        self.transcript = Transcript(record_to) if record_to else None
        self.history: list = []

    def complete(self, req: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        text = self.provider.respond(req)
        if req.max_output and len(text) > req.max_output:
            text = text[: req.max_output]
        latency = time.perf_counter() - start
        if self.transcript:
            self.transcript.append(req, text)
        usage = {"prompt_chars": len(req.system_prompt) + len(req.user_prompt),
                 "response_chars": len(text)}
        parsed = None
        if req.schema is not None:
            try:
                candidate = extract_json(text)
                jsonschema.validate(candidate, req.schema)
                parsed = candidate
            except (ValueError, jsonschema.ValidationError):
                parsed = None
        return ChatResponse(text=text, parsed=parsed, usage=usage, latency=latency)

    def complete_structured(self, req: ChatRequest, schema: dict) -> Any:
        """Validated parse of the model output, retried up to the gateway's
        budget; SchemaViolation carries the last raw text. Never returns an
        unvalidated parse."""
        if not schema:
            raise ValueError("schema must be non-empty")
        if req.schema != schema:
            req = replace_schema(req, schema)
        last_text = ""
        for attempt in range(self.retries):
            response = self.complete(req)
            last_text = response.text
            if response.parsed is None:
                continue
            self.history.append(CallRecord(kind="structured", retries=attempt, ok=True))
            return response.parsed
        self.history.append(CallRecord(kind="structured", retries=self.retries - 1, ok=False))
        raise SchemaViolation(
            f"output failed schema validation after {self.retries} attempts", last_text
        )


def replace_schema(req: ChatRequest, schema: dict) -> ChatRequest:
    from dataclasses import replace

    return replace(req, schema=schema)
