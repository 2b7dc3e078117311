"""The three crew pipelines over retrieved context, with hard output
validation: grammar extraction, seed enrichment, and coverage-plateau
packet generation.

Every crew output that reaches the fuzzer has passed its structural
validator; raw model text is never consumed downstream. Crew failures
raise typed errors the engine degrades on (never aborting a campaign), and
every run is persisted to an append-only JSONL audit log.
"""

from __future__ import annotations

import itertools
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ragfuzz.cve import CveClient, relevance_filter
from ragfuzz.knowledge_store import VectorIndex, retrieve_context
from ragfuzz.llm_gateway import (
    DEFAULT_MODEL_PROFILES,
    ChatRequest,
    LlmGateway,
)
from ragfuzz.rfc_pipeline import load_prompt
from ragfuzz.rtsp import (
    METHODS,
    PLACEHOLDER,
    RTSP_VERSION,
    EmptySeed,
    FsmState,
    GrammarTemplate,
    MalformedRequest,
    RtspRequest,
    SeedSequence,
    UnknownMethod,
    fsm_allows,
    fsm_next,
    format_template_text,
    instantiate_template,
    parse_request,
    parse_seed,
    parse_template_text,
    serialize_request,
    serialize_response,
)

GRAMMAR_QUERY = "RTSP request methods headers syntax"
ENRICHMENT_QUERY = "RTSP state machine session method ordering"
DEFAULT_STAGE_RETRIES = 2  # regenerations before a stage gives up


class GrammarCrewEmpty(RuntimeError):
    """No template survived validation."""


class EnrichmentInfeasible(RuntimeError):
    """No FSM-valid insertion position exists for a desired method."""


class EnrichmentRejected(RuntimeError):
    """Model output kept failing the subsequence/insertion checks."""


class PlateauGenerationFailed(RuntimeError):
    """No parseable packet after all retries."""


class PacketExtractionError(ValueError):
    """Model text contained no well-formed request."""


class CrewOutputWarning(UserWarning):
    pass


@dataclass
class CrewRunRecord:
    crew: str
    query: str
    context_ids: list = field(default_factory=list)
    prompts: list = field(default_factory=list)
    raw_outputs: list = field(default_factory=list)
    output: Optional[object] = None
    failure: Optional[str] = None
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "crew": self.crew,
            "query": self.query,
            "context_ids": list(self.context_ids),
            "prompts": list(self.prompts),
            "raw_outputs": list(self.raw_outputs),
            "output": self.output,
            "failure": self.failure,
            "wall_time": self.wall_time,
        }


class CrewAuditLog:
    """Append-only, single-writer JSONL of CrewRunRecords."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list = []

    def append(self, record: CrewRunRecord) -> None:
        self.records.append(record)
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_json()) + "\n")


@dataclass(frozen=True)
class PlateauPrompt:
    text: str
    cve_refs: tuple = ()

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("plateau prompt must be non-empty")


@dataclass(frozen=True)
class GeneratedPacket:
    request: RtspRequest
    explanation: str


# ---------------------------------------------------------------------------
# Tools

def format_grammar(mapping: dict) -> str:
    """Grammar formatting tool: method -> lines JSON into numbered text.

    Deterministic; parse_template_text inverts it. Literal CRLF escapes at
    line ends are normalized away, and a missing request line is
    synthesized from the method name.
    """
    templates = []
    for method, lines in mapping.items():
        clean = [str(ln).replace("\r\n", "").replace("\\r\\n", "").rstrip() for ln in lines]
        clean = [ln for ln in clean if ln]
        if not clean or not clean[0].startswith(f"{method} "):
            clean.insert(0, f"{method} {PLACEHOLDER} {RTSP_VERSION}")
        templates.append(GrammarTemplate(method=method, lines=tuple(clean)))
    return format_template_text(templates)


def parse_packet(text: str) -> RtspRequest:
    """Packet parsing tool: first well-formed request in chatty model text.

    Tolerates code fences and prose prefixes; raises PacketExtractionError
    when nothing parses.
    """
    cleaned = text.replace("```", "\n")
    lines = cleaned.splitlines()
    for i, line in enumerate(lines):
        tokens = line.strip().split(" ")
        if len(tokens) == 3 and tokens[0] in METHODS and tokens[2].startswith("RTSP/"):
            block = [line.strip()]
            for follow in lines[i + 1 :]:
                if not follow.strip():
                    break
                block.append(follow.strip())
            data = ("\r\n".join(block) + "\r\n\r\n").encode("latin-1")
            try:
                return parse_request(data)
            except (MalformedRequest, UnknownMethod):
                continue
    raise PacketExtractionError("no well-formed request in model output")


# ---------------------------------------------------------------------------
# Grammar extraction crew

GRAMMAR_SCHEMA = {
    "type": "object",
    "minProperties": 1,
    "additionalProperties": {"type": "array", "items": {"type": "string"}},
}


def run_grammar_crew(index: VectorIndex, gateway: LlmGateway, k: int = 4,
                     deadline: Optional[float] = None,
                     audit: Optional[CrewAuditLog] = None) -> list:
    """Retrieve context, ask for method -> header-line templates, render to
    numbered text, and keep only templates that survive the parse
    round-trip."""
    record = CrewRunRecord(crew="grammar", query=GRAMMAR_QUERY)
    start = time.perf_counter()
    try:
        bundle = retrieve_context(index, GRAMMAR_QUERY, k)
        record.context_ids = list(bundle.chunk_ids)
        req = ChatRequest(
            system_prompt=load_prompt("grammar_extract"),
            user_prompt=f"Protocol context:\n\n{bundle.rendered}",
            schema=GRAMMAR_SCHEMA,
            model_id=DEFAULT_MODEL_PROFILES["grammar"],
            timeout=deadline,
        )
        record.prompts.append({"stage": "extract", "system": req.system_prompt})
        mapping = gateway.complete_structured(req, GRAMMAR_SCHEMA)
        record.raw_outputs.append(json.dumps(mapping))
        templates = []
        for method, lines in mapping.items():
            rendered = format_grammar({method: lines})
            try:
                parsed = parse_template_text(rendered)
                tpl = parsed[0]
                dummy = ["0"] * tpl.placeholder_count
                instantiate_template(tpl, dummy)
            except (ValueError, IndexError) as exc:
                warnings.warn(f"dropping template for {method}: {exc}", CrewOutputWarning)
                continue
            templates.append(tpl)
        if not templates:
            raise GrammarCrewEmpty("no template survived validation")
        record.output = format_template_text(templates)
        return templates
    except Exception as exc:
        record.failure = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        record.wall_time = time.perf_counter() - start
        if audit:
            audit.append(record)


# ---------------------------------------------------------------------------
# Seed enrichment crew

def render_fsm_table() -> str:
    lines = ["state transitions on success:"]
    lines.append("  INIT --SETUP--> READY; READY --PLAY--> PLAYING; "
                 "READY --RECORD--> RECORDING")
    lines.append("  PLAYING --PAUSE--> READY; RECORDING --PAUSE--> READY; "
                 "any --TEARDOWN--> INIT")
    lines.append("  OPTIONS, DESCRIBE, ANNOUNCE, GET_PARAMETER, SET_PARAMETER "
                 "are valid in any state and keep it")
    return "\n".join(lines)


def apply_plan(base: Sequence[str], missing: Sequence[str],
               positions: Sequence[int]) -> list:
    """Insert missing[i] before original index positions[i]; equal positions
    keep the missing order."""
    items = sorted(zip(positions, range(len(missing))), key=lambda t: (t[0], t[1]))
    out = list(base)
    offset = 0
    for pos, mi in items:
        out.insert(pos + offset, missing[mi])
        offset += 1
    return out


def valid_insertions(seed: SeedSequence, missing: Sequence[str]) -> list:
    """All position tuples (original indices) where the missing methods can
    be inserted so the resulting 2xx-assumed walk only uses explicit
    transition rows (original steps that were already valid stay valid)."""
    base = list(seed.methods)
    base_valid = _step_validity(base)
    options = []
    for positions in itertools.product(range(len(base) + 1), repeat=len(missing)):
        trial = apply_plan(base, missing, positions)
        if _walk_ok(trial, base, base_valid):
            options.append(tuple(positions))
    return options


def _step_validity(methods: Sequence[str]) -> list:
    state = FsmState.INIT
    flags = []
    for m in methods:
        flags.append(fsm_allows(state, m))
        state = fsm_next(state, m, 2)
    return flags

def _walk_ok(trial: Sequence[str], base: Sequence[str], base_valid: Sequence[bool]) -> bool:
    state = FsmState.INIT
    base_iter = 0
    for m in trial:
        is_original = base_iter < len(base) and base[base_iter] == m
        allowed = fsm_allows(state, m)
        if is_original:
            if base_valid[base_iter] and not allowed:
                return False
            base_iter += 1
        elif not allowed:
            return False
        state = fsm_next(state, m, 2)
    return base_iter == len(base)


def _subsequence_positions(original: Sequence[RtspRequest],
                           enriched: Sequence[RtspRequest]) -> Optional[list]:
    """Indices of the original requests inside enriched (order-preserving
    exact match), or None when the subsequence property fails."""
    positions = []
    j = 0
    for i, req in enumerate(enriched):
        if j < len(original) and req == original[j]:
            positions.append(i)
            j += 1
    return positions if j == len(original) else None


def run_enrichment_crew(seed: SeedSequence, desired: Sequence[str],
                        index: VectorIndex, gateway: LlmGateway, k: int = 4,
                        retries: int = DEFAULT_STAGE_RETRIES,
                        deadline: Optional[float] = None,
                        audit: Optional[CrewAuditLog] = None) -> SeedSequence:
    """Insert the desired (exactly two) methods into FSM-valid positions.

    Desired methods already present are skipped and reported. The model
    output must keep the original requests as an order-preserving
    subsequence, add exactly the missing methods, and yield a walk the
    transition table allows; otherwise it is regenerated, then rejected.
    """
    if len(desired) != 2:
        raise ValueError("enrichment wants exactly two desired methods")
    record = CrewRunRecord(crew="enrichment",
                           query=f"{ENRICHMENT_QUERY} {' '.join(desired)}")
    start = time.perf_counter()
    try:
        present = [m for m in desired if m in seed.methods]
        missing = [m for m in desired if m not in seed.methods]
        if present:
            record.prompts.append({"stage": "skip",
                                   "note": f"already present: {', '.join(present)}"})
        if not missing:
            record.output = "unchanged"
            return seed
        if not valid_insertions(seed, missing):
            raise EnrichmentInfeasible(
                f"no FSM-valid position for {missing} in {seed.methods}"
            )
        bundle = retrieve_context(index, record.query, k)
        record.context_ids = list(bundle.chunk_ids)
        seed_text = seed.to_bytes().decode("latin-1")
        user = (
            f"Methods to insert: {', '.join(missing)}\n\n{render_fsm_table()}\n\n"
            f"Context:\n{bundle.rendered}\n\nOriginal sequence:\n{seed_text}"
        )
        req = ChatRequest(system_prompt=load_prompt("enrich_seed"), user_prompt=user,
                          model_id=DEFAULT_MODEL_PROFILES["enrichment"],
                          timeout=deadline)
        record.prompts.append({"stage": "enrich", "system": req.system_prompt})
        failure = "no attempts"
        for _ in range(max(1, retries)):
            response = gateway.complete(req)
            record.raw_outputs.append(response.text)
            try:
                enriched = parse_seed(_strip_fences(response.text).encode("latin-1"))
            except EmptySeed as exc:
                failure = str(exc)
                continue
            positions = _subsequence_positions(seed.requests, enriched.requests)
            if positions is None:
                failure = "original requests not an ordered subsequence"
                continue
            inserted = [r.method for i, r in enumerate(enriched.requests)
                        if i not in positions]
            if sorted(inserted) != sorted(missing):
                failure = f"inserted {inserted}, wanted {missing}"
                continue
            base_valid = _step_validity(list(seed.methods))
            if not _walk_ok(list(enriched.methods), list(seed.methods), base_valid):
                failure = "enriched walk uses a forbidden transition"
                continue
            record.output = enriched.to_bytes().decode("latin-1")
            return enriched
        raise EnrichmentRejected(f"model output rejected: {failure}")
    except Exception as exc:
        record.failure = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        record.wall_time = time.perf_counter() - start
        if audit:
            audit.append(record)


def _strip_fences(text: str) -> str:
    if "```" in text:
        parts = text.split("```")
        # keep fenced payloads when present, otherwise the raw text
        fenced = [p for i, p in enumerate(parts) if i % 2 == 1]
        if fenced:
            return "\n".join(p.split("\n", 1)[1] if p.startswith(("text", "rtsp"))
                             else p for p in fenced)
    return text


# ---------------------------------------------------------------------------
# Coverage plateau crew

def history_tokens(history: Sequence) -> set:
    """Method and header vocabulary of recent exchanges, for CVE matching."""
    tokens: set = set()
    for req, resp in history:
        tokens.add(req.method)
        for name, _ in req.headers:
            tokens.add(name)
        if resp is not None:
            for name, _ in resp.headers:
                tokens.add(name)
    return tokens


def render_history(history: Sequence) -> str:
    parts = []
    for req, resp in history:
        parts.append(serialize_request(req).decode("latin-1"))
        if resp is not None:
            parts.append(serialize_response(resp).decode("latin-1"))
    return "\n".join(parts)


def run_plateau_crew(history: Sequence, state: FsmState, index: VectorIndex,
                     gateway: LlmGateway, cves: Optional[CveClient] = None,
                     product_keyword: str = "live555", k: int = 4,
                     retries: int = DEFAULT_STAGE_RETRIES,
                     deadline: Optional[float] = None,
                     audit: Optional[CrewAuditLog] = None) -> GeneratedPacket:
    """Three stages: analysis builds a generation instruction from retrieved
    context + history; the vulnerabilities stage refines it when fetched
    CVEs are relevant (else forwards it unchanged); generation produces the
    packet, validated by the packet parsing tool."""
    if not history:
        raise ValueError("plateau crew needs a non-empty history")
    last_resp = history[-1][1]
    status_line = (f"{RTSP_VERSION} {last_resp.status_code} {last_resp.reason}"
                   if last_resp else "no response")
    query = f"{status_line} {state.value}"
    record = CrewRunRecord(crew="plateau", query=query)
    start = time.perf_counter()
    try:
        bundle = retrieve_context(index, query, k)
        record.context_ids = list(bundle.chunk_ids)
        rendered_history = render_history(history)

        # Stage A: analysis -> generation instruction
        req_a = ChatRequest(
            system_prompt=load_prompt("plateau_analysis"),
            user_prompt=(f"Current state: {state.value}\n\nContext:\n{bundle.rendered}"
                         f"\n\nRecent exchanges:\n{rendered_history}"),
            model_id=DEFAULT_MODEL_PROFILES["plateau"],
            timeout=deadline,
        )
        record.prompts.append({"stage": "analysis", "system": req_a.system_prompt})
        instruction = gateway.complete(req_a).text.strip()
        record.raw_outputs.append(instruction)
        prompt = PlateauPrompt(text=instruction)

        # Stage B: CVE refinement, or unchanged forwarding
        relevant = []
        if cves is not None:
            try:
                fetched = cves.fetch_cves(product_keyword)
            except Exception:
                fetched = []
            relevant = relevance_filter(fetched, history_tokens(history))
        if relevant:
            cve_text = "\n".join(f"{c.id}: {c.description}" for c in relevant)
            req_b = ChatRequest(
                system_prompt=load_prompt("plateau_vulns"),
                user_prompt=f"Instruction:\n{prompt.text}\n\nKnown reports:\n{cve_text}",
                model_id=DEFAULT_MODEL_PROFILES["plateau"],
                timeout=deadline,
            )
            record.prompts.append({"stage": "vulns", "system": req_b.system_prompt})
            refined = gateway.complete(req_b).text.strip()
            record.raw_outputs.append(refined)
            prompt = PlateauPrompt(text=refined,
                                   cve_refs=tuple(c.id for c in relevant))

        # Stage C: packet generation, hard-validated
        req_c = ChatRequest(
            system_prompt=load_prompt("plateau_generate"),
            user_prompt=f"{prompt.text}\n\nRecent exchanges:\n{rendered_history}",
            model_id=DEFAULT_MODEL_PROFILES["plateau"],
            timeout=deadline,
        )
        record.prompts.append({"stage": "generate", "system": req_c.system_prompt})
        failure = "no attempts"
        for _ in range(max(1, retries)):
            text = gateway.complete(req_c).text
            record.raw_outputs.append(text)
            try:
                request = parse_packet(text)
            except PacketExtractionError as exc:
                failure = str(exc)
                continue
            serialize_request(request)  # must serialize cleanly
            packet = GeneratedPacket(request=request, explanation=text.strip())
            record.output = serialize_request(request).decode("latin-1")
            return packet
        raise PlateauGenerationFailed(failure)
    except Exception as exc:
        record.failure = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        record.wall_time = time.perf_counter() - start
        if audit:
            audit.append(record)
