"""RFC text pipeline: paragraph segmentation, relevance filtering, section
assembly, atomic-statement extraction, and incremental semantic chunking.

Stage contracts:
  segment            raw text -> Paragraphs (prose / packet_example / code_block)
  filter_paragraph   deterministic relevance rules (model-backed mode optional)
  assemble_sections  greedy character-budget packing, order preserving
  propositionalize   gateway call producing the ordered "sentences" list
  run_agentic_chunking  sequential-greedy grouping against chunk summaries

Chunks partition the proposition set: every proposition id lands in exactly
one chunk. With a scripted gateway the whole pipeline is a pure function of
its inputs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from ragfuzz import kernels
from ragfuzz.llm_gateway import (
    ChatRequest,
    GatewayTimeout,
    GatewayUnavailable,
    LlmGateway,
    SchemaViolation,
)

PROSE = "prose"
PACKET_EXAMPLE = "packet_example"
CODE_BLOCK = "code_block"

SECTION_OPEN = "###"
PARAGRAPH_DELIM = "---"
SECTION_CLOSE = "@@@"

DEFAULT_SECTION_BUDGET = 4000


class EmptyDocument(ValueError):
    """segment() was handed an empty document."""


class PropositionParseFailure(RuntimeError):
    """Model output for a section stayed invalid through all retries."""


class OversizeSectionWarning(UserWarning):
    pass


class RefinementSkippedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Paragraph:
    index: int
    text: str
    kind: str  # PROSE | PACKET_EXAMPLE | CODE_BLOCK


@dataclass(frozen=True)
class Section:
    id: int
    paragraphs: tuple

    @property
    def rendered_text(self) -> str:
        body = f"\n{PARAGRAPH_DELIM}\n".join(p.text for p in self.paragraphs)
        return f"{SECTION_OPEN}\n{body}\n{SECTION_CLOSE}"

    @property
    def packet_examples(self) -> tuple:
        return tuple(p for p in self.paragraphs if p.kind == PACKET_EXAMPLE)


@dataclass(frozen=True)
class Proposition:
    id: str
    text: str
    source_section: int


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    title: str
    summary: str
    propositions: tuple  # ordered proposition ids


@dataclass(frozen=True)
class ChunkerConfig:
    theta: float = 0.5
    max_chunks: int = 64
    refine_every: int = 5

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must be in [0, 1]")
        if self.max_chunks < 1:
            raise ValueError("max_chunks must be >= 1")
        if self.refine_every < 1:
            raise ValueError("refine_every must be >= 1")


# ---------------------------------------------------------------------------
# Segmentation

_RTSP_TOKENS = (
    "OPTIONS", "DESCRIBE", "ANNOUNCE", "SETUP", "PLAY", "PAUSE", "TEARDOWN",
    "GET_PARAMETER", "SET_PARAMETER", "RECORD", "RTSP/", "rtsp://",
)


def _is_indented(line: str) -> bool:
    return line.startswith(("   ", "\t"))


def segment(raw_text: str) -> list:
    """Split raw RFC text into paragraphs.

    Blocks are runs of non-blank lines; a block whose lines are all indented
    is a packet_example (when it mentions protocol tokens) or a code_block.
    Consecutive indented blocks separated only by blank lines merge into a
    single paragraph so message traces keep their internal structure.
    """
    if not raw_text or not raw_text.strip():
        raise EmptyDocument("document is empty")
    lines = raw_text.splitlines()
    blocks: list = []  # (lines, indented)
    i = 0
    n = len(lines)
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        start = i
        while i < n and lines[i].strip():
            i += 1
        block = lines[start:i]
        indented = all(_is_indented(ln) for ln in block)
        if indented and blocks and blocks[-1][1] and _only_blanks_between(lines, blocks[-1][2], start):
            prev_lines, _, _ = blocks[-1]
            gap = lines[blocks[-1][2] : start]
            blocks[-1] = (prev_lines + gap + block, True, i)
        else:
            blocks.append((block, indented, i))
    paragraphs = []
    for idx, (block_lines, indented, _) in enumerate(blocks):
        text = "\n".join(block_lines)
        if indented:
            kind = PACKET_EXAMPLE if any(tok in text for tok in _RTSP_TOKENS) else CODE_BLOCK
        else:
            kind = PROSE
        paragraphs.append(Paragraph(index=idx, text=text, kind=kind))
    return paragraphs


def _only_blanks_between(lines, end, start) -> bool:
    return all(not ln.strip() for ln in lines[end:start])


# ---------------------------------------------------------------------------
# Relevance filter

@dataclass(frozen=True)
class FilterRules:
    allow_keywords: tuple
    deny_markers: tuple


DEFAULT_FILTER_RULES = FilterRules(
    allow_keywords=(
        "options", "describe", "announce", "setup", "play", "pause", "teardown",
        "get_parameter", "set_parameter", "record", "rtsp", "session", "header",
        "transport", "status code", "request", "response", "stream", "method",
        "cseq", "server", "client",
    ),
    deny_markers=(
        "full copyright statement",
        "all rights reserved",
        "status of this memo",
        "table of contents",
        "acknowledg",
        "authors' addresses",
        "intellectual property",
    ),
)


def filter_paragraph(p: Paragraph, rules: FilterRules = DEFAULT_FILTER_RULES) -> bool:
    """1 iff the paragraph is protocol-relevant.

    packet_example and code_block paragraphs always pass (structural allow);
    the boilerplate deny-list only ever applies to prose, so adding deny
    rules can never flip a packet example to 0.
    """
    if p.kind != PROSE:
        return True
    low = p.text.lower()
    if not low.strip():
        return False
    if any(marker in low for marker in rules.deny_markers):
        return False
    return any(keyword in low for keyword in rules.allow_keywords)


MODEL_FILTER_SCHEMA = {
    "type": "object",
    "properties": {"relevant": {"type": "boolean"}},
    "required": ["relevant"],
}


def filter_paragraph_model(p: Paragraph, gateway: LlmGateway) -> bool:
    """Gateway-backed relevance check (--filter-mode model)."""
    if p.kind != PROSE:
        return True
    req = ChatRequest(
        system_prompt=load_prompt("filter_relevance"),
        user_prompt=p.text,
        schema=MODEL_FILTER_SCHEMA,
    )
    value = gateway.complete_structured(req, MODEL_FILTER_SCHEMA)
    return bool(value["relevant"])


# ---------------------------------------------------------------------------
# Section assembly

_RENDER_BASE = len(SECTION_OPEN) + len(SECTION_CLOSE) + 2  # "###\n" + "\n@@@"
_RENDER_JOIN = len(PARAGRAPH_DELIM) + 2  # "\n---\n"


def assemble_sections(kept: Sequence[Paragraph], budget: int = DEFAULT_SECTION_BUDGET) -> list:
    """Greedy packing of kept paragraphs into character-budgeted sections.

    The budget bounds the rendered section text (delimiters included). A
    single paragraph over budget is emitted alone with an
    OversizeSectionWarning. Order is preserved; every kept paragraph lands
    in exactly one section.
    """
    sections = []
    current: list = []
    size = _RENDER_BASE
    for p in kept:
        plen = len(p.text)
        if _RENDER_BASE + plen > budget:
            if current:
                sections.append(current)
                current, size = [], _RENDER_BASE
            warnings.warn(
                f"paragraph {p.index} exceeds section budget ({plen} > {budget})",
                OversizeSectionWarning,
            )
            sections.append([p])
            continue
        cost = plen + (_RENDER_JOIN if current else 0)
        if current and size + cost > budget:
            sections.append(current)
            current, size = [], _RENDER_BASE
            cost = plen
        current.append(p)
        size += cost
    if current:
        sections.append(current)
    return [Section(id=i, paragraphs=tuple(ps)) for i, ps in enumerate(sections)]


# ---------------------------------------------------------------------------
# Atomic statement extraction

SENTENCES_SCHEMA = {
    "type": "object",
    "properties": {
        "sentences": {"type": "array", "items": {"type": "string"}, "minItems": 1}
    },
    "required": ["sentences"],
}

_PROMPT_DIR = Path(__file__).parent / "assets" / "prompts"


def load_prompt(name: str) -> str:
    return (_PROMPT_DIR / f"{name}.txt").read_text(encoding="utf-8")


def propositionalize(section: Section, gateway: LlmGateway) -> list:
    """Decompose one section into ordered atomic statements.

    The gateway enforces the {"sentences": [...]} schema with its retry
    budget; packet-example text must additionally survive verbatim inside
    the returned statements, otherwise the section is rejected.
    """
    req = ChatRequest(
        system_prompt=load_prompt("propositionalize"),
        user_prompt=section.rendered_text,
        schema=SENTENCES_SCHEMA,
    )
    try:
        value = gateway.complete_structured(req, SENTENCES_SCHEMA)
    except (SchemaViolation, GatewayTimeout, GatewayUnavailable) as exc:
        raise PropositionParseFailure(f"section {section.id}: {exc}") from exc
    sentences = [s for s in value["sentences"] if s.strip()]
    if not sentences:
        raise PropositionParseFailure(f"section {section.id}: empty sentence list")
    joined = "\n".join(sentences)
    for block in section.paragraphs:
        if block.kind != PROSE and block.text not in joined:
            raise PropositionParseFailure(
                f"section {section.id}: {block.kind} not preserved verbatim"
            )
    return [
        Proposition(id=f"p-{section.id:03d}-{k:03d}", text=s, source_section=section.id)
        for k, s in enumerate(sentences)
    ]


# ---------------------------------------------------------------------------
# Incremental semantic chunking

SimilarityFn = Callable[[str, str], float]


def embedding_similarity(dims: int = 256, seed: int = 2326) -> SimilarityFn:
    """Default sim: clamped cosine over hash-embedded texts, in [0, 1].

    Negative cosines are clamped to 0 rather than rescaled so theta keeps
    its meaning as a cosine threshold.
    """
    cache: dict = {}

    def _vec(text: str):
        v = cache.get(text)
        if v is None:
            v = kernels.embed_text(text, dims, seed)
            cache[text] = v
        return v

    def sim(a: str, b: str) -> float:
        return max(0.0, kernels.dot(_vec(a), _vec(b)))

    return sim


def chunk_select(prop: Proposition, chunks: Sequence[Chunk], sim: SimilarityFn,
                 cfg: ChunkerConfig) -> Optional[str]:
    """Most compatible chunk id, or None when no summary clears theta.

    Argmax of sim(proposition text, chunk summary); ties break to the
    lowest chunk_id, so permuting the chunk list never changes the answer.
    """
    best_id = None
    best_score = -1.0
    for chunk in chunks:
        score = sim(prop.text, chunk.summary)
        if score > best_score or (score == best_score and best_id is not None
                                  and chunk.chunk_id < best_id):
            best_id = chunk.chunk_id
            best_score = score
    if best_id is None or best_score < cfg.theta:
        return None
    return best_id


TITLE_SUMMARY_SCHEMA = {
    "type": "object",
    "properties": {
        "title": {"type": "string", "minLength": 1},
        "summary": {"type": "string", "minLength": 1},
    },
    "required": ["title", "summary"],
}


def refine_metadata(chunk: Chunk, gateway: LlmGateway,
                    prop_texts: Optional[dict] = None) -> Chunk:
    """Regenerate the chunk's title and summary from its propositions.

    Gateway failure leaves the chunk unchanged and emits a
    RefinementSkippedWarning; the proposition list is never touched.
    """
    if not chunk.propositions:
        raise ValueError("cannot refine an empty chunk")
    texts = chunk.propositions if prop_texts is None else [
        prop_texts.get(pid, pid) for pid in chunk.propositions
    ]
    req = ChatRequest(
        system_prompt=load_prompt("refine_chunk"),
        user_prompt="\n".join(f"- {t}" for t in texts),
        schema=TITLE_SUMMARY_SCHEMA,
    )
    try:
        value = gateway.complete_structured(req, TITLE_SUMMARY_SCHEMA)
    except (SchemaViolation, GatewayTimeout, GatewayUnavailable) as exc:
        warnings.warn(
            f"refinement skipped for {chunk.chunk_id}: {exc}", RefinementSkippedWarning
        )
        return chunk
    return replace(chunk, title=value["title"], summary=value["summary"])


def _provisional_title(text: str) -> str:
    words = text.split()
    return " ".join(words[:8]) if words else text


def run_agentic_chunking(props: Sequence[Proposition], gateway: Optional[LlmGateway],
                         sim: SimilarityFn, cfg: ChunkerConfig) -> list:
    """Sequential-greedy grouping of propositions into titled chunks.

    Each proposition joins the argmax chunk when its summary similarity
    clears theta, otherwise seeds a new chunk (provisional title/summary =
    the proposition itself). When max_chunks is reached it joins the argmax
    regardless of theta. Without a gateway no refinement happens and
    summaries stay provisional.
    """
    if not props:
        raise ValueError("props must be non-empty")
    prop_texts = {p.id: p.text for p in props}
    chunks: list = []
    since_refine: dict = {}

    def _refine(pos: int) -> None:
        if gateway is None:
            return
        chunks[pos] = refine_metadata(chunks[pos], gateway, prop_texts)
        since_refine[chunks[pos].chunk_id] = 0

    for prop in props:
        selected = chunk_select(prop, chunks, sim, cfg)
        if selected is None:
            if len(chunks) < cfg.max_chunks:
                chunk = Chunk(
                    chunk_id=f"chunk-{len(chunks):04d}",
                    title=_provisional_title(prop.text),
                    summary=prop.text,
                    propositions=(prop.id,),
                )
                chunks.append(chunk)
                since_refine[chunk.chunk_id] = 0
                _refine(len(chunks) - 1)
                continue
            selected = _argmax_chunk(prop, chunks, sim)
        pos = next(i for i, c in enumerate(chunks) if c.chunk_id == selected)
        chunks[pos] = replace(chunks[pos],
                              propositions=chunks[pos].propositions + (prop.id,))
        since_refine[selected] = since_refine.get(selected, 0) + 1
        if since_refine[selected] >= cfg.refine_every:
            _refine(pos)
    return chunks


def _argmax_chunk(prop: Proposition, chunks: Sequence[Chunk], sim: SimilarityFn) -> str:
    best_id = None
    best_score = -1.0
    for chunk in chunks:
        score = sim(prop.text, chunk.summary)
        if score > best_score or (score == best_score and best_id is not None
                                  and chunk.chunk_id < best_id):
            best_id = chunk.chunk_id
            best_score = score
    return best_id


# ---------------------------------------------------------------------------
# Pipeline driver + chunk store I/O

@dataclass
class PipelineResult:
    paragraphs: list
    sections: list
    propositions: list
    chunks: list
    skipped_sections: list = field(default_factory=list)


def run_pipeline(raw_text: str, gateway: Optional[LlmGateway],
                 rules: FilterRules = DEFAULT_FILTER_RULES,
                 budget: int = DEFAULT_SECTION_BUDGET,
                 cfg: ChunkerConfig = ChunkerConfig(),
                 sim: Optional[SimilarityFn] = None,
                 filter_mode: str = "rules") -> PipelineResult:
    """End-to-end document -> chunks. Sections whose extraction fails are
    skipped and reported, never fatal."""
    paragraphs = segment(raw_text)
    if filter_mode == "model":
        if gateway is None:
            raise ValueError("model filter mode needs a gateway")
        kept = [p for p in paragraphs if filter_paragraph_model(p, gateway)]
    else:
        kept = [p for p in paragraphs if filter_paragraph(p, rules)]
    sections = assemble_sections(kept, budget)
    props: list = []
    skipped: list = []
    for section in sections:
        try:
            props.extend(propositionalize(section, gateway))
        except PropositionParseFailure as exc:
            skipped.append((section.id, str(exc)))
    if not props:
        raise PropositionParseFailure("no section produced any propositions")
    chunks = run_agentic_chunking(props, gateway, sim or embedding_similarity(), cfg)
    return PipelineResult(paragraphs=paragraphs, sections=sections,
                          propositions=props, chunks=chunks,
                          skipped_sections=skipped)


def write_chunk_store(path, chunks: Sequence[Chunk], props: Sequence[Proposition]) -> None:
    """Persist chunks as the map chunk_id -> {title, summary, propositions},
    with proposition ids resolved to their texts."""
    texts = {p.id: p.text for p in props}
    store = {
        c.chunk_id: {
            "title": c.title,
            "summary": c.summary,
            "propositions": [texts[pid] for pid in c.propositions],
        }
        for c in chunks
    }
    Path(path).write_text(
        json.dumps(store, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_propositions(path, props: Sequence[Proposition]) -> None:
    payload = [
        {"id": p.id, "text": p.text, "source_section": p.source_section}
        for p in props
    ]
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
