"""Chunk embedding, exact top-k retrieval, and index persistence.

The index is an exact cosine scan (corpora here are at most thousands of
chunks; exactness is what makes oracle testing possible). The default
embedder is offline and deterministic: seeded feature-hashing of character
n-grams into 256 dims, L2-normalised, so scores are plain dot products.
Indexes are immutable after build/load and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ragfuzz import kernels

INDEX_FORMAT = "ragfuzz-index"
INDEX_VERSION = 1
DEFAULT_TOP_K = 4


class EmbeddingUnavailable(RuntimeError):
    """Embedding provider failed or was handed empty text."""


class DuplicateChunk(ValueError):
    """Two chunks with the same id in one index build."""


class EmptyIndex(LookupError):
    """Search over an index with no entries."""


class EmbedderMismatch(RuntimeError):
    """Loaded index was built by a different embedding provider."""


class IndexCorrupt(RuntimeError):
    """Index file is unreadable or fails its format checks."""


@dataclass(frozen=True)
class ChunkDoc:
    """The retrieval unit: a titled, summarized group of statements."""

    chunk_id: str
    title: str
    summary: str
    propositions: tuple  # statement texts

    @property
    def rendered(self) -> str:
        return "\n".join((self.title, self.summary, *self.propositions))


@dataclass(frozen=True)
class EmbeddingVector:
    dims: int
    values: tuple

    def __post_init__(self):
        if len(self.values) != self.dims:
            raise ValueError("dims does not match value count")


class HashingEmbedder:
    """Deterministic offline embedder: signed n-gram hashing, unit norm."""

    def __init__(self, dims: int = 256, seed: int = 2326):
        self.dims = dims
        self.seed = seed
        self._cache: dict = {}

    @property
    def embedder_id(self) -> str:
        return f"hash-ngram-d{self.dims}-s{self.seed}"

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmbeddingUnavailable("cannot embed empty text")
        cached = self._cache.get(text)
        if cached is None:
            values = tuple(kernels.embed_text(text, self.dims, self.seed))
            cached = EmbeddingVector(dims=self.dims, values=values)
            self._cache[text] = cached
        return cached


_HASH_ID_RE = None


def provider_for_id(embedder_id: str):
    """Reconstruct the offline embedder a persisted index was built with,
    or None for ids naming external providers."""
    global _HASH_ID_RE
    if _HASH_ID_RE is None:
        import re

        _HASH_ID_RE = re.compile(r"^hash-ngram-d(\d+)-s(\d+)$")
    m = _HASH_ID_RE.match(embedder_id)
    if not m:
        return None
    return HashingEmbedder(dims=int(m.group(1)), seed=int(m.group(2)))


def embed(text: str, provider) -> EmbeddingVector:
    """Provider call with failures normalized to EmbeddingUnavailable."""
    try:
        return provider.embed(text)
    except EmbeddingUnavailable:
        raise
    except Exception as exc:
        raise EmbeddingUnavailable(str(exc)) from exc


@dataclass(frozen=True)
class IndexEntry:
    chunk_id: str
    vector: EmbeddingVector
    chunk: ChunkDoc


@dataclass(frozen=True)
class VectorIndex:
    entries: tuple
    embedder_id: str
    dims: int
    embedder: object = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class RetrievalResult:
    chunk_id: str
    score: float
    chunk: ChunkDoc


@dataclass(frozen=True)
class ContextBundle:
    """Ranked chunk texts ready for prompt injection."""

    results: tuple

    @property
    def chunk_ids(self) -> tuple:
        return tuple(r.chunk_id for r in self.results)

    @property
    def rendered(self) -> str:
        parts = []
        for r in self.results:
            parts.append(
                f"[chunk {r.chunk_id}] {r.chunk.title}\n"
                f"{r.chunk.summary}\n"
                + "\n".join(f"- {p}" for p in r.chunk.propositions)
            )
        return "\n\n".join(parts)


def build_index(chunks: Sequence[ChunkDoc], provider) -> VectorIndex:
    """One entry per chunk; embedded text = title + summary + statements
    joined by newlines."""
    if not chunks:
        raise ValueError("cannot build an index from zero chunks")
    seen = set()
    entries = []
    for chunk in chunks:
        if chunk.chunk_id in seen:
            raise DuplicateChunk(f"duplicate chunk id {chunk.chunk_id!r}")
        seen.add(chunk.chunk_id)
        entries.append(IndexEntry(chunk_id=chunk.chunk_id,
                                  vector=embed(chunk.rendered, provider),
                                  chunk=chunk))
    return VectorIndex(entries=tuple(entries), embedder_id=provider.embedder_id,
                       dims=entries[0].vector.dims, embedder=provider)


def search(index: VectorIndex, query: str, k: int) -> list:
    """Exact top-k by descending cosine, ties by ascending chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.entries:
        raise EmptyIndex("index has no entries")
    if index.embedder is None:
        raise EmbedderMismatch("index has no attached embedding provider")
    qv = embed(query, index.embedder).values
    scored = [
        RetrievalResult(chunk_id=e.chunk_id,
                        score=kernels.dot(qv, e.vector.values),
                        chunk=e.chunk)
        for e in index.entries
    ]
    scored.sort(key=lambda r: (-r.score, r.chunk_id))
    return scored[: min(k, len(scored))]


def retrieve_context(index: VectorIndex, query: str, k: int = DEFAULT_TOP_K) -> ContextBundle:
    """Search results wrapped for prompt injection, rank order preserved."""
    return ContextBundle(results=tuple(search(index, query, k)))


def persist_index(index: VectorIndex, path, meta: Optional[dict] = None) -> None:
    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "meta": meta or {},
        "embedder_id": index.embedder_id,
        "dims": index.dims,
        "entries": [
            {
                "chunk_id": e.chunk_id,
                "vector": list(e.vector.values),
                "chunk": {
                    "title": e.chunk.title,
                    "summary": e.chunk.summary,
                    "propositions": list(e.chunk.propositions),
                },
            }
            for e in index.entries
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_index(path, provider=None) -> VectorIndex:
    """Load a persisted index; when a provider is given its embedder_id must
    match the one recorded at build time."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != INDEX_FORMAT or payload.get("version") != INDEX_VERSION:
            raise IndexCorrupt(f"not a {INDEX_FORMAT} v{INDEX_VERSION} file")
        entries = []
        for item in payload["entries"]:
            chunk = ChunkDoc(
                chunk_id=item["chunk_id"],
                title=item["chunk"]["title"],
                summary=item["chunk"]["summary"],
                propositions=tuple(item["chunk"]["propositions"]),
            )
            entries.append(IndexEntry(
                chunk_id=item["chunk_id"],
                vector=EmbeddingVector(dims=payload["dims"],
                                       values=tuple(item["vector"])),
                chunk=chunk,
            ))
        embedder_id = payload["embedder_id"]
    except IndexCorrupt:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise IndexCorrupt(f"cannot load index: {exc}") from exc
    if provider is not None and provider.embedder_id != embedder_id:
        raise EmbedderMismatch(
            f"index built with {embedder_id!r}, active provider is "
            f"{provider.embedder_id!r}"
        )
    return VectorIndex(entries=tuple(entries), embedder_id=embedder_id,
                       dims=payload["dims"], embedder=provider)


def load_chunk_store(path) -> list:
    """Read the chunk-store JSON (map chunk_id -> title/summary/propositions)
    written by the document pipeline."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        ChunkDoc(chunk_id=cid, title=item["title"], summary=item["summary"],
                 propositions=tuple(item["propositions"]))
        for cid, item in sorted(raw.items())
    ]
