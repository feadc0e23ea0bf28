"""Filing chunking, embedding and cosine retrieval exposed as an agent tool.

Chunk boundaries are counted in whitespace-delimited tokens. A chunk owns the
whitespace that follows its last token, so concatenating the chunks of a
document gives back the document byte for byte.

Scores are cosine similarities rather than raw dot products because the
hash embedder is not normalized.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import numpy as np

from .errors import ArgValidation, EmbedderFailure, EmptyDocument, EmptyIndex, ProviderError
from .toolkit.registry import ToolContext, ToolParam, ToolSpec

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_K = 3

_TOKEN_RE = re.compile(r"\S+")
_WORD_RE = re.compile(r"\w+")


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    index: int
    text: str
    token_count: int


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def chunk_document(text: str, chunk_size: int = DEFAULT_CHUNK_SIZE, doc_id: str = "doc", overlap: int = 0) -> list[Chunk]:
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    if not 0 <= overlap < chunk_size:
        raise ValueError("overlap must be in [0, chunk_size)")
    starts = [m.start() for m in _TOKEN_RE.finditer(text)]
    if not starts:
        raise EmptyDocument(doc_id)
    step = chunk_size - overlap
    chunks = []
    first = 0
    while True:
        last = min(first + chunk_size, len(starts))
        begin = 0 if first == 0 else starts[first]
        end = starts[last] if last < len(starts) else len(text)
        chunks.append(Chunk(doc_id, len(chunks), text[begin:end], last - first))
        if last == len(starts):
            return chunks
        first += step


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Seeded signed feature hashing over lower-cased word tokens.

    Vectors are integer-valued, so dot products and norms are exact and two
    scans over the same index agree bit for bit.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._salt = seed.to_bytes(8, "little", signed=True)

    def _bucket(self, token: str) -> tuple[int, int]:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=self._salt[:8].ljust(16, b"\0")).digest()
        v = int.from_bytes(h, "little")
        return v % self.dim, 1 if (v >> 63) & 1 else -1

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmbedderFailure("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in _WORD_RE.findall(text.lower()):
            i, sign = self._bucket(tok)
            vec[i] += sign
        return vec


def embed(text: str, embedder: Embedder | None = None) -> np.ndarray:
    return (embedder or HashEmbedder()).embed(text)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.dot(a, a)) * float(np.dot(b, b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b)) / np.sqrt(denom)


@dataclass
class VectorIndex:
    """Chunks of one or more documents with one embedding per chunk."""

    embedder: Embedder
    chunks: list[Chunk] = field(default_factory=list)
    matrix: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @classmethod
    def build(
        cls,
        documents: Mapping[str, str],
        embedder: Embedder | None = None,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        overlap: int = 0,
    ) -> "VectorIndex":
        embedder = embedder or HashEmbedder()
        chunks = []
        for doc_id in sorted(documents):
            chunks.extend(chunk_document(documents[doc_id], chunk_size, doc_id, overlap))
        # canonical order so insertion order never leaks into results
        chunks.sort(key=lambda c: (c.doc_id, c.index))
        matrix = np.array([embedder.embed(c.text) for c in chunks]).reshape(len(chunks), embedder.dim)
        return cls(embedder, chunks, matrix)

    def __len__(self):
        return len(self.chunks)

    def save(self, path: str | Path) -> None:
        lines = []
        for c, row in zip(self.chunks, self.matrix):
            lines.append("\t".join([c.doc_id, str(c.index), " ".join(repr(float(x)) for x in row)]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, documents: Mapping[str, str], embedder: Embedder,
             chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = 0) -> "VectorIndex":
        """Load stored vectors; chunk texts are rebuilt from `documents`."""
        by_key = {}
        for doc_id, text in documents.items():
            for c in chunk_document(text, chunk_size, doc_id, overlap):
                by_key[(doc_id, c.index)] = c
        chunks, rows = [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            doc_id, idx, vec = line.split("\t")
            chunks.append(by_key[(doc_id, int(idx))])
            rows.append([float(x) for x in vec.split()])
        if len(chunks) != len(by_key):
            raise ValueError(f"stored index has {len(chunks)} chunks, documents give {len(by_key)}")
        return cls(embedder, chunks, np.array(rows).reshape(len(rows), embedder.dim))


def retrieve(index: VectorIndex, query: str, k: int = DEFAULT_K) -> list[tuple[Chunk, float]]:
    """Top-k chunks by cosine similarity; ties go to (doc_id, chunk index) ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.chunks:
        raise EmptyIndex("index has no chunks")
    q = index.embedder.embed(query)
    dots = index.matrix @ q
    denom = np.einsum("ij,ij->i", index.matrix, index.matrix) * float(q @ q)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(denom > 0, dots / np.sqrt(denom), 0.0)
    # chunks are stored in tie-break order, so a stable sort on -score suffices
    order = np.argsort(-scores, kind="stable")[:k]
    return [(index.chunks[i], float(scores[i])) for i in order]


def load_corpus(corpus_dir: str | Path, tickers: Iterable[str], year: int = 2023) -> dict[str, str]:
    """ticker -> filing text, from files named <TICKER>_10K_<year>.txt."""
    out = {}
    for t in tickers:
        path = Path(corpus_dir) / f"{t}_10K_{year}.txt"
        out[t] = path.read_text(encoding="utf-8")
    return out


def rag_tool_spec() -> ToolSpec:
    return ToolSpec(
        "retrieve_filing",
        "Search the company's annual report (10-K) and return the most relevant passages. "
        "Refine the query and call again if the passages are not useful.",
        (
            ToolParam("query", "string", True, "Keywords or a key phrase to search for"),
            ToolParam("k", "integer", False, "Number of passages to return", DEFAULT_K),
        ),
    )


def format_hits(hits: list[tuple[Chunk, float]]) -> str:
    return "\n\n".join(f"[{c.doc_id}#{c.index}] (score {s:.3f})\n{c.text.strip()}" for c, s in hits)


def retrieve_handler(indices: Mapping[str, VectorIndex]):
    """Tool handler searching the filing index of the conversation's ticker."""

    def handler(args: dict, ctx: ToolContext) -> str:
        index = indices.get(ctx.ticker)
        if index is None:
            raise ProviderError(f"no filing indexed for {ctx.ticker}")
        k = args.get("k", DEFAULT_K)
        if k < 1:
            raise ArgValidation("k", "must be >= 1")
        return format_hits(retrieve(index, args["query"], k))

    return handler
