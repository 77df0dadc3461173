"""Corpus documents and whitespace-token chunking."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

TEXT_SUFFIXES = (".txt", ".md")


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    source: str
    text: str


@dataclass(frozen=True)
class Chunk:
    id: str
    doc_id: str
    ordinal: int
    text: str
    start: int
    end: int


def chunk_id(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal}"


def chunk_document(doc: CorpusDocument, target_tokens: int = 300, overlap_tokens: int = 50) -> list[Chunk]:
    """Sliding windows of ``target_tokens`` whitespace tokens.

    Consecutive windows share ``overlap_tokens`` tokens; the last window ends
    at the document end.
    """
    if target_tokens < 1 or not 0 <= overlap_tokens < target_tokens:
        raise ValueError("need target_tokens >= 1 and 0 <= overlap_tokens < target_tokens")
    tokens = doc.text.split()
    if not tokens:
        logger.warning("skipping empty document %s", doc.doc_id)
        return []
    step = target_tokens - overlap_tokens
    chunks = []
    start = 0
    while True:
        end = min(start + target_tokens, len(tokens))
        chunks.append(Chunk(chunk_id(doc.doc_id, len(chunks)), doc.doc_id, len(chunks),
                            " ".join(tokens[start:end]), start, end))
        if end == len(tokens):
            return chunks
        start += step


def chunk_corpus(documents, target_tokens: int = 300, overlap_tokens: int = 50) -> list[Chunk]:
    documents = list(documents)
    if not documents:
        raise ValueError("corpus has no documents")
    seen = set()
    chunks = []
    for doc in documents:
        if doc.doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        chunks.extend(chunk_document(doc, target_tokens, overlap_tokens))
    return chunks


def load_corpus(path) -> list[CorpusDocument]:
    """Read a corpus from a directory of text files or a JSONL file.

    Directory: every ``.txt``/``.md`` file below it, doc id = relative path
    without suffix, in sorted order. JSONL: one ``{"doc_id", "text"}`` object
    per line.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.suffix in TEXT_SUFFIXES and p.is_file())
        docs = [
            CorpusDocument(p.relative_to(path).with_suffix("").as_posix(), str(p), p.read_text(encoding="utf-8"))
            for p in files
        ]
    elif path.suffix == ".jsonl":
        docs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    docs.append(CorpusDocument(str(rec["doc_id"]), f"{path}:{lineno}", rec["text"]))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad corpus record ({exc})") from None
    else:
        raise ValueError(f"corpus path {path} is neither a directory nor a .jsonl file")
    if not docs:
        raise ValueError(f"no documents found under {path}")
    return docs


def corpus_hash(chunks) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c.id.encode("utf-8"))
        h.update(b"\0")
        h.update(c.text.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()
