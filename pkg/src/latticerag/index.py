"""Index build (chunk -> embed -> RQ-KMeans -> concept graph -> summaries) and persistence.

Directory layout, one artifact per stage plus a manifest::

    manifest.json        format version, corpus hash, sizes, config, artifact hashes
    chunks.jsonl         corpus chunks
    vectors.npy          chunk embeddings (float64)
    codebooks.json       centroids and training assignments per level
    memberships.json     per-level fuzzy c-means memberships
    graph.json           concept graph (never depends on summaries)
    bm25.json            BM25 postings over chunks and summary chunks
    summaries.jsonl      summary virtual chunks
    summary_vectors.npy  their embeddings
    ledger.json          LLM usage recorded during the build
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .accounting import INDEXING_SUMMARY, UsageLedger
from .concept_graph import SEED, ConceptGraph, build_concept_graph
from .config import Config, ConfigError, config_from_dict, validate
from .corpus import Chunk, chunk_corpus, corpus_hash
from .embeddings import EmbeddingError, EmbeddingProvider, make_provider
from .query_pipeline import ModelClient, ModelClientError, ModelRequest, RemoteClient, StubClient, call_model, load_prompt
from .retrieval import CHUNK, SUMMARY_CHUNK, Bm25Index, HybridRetriever, SearchItem
from .rq_kmeans import (Codebook, CodebookHierarchy, LevelOccupancy, MembershipMatrix, OccupancyReport,
                        fit_rq_kmeans, level_memberships, occupancy)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
ARTIFACTS = ("chunks.jsonl", "vectors.npy", "codebooks.json", "memberships.json", "graph.json",
             "bm25.json", "summaries.jsonl", "summary_vectors.npy", "ledger.json")


class CorruptIndexError(Exception):
    """Index directory is missing files or does not match its manifest."""


class IndexLockedError(Exception):
    """Another build holds the lock on the output directory."""


@dataclass(frozen=True)
class SummaryVirtualChunk:
    chunk_id: str
    source_node: str
    text: str
    embedding: np.ndarray
    doc_ids: tuple
    kind: str = SUMMARY_CHUNK


@dataclass
class Index:
    chunks: list
    vectors: np.ndarray
    hierarchy: CodebookHierarchy
    memberships: list
    occupancy: OccupancyReport
    graph: ConceptGraph
    summaries: list
    bm25: Bm25Index
    config: Config
    ledger: UsageLedger = field(default_factory=UsageLedger)
    manifest: dict = field(default_factory=dict)

    def items(self) -> list[SearchItem]:
        out = [SearchItem(c.id, c.text, (c.doc_id,), CHUNK) for c in self.chunks]
        out += [SearchItem(s.chunk_id, s.text, s.doc_ids, SUMMARY_CHUNK, s.source_node) for s in self.summaries]
        return out

    def item_vectors(self) -> np.ndarray:
        if not self.summaries:
            return self.vectors
        return np.vstack([self.vectors] + [s.embedding[None, :] for s in self.summaries])

    def retriever(self, provider: EmbeddingProvider | None = None, config=None) -> HybridRetriever:
        return HybridRetriever(self.items(), self.item_vectors(), self.graph, self.hierarchy,
                               provider, config or self.config.retrieval, self.bm25)


def provider_from_config(cfg: Config) -> EmbeddingProvider:
    p = cfg.provider
    kwargs = {}
    if p.mode == "remote":
        kwargs = {"timeout": p.timeout, "auth_header": p.auth_header,
                  "token": os.environ.get("LATTICERAG_EMBED_TOKEN")}
    try:
        return make_provider(p.mode, vector_file=p.vector_file, endpoint=p.endpoint,
                             dimension=p.dimension, cache=p.cache, **kwargs)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot set up embedding provider: {exc}") from exc


def client_from_config(cfg: Config) -> ModelClient:
    if cfg.client.mode == "stub":
        return StubClient()
    if not cfg.client.endpoint:
        raise ConfigError("client.mode=remote needs client.endpoint")
    return RemoteClient(cfg.client.endpoint, cfg.client.timeout)


def crisp_population(graph: ConceptGraph) -> dict:
    """Chunks whose highest membership at a seed's level falls on that seed."""
    pop = {}
    seeds = graph.nodes_of_kind(SEED)
    for level in sorted({s.level for s in seeds}):
        group = sorted((s for s in seeds if s.level == level), key=lambda s: s.id)
        winners = np.stack([s.extent for s in group], axis=1).argmax(axis=1)
        counts = np.bincount(winners, minlength=len(group))
        pop.update({s.id: int(n) for s, n in zip(group, counts)})
    return pop


def generate_summaries(graph: ConceptGraph, budget: int, client: ModelClient, provider: EmbeddingProvider,
                       chunks, ledger: UsageLedger | None = None, representatives: int = 5) -> list[SummaryVirtualChunk]:
    """One summary virtual chunk for each of the ``budget`` most populated seeds.

    Each call sees the node's ``representatives`` highest-extent chunks. A node
    whose call or embedding fails is skipped.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if budget == 0:
        return []
    by_id = {c.id: c for c in chunks}
    pop = crisp_population(graph)
    chosen = sorted(pop, key=lambda nid: (-pop[nid], nid))[:budget]
    out = []
    for nid in chosen:
        node = graph.nodes[nid]
        order = sorted(range(len(graph.chunk_ids)), key=lambda j: (-node.extent[j], graph.chunk_ids[j]))
        reps = [by_id[graph.chunk_ids[j]] for j in order[:representatives] if node.extent[j] > 0]
        if not reps:
            continue
        texts = [c.text for c in reps]
        passages = "\n\n".join(f"- {' '.join(t.split()[:120])}" for t in texts)
        req = ModelRequest("summarize", load_prompt("summarize").format(passages=passages),
                           {"node": nid, "passages": texts})
        try:
            text = call_model(client, ledger, INDEXING_SUMMARY, req).text.strip()
        except ModelClientError as exc:
            logger.warning("summary for %s failed: %s", nid, exc)
            continue
        if not text:
            logger.warning("summary for %s came back empty", nid)
            continue
        sid = f"summary:{nid}"
        try:
            vec = provider.embed_passage(text, key=sid)
        except EmbeddingError as exc:
            logger.warning("cannot embed summary %s: %s", sid, exc)
            continue
        doc_ids = tuple(sorted({c.doc_id for c in reps}))
        out.append(SummaryVirtualChunk(sid, nid, text, vec, doc_ids))
    return out


def build_in_memory(chunks, cfg: Config, provider: EmbeddingProvider,
                    client: ModelClient | None = None, ledger: UsageLedger | None = None) -> Index:
    """Run the build stages without touching disk."""
    cfg = validate(cfg)
    ledger = ledger if ledger is not None else UsageLedger()
    chunks = list(chunks)
    if not chunks:
        raise ValueError("no chunks to index")
    vectors = np.stack([provider.embed_passage(c.text, key=c.id) for c in chunks])

    rq = cfg.rq
    hierarchy = fit_rq_kmeans(vectors, rq.level_sizes, rq.seed, rq.max_iters, rq.tol)
    memberships = level_memberships(hierarchy, rq.fuzziness)
    report = occupancy(hierarchy)
    graph = build_concept_graph([c.id for c in chunks], hierarchy, memberships, report, cfg.graph)

    summaries = []
    if cfg.summaries.enabled and cfg.summaries.budget > 0:
        if client is None:
            client = client_from_config(cfg)
        summaries = generate_summaries(graph, cfg.summaries.budget, client, provider, chunks,
                                       ledger, cfg.summaries.representatives)
    ids = [c.id for c in chunks] + [s.chunk_id for s in summaries]
    texts = [c.text for c in chunks] + [s.text for s in summaries]
    bm25 = Bm25Index.build(ids, texts, cfg.retrieval.k1, cfg.retrieval.b)
    return Index(chunks, vectors, hierarchy, memberships, report, graph, summaries, bm25, cfg, ledger)


# persistence


def _dumps(obj) -> bytes:
    return (json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def _jsonl(records) -> bytes:
    return "".join(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n" for r in records).encode("utf-8")


def _npy(arr: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def _artifact_bytes(index: Index) -> dict:
    h = index.hierarchy
    dim = index.vectors.shape[1]
    return {
        "chunks.jsonl": _jsonl({"id": c.id, "doc_id": c.doc_id, "ordinal": c.ordinal, "start": c.start,
                                "end": c.end, "text": c.text} for c in index.chunks),
        "vectors.npy": _npy(index.vectors),
        "codebooks.json": _dumps({
            "levels": [{"level": cb.level, "requested_size": cb.requested_size,
                        "centroids": cb.centroids.tolist()} for cb in h.codebooks],
            "assignments": h.assignments.tolist(),
        }),
        "memberships.json": _dumps([{"level": m.level, "fuzziness_m": m.fuzziness_m,
                                     "values": m.values.tolist()} for m in index.memberships]),
        "graph.json": _dumps(index.graph.to_dict()),
        "bm25.json": _dumps(index.bm25.to_dict()),
        "summaries.jsonl": _jsonl({"id": s.chunk_id, "source_node": s.source_node, "doc_ids": list(s.doc_ids),
                                   "text": s.text} for s in index.summaries),
        "summary_vectors.npy": _npy(np.stack([s.embedding for s in index.summaries])
                                    if index.summaries else np.zeros((0, dim))),
        "ledger.json": _dumps(index.ledger.to_records()),
    }


def save_index(index: Index, out_dir, build_seconds: float = 0.0) -> dict:
    """Write every artifact and the manifest into ``out_dir`` (must be empty or absent)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blobs = _artifact_bytes(index)
    artifacts = {}
    for name in ARTIFACTS:
        (out / name).write_bytes(blobs[name])
        artifacts[name] = {"sha256": hashlib.sha256(blobs[name]).hexdigest(), "bytes": len(blobs[name])}
    manifest = {
        "format_version": FORMAT_VERSION,
        "corpus_hash": corpus_hash(index.chunks),
        "embedding_dim": int(index.vectors.shape[1]),
        "level_sizes": [cb.requested_size for cb in index.hierarchy.codebooks],
        "effective_level_sizes": [cb.size for cb in index.hierarchy.codebooks],
        "n_chunks": len(index.chunks),
        "n_summaries": len(index.summaries),
        "node_count": len(index.graph.nodes),
        "edge_count": len(index.graph.edges),
        "census": index.graph.census(),
        "occupancy": [{"level": o.level, "cluster_count": o.cluster_count, "occupancy": o.occupancy,
                       "label": o.label} for o in index.occupancy.per_level],
        "built_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "build_seconds": round(build_seconds, 3),
        "config": index.config.to_dict(),
        "artifacts": artifacts,
        "total_bytes": sum(a["bytes"] for a in artifacts.values()),
    }
    (out / MANIFEST).write_bytes(_dumps(manifest))
    index.manifest = manifest
    return manifest


def build_index(documents, cfg: Config, out_dir, provider: EmbeddingProvider | None = None,
                client: ModelClient | None = None) -> Index:
    """Chunk, embed, cluster, build the graph, summarise and persist.

    The build writes into a temporary sibling directory under an exclusive
    lock file and only replaces ``out_dir`` once everything succeeded, so a
    failed build leaves no partial index behind.
    """
    cfg = validate(cfg)
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    lock = out.parent / f".{out.name}.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise IndexLockedError(f"{lock} exists; another build is running") from None
    tmp = out.parent / f".{out.name}.tmp-{os.getpid()}"
    try:
        os.write(fd, str(os.getpid()).encode())
        start = time.perf_counter()
        chunks = chunk_corpus(documents, cfg.chunking.target_tokens, cfg.chunking.overlap_tokens)
        provider = provider or provider_from_config(cfg)
        index = build_in_memory(chunks, cfg, provider, client)
        if tmp.exists():
            shutil.rmtree(tmp)
        save_index(index, tmp, time.perf_counter() - start)
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
        logger.info("index written to %s (%d chunks, %d nodes)", out, len(chunks), len(index.graph.nodes))
        return index
    finally:
        os.close(fd)
        lock.unlink(missing_ok=True)
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptIndexError(f"cannot read {path.name}: {exc}") from exc


def load_index(index_dir, expected_dim: int | None = None) -> Index:
    """Load and verify an index directory.

    Raises:
        CorruptIndexError: missing artifact, hash mismatch, unsupported
            format version or embedding-dimension mismatch.
    """
    d = Path(index_dir)
    if not (d / MANIFEST).is_file():
        raise CorruptIndexError(f"{d} has no {MANIFEST}")
    manifest = _read_json(d / MANIFEST)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorruptIndexError(
            f"index format version {manifest.get('format_version')!r} is not supported (expected {FORMAT_VERSION})"
        )
    for name in ARTIFACTS:
        path = d / name
        if not path.is_file():
            raise CorruptIndexError(f"missing artifact {name}")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != manifest["artifacts"].get(name, {}).get("sha256"):
            raise CorruptIndexError(f"artifact {name} does not match the manifest")

    dim = manifest["embedding_dim"]
    if expected_dim is not None and expected_dim != dim:
        raise CorruptIndexError(f"index embedding dimension {dim} != provider dimension {expected_dim}")
    vectors = np.load(d / "vectors.npy", allow_pickle=False)
    if vectors.ndim != 2 or vectors.shape[1] != dim:
        raise CorruptIndexError(f"vectors.npy has shape {vectors.shape}, manifest says dimension {dim}")

    with open(d / "chunks.jsonl", encoding="utf-8") as fh:
        chunks = [Chunk(r["id"], r["doc_id"], r["ordinal"], r["text"], r["start"], r["end"])
                  for r in map(json.loads, fh)]
    if len(chunks) != vectors.shape[0]:
        raise CorruptIndexError("chunk count does not match vector count")

    cb_data = _read_json(d / "codebooks.json")
    codebooks = []
    for lv in cb_data["levels"]:
        cents = np.array(lv["centroids"], dtype=float).reshape(-1, dim)
        cents.setflags(write=False)
        codebooks.append(Codebook(lv["level"], cents, lv["requested_size"]))
    assignments = np.array(cb_data["assignments"], dtype=int).reshape(len(chunks), len(codebooks))
    inputs, residual = [], vectors
    for cb in codebooks:
        inputs.append(residual)
        residual = residual - cb.centroids[assignments[:, cb.level]]
    hierarchy = CodebookHierarchy(tuple(codebooks), assignments, tuple(inputs), residual)

    memberships = [MembershipMatrix(np.array(m["values"], dtype=float).reshape(len(chunks), -1),
                                    m["level"], m["fuzziness_m"]) for m in _read_json(d / "memberships.json")]
    graph = ConceptGraph.from_dict(_read_json(d / "graph.json"))
    bm25 = Bm25Index.from_dict(_read_json(d / "bm25.json"))

    svecs = np.load(d / "summary_vectors.npy", allow_pickle=False)
    with open(d / "summaries.jsonl", encoding="utf-8") as fh:
        srecs = [json.loads(line) for line in fh]
    if len(srecs) != svecs.shape[0]:
        raise CorruptIndexError("summary count does not match summary vectors")
    summaries = [SummaryVirtualChunk(r["id"], r["source_node"], r["text"], svecs[i], tuple(r["doc_ids"]))
                 for i, r in enumerate(srecs)]

    cfg = config_from_dict(manifest["config"])
    ledger = UsageLedger.from_records(_read_json(d / "ledger.json"))
    report = OccupancyReport(tuple(LevelOccupancy(**o) for o in manifest["occupancy"]))
    return Index(chunks, vectors, hierarchy, memberships, report, graph, summaries, bm25, cfg, ledger, manifest)


def index_size_on_disk(index_dir) -> int:
    return sum(p.stat().st_size for p in Path(index_dir).iterdir() if p.is_file())
