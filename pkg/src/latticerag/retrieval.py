"""Hybrid retrieval: BM25 + cosine + Łukasiewicz fuzzy routing over the concept graph.

    score(c) = boost * (0.3 * bm25_norm + 0.5 * cos(q, c) + 0.2 * fuzzy(q, c))

BM25 is min-max normalised over the candidate pool; the cosine term is raw.
Dot products use ``math.fsum`` so every score is reproducible bit-for-bit
regardless of summation order.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .concept_graph import JOIN, ConceptGraph, ConceptNode
from .fuzzy_algebra import luk_residuum, luk_tnorm, tnorm_array
from .rq_kmeans import CodebookHierarchy, residual_path

logger = logging.getLogger(__name__)

CHUNK, SUMMARY_CHUNK = "chunk", "summary"
PROVENANCE_EPS = 1e-12

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lower-case and split on non-alphanumerics."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class RoutingConfig:
    """Per-level activation thresholds and the activation floor.

    Levels beyond the listed thresholds reuse the last one.
    """

    thresholds: tuple = (0.75, 0.75, 0.75)
    floor: float = 0.05

    def __post_init__(self):
        if not self.thresholds:
            raise ValueError("at least one threshold is required")
        for t in (*self.thresholds, self.floor):
            if not 0 <= t <= 1:
                raise ValueError(f"routing parameters must lie in [0, 1], got {t}")

    def threshold(self, level: int) -> float:
        return self.thresholds[min(level, len(self.thresholds) - 1)]


@dataclass(frozen=True)
class RetrievalConfig:
    weights: tuple = (0.3, 0.5, 0.2)
    summary_boost: float = 1.2
    bridge_boost: float = 1.3
    k1: float = 1.2
    b: float = 0.75
    pool_size: int = 200
    brute_force: bool = False
    initial_k: int = 25
    routing: RoutingConfig = RoutingConfig()


# BM25


class Bm25Index:
    """Okapi BM25 over a fixed list of documents.

    IDF uses ``log((N - n + 0.5) / (n + 0.5) + 1)`` so it stays positive even
    for a term present in every document.
    """

    def __init__(self, postings: dict, doc_lengths: dict, k1: float = 1.2, b: float = 0.75):
        self.postings = {t: sorted(p) for t, p in postings.items()}
        self.doc_lengths = dict(doc_lengths)
        if any(v <= 0 for v in self.doc_lengths.values()):
            raise ValueError("document lengths must be positive")
        self.k1, self.b = k1, b
        self.n_docs = len(self.doc_lengths)
        self.avg_length = sum(self.doc_lengths.values()) / self.n_docs if self.n_docs else 0.0
        self._tf = {t: dict(p) for t, p in self.postings.items()}

    @classmethod
    def build(cls, ids, texts, k1: float = 1.2, b: float = 0.75) -> "Bm25Index":
        postings: dict = {}
        lengths = {}
        for doc_id, text in zip(ids, texts):
            tokens = tokenize(text)
            # empty documents still need a positive length
            lengths[doc_id] = max(len(tokens), 1)
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, []).append((doc_id, tf))
        return cls(postings, lengths, k1, b)

    def idf(self, term: str) -> float:
        n = len(self.postings.get(term, ()))
        return math.log((self.n_docs - n + 0.5) / (n + 0.5) + 1.0)

    def _term_score(self, term: str, doc_id) -> float:
        tf = self._tf.get(term, {}).get(doc_id, 0)
        if tf == 0:
            return 0.0
        dl = self.doc_lengths[doc_id]
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_length)
        return self.idf(term) * (tf * (self.k1 + 1.0)) / (tf + norm)

    def score(self, query_terms, doc_id) -> float:
        """BM25 of ``doc_id``; each distinct query term counts once."""
        terms = sorted(set(query_terms))
        return math.fsum(self._term_score(t, doc_id) for t in terms)

    def scores(self, query_terms) -> dict:
        """Scores of every document containing at least one query term."""
        hit = set()
        for t in set(query_terms):
            hit.update(d for d, _ in self.postings.get(t, ()))
        return {d: self.score(query_terms, d) for d in hit}

    def to_dict(self) -> dict:
        return {
            "k1": self.k1, "b": self.b,
            "doc_lengths": [[d, n] for d, n in self.doc_lengths.items()],
            "postings": {t: [[d, tf] for d, tf in p] for t, p in sorted(self.postings.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Bm25Index":
        postings = {t: [(d, tf) for d, tf in p] for t, p in data["postings"].items()}
        return cls(postings, {d: n for d, n in data["doc_lengths"]}, data["k1"], data["b"])


# similarity and routing


def exact_dot(u: np.ndarray, v: np.ndarray) -> float:
    return math.fsum(np.multiply(u, v))


def exact_norm(u: np.ndarray) -> float:
    return math.sqrt(exact_dot(u, u))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu, nv = exact_norm(u), exact_norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine of a zero-norm vector")
    return exact_dot(u, v) / (nu * nv)


def similarity_unit(q_vec, centroid) -> float:
    """Cosine mapped into [0, 1] as ``(1 + cos) / 2``."""
    c = cosine(q_vec, centroid)
    # rounding can push |cos| a hair past 1
    return min(1.0, max(0.0, (1.0 + c) / 2.0))


def query_levels(hierarchy: CodebookHierarchy, q_vec) -> dict:
    """Level -> the query's residual entering that level."""
    return dict(enumerate(residual_path(hierarchy, q_vec)))


def activation(q, node: ConceptNode, config: RoutingConfig = RoutingConfig()) -> float:
    """Query-concept activation ``T_l (theta_l -> s_l(q, v))``.

    ``q`` is either one vector used at every level or a mapping level ->
    vector (see :func:`query_levels`). Levels where either vector has zero
    norm carry no information and are skipped; if nothing is left the node
    does not activate.
    """
    if not node.centroids:
        raise ValueError(f"node {node.id} has no centroids")
    result = 1.0
    used = 0
    for level in sorted(node.centroids):
        qv = q[level] if isinstance(q, dict) else q
        if qv is None:
            continue
        try:
            s = similarity_unit(qv, node.centroids[level])
        except ValueError:
            continue
        result = luk_tnorm(result, luk_residuum(config.threshold(level), s))
        used += 1
    return result if used else 0.0


def fuzzy_channel(q, graph: ConceptGraph, chunk_id, config: RoutingConfig = RoutingConfig()):
    """Best ``activation(q, v) (x) extent_v(chunk)`` over activated nodes.

    Returns ``(score, provenance)`` where provenance holds every node within
    1e-12 of the best score; ``(0.0, ())`` when nothing fires.
    """
    idx = graph.chunk_ids.index(chunk_id)
    cands = {}
    for node in graph.nodes.values():
        if not node.centroids:
            continue
        mu = activation(q, node, config)
        if mu >= config.floor:
            cands[node.id] = luk_tnorm(mu, float(node.extent[idx]))
    if not cands:
        return 0.0, ()
    best = max(cands.values())
    if best <= 0:
        return 0.0, ()
    return best, tuple(sorted(n for n, v in cands.items() if v >= best - PROVENANCE_EPS))


# hybrid search


@dataclass(frozen=True)
class SearchItem:
    """A retrievable unit: a corpus chunk or a summary virtual chunk."""

    id: str
    text: str
    doc_ids: tuple
    kind: str = CHUNK
    source_node: str | None = None

    def matches(self, doc_filter) -> bool:
        return doc_filter is None or doc_filter in self.doc_ids


@dataclass
class RetrievalCandidate:
    chunk_id: str
    kind: str
    bm25_raw: float
    bm25_norm: float
    cosine: float
    fuzzy: float
    boost: float
    final_score: float
    provenance: tuple = ()
    rank: int = 0
    doc_ids: tuple = field(default=())

    @property
    def lattice_derived(self) -> bool:
        """Summary virtual chunk, or reached through a join/meet node."""
        return self.kind == SUMMARY_CHUNK or any(
            p.startswith(("join(", "meet(")) for p in self.provenance
        )


def combine(weights, boost, bm25_norm, cos, fuzzy) -> float:
    w_bm25, w_cos, w_fuzzy = weights
    return boost * (w_bm25 * bm25_norm + w_cos * cos + w_fuzzy * fuzzy)


class HybridRetriever:
    """Scores items against a query with the three channels.

    Args:
        items: retrievable items; corpus chunks must appear in
            ``graph.chunk_ids``.
        vectors: ``(len(items), d)`` passage embeddings in item order.
        graph: concept graph providing fuzzy extents.
        hierarchy: codebooks used to place the query at each level.
        provider: embedding provider for query text (optional when vectors
            are passed to :meth:`search`).
    """

    def __init__(self, items, vectors, graph: ConceptGraph, hierarchy: CodebookHierarchy,
                 provider=None, config: RetrievalConfig = RetrievalConfig(), bm25: Bm25Index | None = None):
        self.items = list(items)
        self.vectors = np.asarray(vectors, dtype=float)
        if self.vectors.shape[0] != len(self.items):
            raise ValueError("one vector per item is required")
        self.graph = graph
        self.hierarchy = hierarchy
        self.provider = provider
        self.config = config
        self.bm25 = bm25 or Bm25Index.build([i.id for i in self.items], [i.text for i in self.items],
                                            config.k1, config.b)
        self.norms = np.array([exact_norm(v) for v in self.vectors])
        self.node_ids = [n.id for n in graph.nodes.values()]
        self.bridge_nodes = {n.id for n in graph.nodes.values() if n.kind == JOIN}
        self.extents = self._extent_matrix()

    def _extent_matrix(self) -> np.ndarray:
        col = {cid: j for j, cid in enumerate(self.graph.chunk_ids)}
        row = {nid: i for i, nid in enumerate(self.node_ids)}
        nodes = list(self.graph.nodes.values())
        ext = np.zeros((len(nodes), len(self.items)))
        for j, item in enumerate(self.items):
            if item.kind == SUMMARY_CHUNK:
                if item.source_node in row:
                    ext[row[item.source_node], j] = 1.0
            else:
                for i, node in enumerate(nodes):
                    ext[i, j] = node.extent[col[item.id]]
        return ext

    def activations(self, q_vec) -> np.ndarray:
        levels = query_levels(self.hierarchy, q_vec)
        cfg = self.config.routing
        return np.array([
            activation(levels, n, cfg) if n.centroids else 0.0 for n in self.graph.nodes.values()
        ])

    def _cosines(self, q_vec, idx) -> np.ndarray:
        nq = exact_norm(q_vec)
        out = np.zeros(len(idx))
        if nq == 0:
            return out
        for k, i in enumerate(idx):
            if self.norms[i] > 0:
                out[k] = exact_dot(self.vectors[i], q_vec) / (self.norms[i] * nq)
        return out

    def _pool(self, q_vec, survivors, bm25_raw) -> list[int]:
        if self.config.brute_force or len(survivors) <= self.config.pool_size:
            return survivors
        p = self.config.pool_size
        by_bm25 = sorted((i for i in survivors if bm25_raw.get(self.items[i].id, 0) > 0),
                         key=lambda i: (-bm25_raw[self.items[i].id], self.items[i].id))[:p]
        approx = self.vectors[survivors] @ q_vec / np.where(self.norms[survivors] > 0, self.norms[survivors], 1)
        order = np.argsort(-approx, kind="stable")[:p]
        return sorted(set(by_bm25) | {survivors[o] for o in order})

    def search(self, query: str, doc_filter=None, k: int | None = None, q_vec=None) -> list[RetrievalCandidate]:
        k = self.config.initial_k if k is None else k
        if k < 1:
            raise ValueError("k must be at least 1")
        if q_vec is None:
            if self.provider is None:
                raise ValueError("no embedding provider configured for query text")
            q_vec = self.provider.embed_query(query)
        q_vec = np.asarray(q_vec, dtype=float)

        survivors = [i for i, item in enumerate(self.items) if item.matches(doc_filter)]
        if not survivors:
            raise LookupError(f"no chunks match doc filter {doc_filter!r}")

        terms = tokenize(query)
        bm25_raw = {self.items[i].id: self.bm25.score(terms, self.items[i].id) for i in survivors} \
            if self.config.brute_force else self.bm25.scores(terms)
        pool = self._pool(q_vec, survivors, bm25_raw)
        raw = np.array([bm25_raw.get(self.items[i].id, 0.0) for i in pool])
        lo, hi = raw.min(), raw.max()
        if hi > lo:
            norm = (raw - lo) / (hi - lo)
        else:
            norm = np.full(len(raw), 1.0 if hi > 0 else 0.0)
        cos = self._cosines(q_vec, pool)

        mu = self.activations(q_vec)
        active = np.flatnonzero(mu >= self.config.routing.floor)
        if len(active):
            cand = tnorm_array(mu[active][:, None], self.extents[np.ix_(active, pool)])
            fuzzy = cand.max(axis=0)
        else:
            cand = None
            fuzzy = np.zeros(len(pool))

        out = []
        for col, i in enumerate(pool):
            item = self.items[i]
            f = float(fuzzy[col])
            prov = ()
            if f > 0:
                hits = active[cand[:, col] >= f - PROVENANCE_EPS]
                prov = tuple(sorted(self.node_ids[h] for h in hits))
            boost = 1.0
            if item.kind == SUMMARY_CHUNK:
                boost = max(boost, self.config.summary_boost)
            if any(p in self.bridge_nodes for p in prov):
                boost = max(boost, self.config.bridge_boost)
            c = float(cos[col])
            score = combine(self.config.weights, boost, float(norm[col]), c, f)
            out.append(RetrievalCandidate(item.id, item.kind, float(raw[col]), float(norm[col]),
                                          c, f, boost, score, prov, doc_ids=item.doc_ids))
        out.sort(key=lambda r: (-r.final_score, r.chunk_id))
        out = out[:k]
        for rank, r in enumerate(out, 1):
            r.rank = rank
        return out
