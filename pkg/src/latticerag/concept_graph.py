"""Finite fuzzy concept graph: cluster seeds, soft join/meet nodes, co-occurrence edges."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .fuzzy_algebra import FuzzySet
from .rq_kmeans import DEGENERATE, CodebookHierarchy, MembershipMatrix, OccupancyReport

logger = logging.getLogger(__name__)

SEED, JOIN, MEET, SUMMARY = "seed", "join", "meet", "summary"
NODE_KINDS = (SEED, JOIN, MEET, SUMMARY)
LATTICE, COOCCURRENCE = "lattice", "cooccurrence"


@dataclass(frozen=True)
class GraphConfig:
    max_joins: int = 64
    max_meets: int = 64
    min_meet_mass: float = 1.0
    join_band: tuple = (0.3, 0.9)
    window: int = 5
    theta: float = 3


@dataclass(eq=False)
class ConceptNode:
    """A graph node.

    ``extent`` is the membership of every corpus chunk (graph-wide chunk
    order); ``centroids`` maps a hierarchy level to a vector in that level's
    residual space.
    """

    id: str
    kind: str
    level: int
    extent: np.ndarray
    centroids: dict = field(default_factory=dict)
    parents: tuple = ()
    mass: float = 0.0

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        self.extent = np.asarray(self.extent, dtype=float)
        if self.kind in (JOIN, MEET) and len(self.parents) != 2:
            raise ValueError("derived nodes need exactly two parents")

    @property
    def is_bridge(self) -> bool:
        return self.kind == JOIN

    @property
    def is_derived(self) -> bool:
        return self.kind in (JOIN, MEET)

    def extent_set(self, chunk_ids) -> FuzzySet:
        return FuzzySet.from_array(tuple(chunk_ids), self.extent)


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    kind: str
    weight: float


@dataclass
class ConceptGraph:
    chunk_ids: tuple
    nodes: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)

    def add_node(self, node: ConceptNode) -> None:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id!r}")
        if node.extent.shape != (len(self.chunk_ids),):
            raise ValueError("node extent does not cover the chunk universe")
        self.nodes[node.id] = node

    def add_edge(self, edge: Edge) -> None:
        if edge.source == edge.target:
            raise ValueError("self-loops are not allowed")
        if edge.source not in self.nodes or edge.target not in self.nodes:
            raise ValueError("edge endpoint missing from graph")
        self.edges.append(edge)

    def nodes_of_kind(self, kind: str) -> list[ConceptNode]:
        return [n for n in self.nodes.values() if n.kind == kind]

    def edges_of_kind(self, kind: str) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]

    def census(self) -> dict:
        out = {f"nodes.{k}": len(self.nodes_of_kind(k)) for k in (SEED, JOIN, MEET)}
        out["nodes.total"] = len(self.nodes)
        out["edges.lattice"] = len(self.edges_of_kind(LATTICE))
        out["edges.cooccurrence"] = len(self.edges_of_kind(COOCCURRENCE))
        out["edges.total"] = len(self.edges)
        return out

    def problems(self) -> list[str]:
        """Well-formedness violations; empty when the graph is sound."""
        out = []
        for e in self.edges:
            if e.source not in self.nodes or e.target not in self.nodes:
                out.append(f"edge {e.source}->{e.target} has a missing endpoint")
            if e.kind not in (LATTICE, COOCCURRENCE):
                out.append(f"edge {e.source}->{e.target} has unknown kind {e.kind!r}")
        lattice = {}
        for e in self.edges_of_kind(LATTICE):
            lattice.setdefault(e.source, []).append(e.target)
        for n in self.nodes.values():
            targets = sorted(lattice.get(n.id, []))
            if n.is_derived and targets != sorted(n.parents):
                out.append(f"derived node {n.id} has lattice edges to {targets}, parents {list(n.parents)}")
            if not n.is_derived and targets:
                out.append(f"non-derived node {n.id} has outgoing lattice edges")
        return out

    def to_dict(self) -> dict:
        return {
            "chunk_ids": list(self.chunk_ids),
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind,
                    "level": n.level,
                    "parents": list(n.parents),
                    "mass": n.mass,
                    "centroids": {str(l): v.tolist() for l, v in sorted(n.centroids.items())},
                    "extent": n.extent.tolist(),
                }
                for n in self.nodes.values()
            ],
            "edges": [[e.source, e.target, e.kind, e.weight] for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConceptGraph":
        graph = cls(tuple(data["chunk_ids"]))
        for n in data["nodes"]:
            graph.add_node(ConceptNode(
                id=n["id"], kind=n["kind"], level=n["level"],
                extent=np.array(n["extent"], dtype=float),
                centroids={int(l): np.array(v, dtype=float) for l, v in n["centroids"].items()},
                parents=tuple(n["parents"]), mass=n["mass"],
            ))
        for source, target, kind, weight in data["edges"]:
            graph.add_edge(Edge(source, target, kind, weight))
        return graph


def retained_levels(report: OccupancyReport) -> list[int]:
    """Level 0 plus every non-degenerate level."""
    return [e.level for e in report.per_level if e.level == 0 or e.label != DEGENERATE]


def build_seed_nodes(hierarchy: CodebookHierarchy, memberships, levels=None) -> list[ConceptNode]:
    """One seed per non-empty cluster at each requested level.

    Args:
        hierarchy: fitted codebooks.
        memberships: per-level :class:`MembershipMatrix` list, indexed by level.
        levels: levels to build seeds for; defaults to all.
    """
    by_level = {m.level: m for m in memberships}
    levels = range(hierarchy.n_levels) if levels is None else levels
    seeds = []
    for level in levels:
        if level not in by_level:
            raise ValueError(f"no memberships for level {level}")
        cb = hierarchy.codebooks[level]
        counts = np.bincount(hierarchy.assignments[:, level], minlength=cb.size)
        if not counts.any():
            raise ValueError(f"level {level} has no populated clusters")
        m: MembershipMatrix = by_level[level]
        for k in np.flatnonzero(counts):
            seeds.append(ConceptNode(
                id=f"L{level}.c{k}", kind=SEED, level=level,
                extent=m.column(k).copy(),
                centroids={level: cb.centroids[k].copy()},
            ))
    return seeds


def _weighted_centroid(extent: np.ndarray, level_inputs: np.ndarray | None, level: int) -> dict:
    if level_inputs is None:
        return {}
    total = extent.sum()
    if total <= 0:
        return {}
    return {level: (extent @ level_inputs) / total}


def _check_pair(a: ConceptNode, b: ConceptNode) -> None:
    if a is b or a.id == b.id:
        raise ValueError("derived node needs two distinct parents")
    if a.kind != SEED or b.kind != SEED:
        raise ValueError("derived nodes are built from seed nodes")
    if a.level != b.level:
        raise ValueError("parents must sit at the same level")


def _ordered(a, b):
    return (a, b) if a.id <= b.id else (b, a)


def derive_join_node(a: ConceptNode, b: ConceptNode, level_inputs=None) -> ConceptNode:
    """Soft join: pointwise max of the parent extents (a bridge node).

    ``level_inputs`` is the matrix of level inputs for all chunks; when given,
    the node gets an extent-weighted centroid at the parents' level.
    """
    _check_pair(a, b)
    a, b = _ordered(a, b)
    extent = np.maximum(a.extent, b.extent)
    return ConceptNode(
        id=f"join({a.id},{b.id})", kind=JOIN, level=a.level, extent=extent,
        centroids=_weighted_centroid(extent, level_inputs, a.level),
        parents=(a.id, b.id), mass=float(extent.sum()),
    )


def derive_meet_node(a: ConceptNode, b: ConceptNode, level_inputs=None) -> ConceptNode:
    """Soft meet: pointwise min of the parent extents; ``mass`` is its sum."""
    _check_pair(a, b)
    a, b = _ordered(a, b)
    extent = np.minimum(a.extent, b.extent)
    return ConceptNode(
        id=f"meet({a.id},{b.id})", kind=MEET, level=a.level, extent=extent,
        centroids=_weighted_centroid(extent, level_inputs, a.level),
        parents=(a.id, b.id), mass=float(extent.sum()),
    )


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def select_derived_pairs(seeds, max_joins: int = 64, max_meets: int = 64,
                         min_meet_mass: float = 1.0, band=(0.3, 0.9)) -> list:
    """Choose which seed pairs get derived nodes.

    Meets: pairs whose soft-meet mass reaches ``min_meet_mass``, best
    ``max_meets`` by mass. Joins: pairs whose centroid cosine lies inside
    ``band``, best ``max_joins`` by cosine. Only same-level pairs qualify.

    Returns:
        ``[((id_a, id_b), kind), ...]`` with meets first, each group ordered by
        score descending then id pair ascending.
    """
    seeds = sorted(seeds, key=lambda s: s.id)
    lo, hi = band
    meets, joins = [], []
    for a, b in combinations(seeds, 2):
        if a.level != b.level:
            continue
        pair = (a.id, b.id)
        mass = float(np.minimum(a.extent, b.extent).sum())
        if mass >= min_meet_mass:
            meets.append((-mass, pair))
        cos = _cosine(a.centroids[a.level], b.centroids[b.level])
        if lo <= cos <= hi:
            joins.append((-cos, pair))
    meets.sort()
    joins.sort()
    return ([(p, MEET) for _, p in meets[:max_meets]]
            + [(p, JOIN) for _, p in joins[:max_joins]])


def _neighbour_windows(embeddings: np.ndarray, window: int) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1)
    safe = np.where(norms == 0, 1.0, norms)
    unit = embeddings / safe[:, None]
    sims = unit @ unit.T
    n = len(embeddings)
    np.fill_diagonal(sims, -np.inf)
    k = min(window - 1, n - 1)
    rows = []
    for i in range(n):
        order = np.argsort(-sims[i], kind="stable")[:k]
        rows.append(np.concatenate(([i], order)))
    return np.array(rows, dtype=int)


def build_cooccurrence_edges(graph: ConceptGraph, embeddings, window: int = 5,
                             theta: float = 3) -> ConceptGraph:
    """Add lateral edges between seeds whose chunks co-appear in retrieval windows.

    Each chunk's window is itself plus its ``window - 1`` nearest cosine
    neighbours. Within a level, every chunk is attributed to its dominant seed
    (highest extent, lowest id on ties); each window adds one count to every
    pair of distinct seeds it contains. Pairs counted at least ``theta`` times
    get an edge weighted by the count.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    embeddings = np.asarray(embeddings, dtype=float)
    windows = _neighbour_windows(embeddings, window)
    seeds = graph.nodes_of_kind(SEED)
    for level in sorted({s.level for s in seeds}):
        level_seeds = sorted((s for s in seeds if s.level == level), key=lambda s: s.id)
        if len(level_seeds) < 2:
            continue
        extents = np.stack([s.extent for s in level_seeds], axis=1)
        dominant = extents.argmax(axis=1)
        counts: dict = {}
        for row in windows:
            present = sorted(set(dominant[row].tolist()))
            for i, j in combinations(present, 2):
                counts[(i, j)] = counts.get((i, j), 0) + 1
        for (i, j), c in sorted(counts.items()):
            if c >= theta:
                graph.add_edge(Edge(level_seeds[i].id, level_seeds[j].id, COOCCURRENCE, float(c)))
    return graph


def build_concept_graph(chunk_ids, hierarchy: CodebookHierarchy, memberships,
                        report: OccupancyReport, config: GraphConfig = GraphConfig()) -> ConceptGraph:
    """Seeds, derived nodes with lattice edges, then co-occurrence edges."""
    graph = ConceptGraph(tuple(chunk_ids))
    seeds = build_seed_nodes(hierarchy, memberships, retained_levels(report))
    for s in seeds:
        graph.add_node(s)

    by_id = {s.id: s for s in seeds}
    pairs = select_derived_pairs(seeds, config.max_joins, config.max_meets,
                                 config.min_meet_mass, tuple(config.join_band))
    for (a_id, b_id), kind in pairs:
        a, b = by_id[a_id], by_id[b_id]
        inputs = hierarchy.level_inputs[a.level]
        node = (derive_join_node if kind == JOIN else derive_meet_node)(a, b, inputs)
        if kind == MEET and node.mass <= 0:
            continue
        graph.add_node(node)
        for parent in node.parents:
            graph.add_edge(Edge(node.id, parent, LATTICE, 1.0))

    build_cooccurrence_edges(graph, hierarchy.level_inputs[0], config.window, config.theta)
    logger.info("concept graph: %s", graph.census())
    return graph
