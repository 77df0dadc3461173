"""Residual-quantization k-means, fuzzy c-means memberships and occupancy.

Each level runs Lloyd's k-means on the residuals left by the previous level:

    r0 = x
    q_l = argmin_c ||r_l - c||^2
    r_{l+1} = r_l - c_l[q_l]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_LEVEL_SIZES = (96, 24, 12)
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6
DEFAULT_FUZZINESS = 2.0

WELL_DISTRIBUTED = "well-distributed"
MODERATE = "moderate"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class Codebook:
    level: int
    centroids: np.ndarray
    requested_size: int

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def shrunk(self) -> bool:
        return self.size < self.requested_size


@dataclass(frozen=True)
class CodebookHierarchy:
    """Fitted codebooks plus training assignments and residuals.

    ``level_inputs[l]`` holds the residual vectors that level ``l`` was fitted
    on (``level_inputs[0]`` is the raw embedding matrix).
    """

    codebooks: tuple
    assignments: np.ndarray
    level_inputs: tuple
    final_residuals: np.ndarray

    @property
    def n_levels(self) -> int:
        return len(self.codebooks)

    @property
    def dim(self) -> int:
        return self.final_residuals.shape[1]

    @property
    def shrinkage(self) -> dict:
        """Levels whose effective codebook is smaller than requested."""
        return {
            cb.level: (cb.requested_size, cb.size) for cb in self.codebooks if cb.shrunk
        }

    def reconstruction(self) -> np.ndarray:
        """Sum of assigned centroids per training point."""
        total = np.zeros_like(self.final_residuals)
        for cb in self.codebooks:
            total = total + cb.centroids[self.assignments[:, cb.level]]
        return total


@dataclass(frozen=True)
class MembershipMatrix:
    values: np.ndarray
    level: int
    fuzziness_m: float

    def column(self, k: int) -> np.ndarray:
        return self.values[:, k]


@dataclass(frozen=True)
class LevelOccupancy:
    level: int
    cluster_count: int
    occupancy: float
    label: str


@dataclass(frozen=True)
class OccupancyReport:
    per_level: tuple = field(default_factory=tuple)

    def label(self, level: int) -> str:
        for entry in self.per_level:
            if entry.level == level:
                return entry.label
        raise KeyError(level)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # one centroid at a time: bounded memory, fixed reduction order
    out = np.empty((points.shape[0], centroids.shape[0]))
    for j, c in enumerate(centroids):
        diff = points - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_distances(points, points[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # remaining points coincide with chosen centres; take the first unused
            remaining = [i for i in range(n) if i not in chosen]
            idx = remaining[0]
        else:
            idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_distances(points, points[[idx]])[:, 0])
    return points[chosen].copy()


def _nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = _sq_distances(points, centroids)
    # argmin returns the first minimum, i.e. the lowest codeword index on ties
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(len(points)), labels]


def _lloyd(points, k, rng, max_iters, tol):
    centroids = _kmeans_pp(points, k, rng)
    labels, d2 = _nearest(points, centroids)
    for _ in range(max_iters):
        labels = labels.copy()
        counts = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            # re-seed with the point farthest from its centre, taking it from a
            # cluster that keeps at least one member
            order = np.argsort(-d2, kind="stable")
            for idx in order:
                if counts[labels[idx]] > 1:
                    counts[labels[idx]] -= 1
                    labels[idx] = empty
                    counts[empty] = 1
                    d2[idx] = 0.0
                    break
        new = np.zeros_like(centroids)
        np.add.at(new, labels, points)
        new /= counts[:, None]
        shift = float(np.mean(np.sqrt(((new - centroids) ** 2).sum(axis=1))))
        centroids = new
        labels, d2 = _nearest(points, centroids)
        if shift < tol:
            break
    return centroids, labels


def fit_rq_kmeans(
    embeddings,
    level_sizes=DEFAULT_LEVEL_SIZES,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> CodebookHierarchy:
    """Fit a residual-quantization hierarchy.

    A level asked for more codewords than there are distinct residual points
    is shrunk to the number of distinct points; the shrinkage is visible via
    :attr:`CodebookHierarchy.shrinkage`.

    Args:
        embeddings: ``(n, d)`` array of finite values.
        level_sizes: requested codebook size per level.
        seed: seed for k-means++ initialisation.
        max_iters: Lloyd iteration cap per level.
        tol: stop when the mean centroid displacement falls below this.
    """
    x = np.array(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("embeddings must be a non-empty 2-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("embeddings contain non-finite values")
    level_sizes = [int(k) for k in level_sizes]
    if not level_sizes or any(k < 1 for k in level_sizes):
        raise ValueError("level_sizes must be a non-empty list of positive integers")

    rng = np.random.default_rng(seed)
    residual = x
    codebooks, inputs, assignments = [], [], []
    for level, requested in enumerate(level_sizes):
        inputs.append(residual)
        n_distinct = np.unique(residual, axis=0).shape[0]
        k = min(requested, n_distinct)
        if k < requested:
            logger.warning(
                "level %d: only %d distinct residuals, shrinking codebook from %d",
                level, n_distinct, requested,
            )
        centroids, labels = _lloyd(residual, k, rng, max_iters, tol)
        centroids.setflags(write=False)
        codebooks.append(Codebook(level, centroids, requested))
        assignments.append(labels)
        residual = residual - centroids[labels]

    return CodebookHierarchy(
        codebooks=tuple(codebooks),
        assignments=np.stack(assignments, axis=1),
        level_inputs=tuple(inputs),
        final_residuals=residual,
    )


def _exact_sq_dist(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    return math.fsum(diff * diff)


def assign(hierarchy: CodebookHierarchy, x) -> list[int]:
    """Greedy nearest-codeword path of ``x`` through the hierarchy."""
    return [idx for idx, _ in _walk(hierarchy, x)]


def residual_path(hierarchy: CodebookHierarchy, x) -> list[np.ndarray]:
    """Residual vector entering each level when ``x`` is quantized."""
    return [r for _, r in _walk(hierarchy, x)]


def _walk(hierarchy, x):
    r = np.asarray(x, dtype=float)
    if r.shape != (hierarchy.dim,):
        raise ValueError(f"expected a vector of dimension {hierarchy.dim}, got {r.shape}")
    out = []
    for cb in hierarchy.codebooks:
        dists = [_exact_sq_dist(r, c) for c in cb.centroids]
        idx = min(range(len(dists)), key=lambda i: (dists[i], i))
        out.append((idx, r))
        r = r - cb.centroids[idx]
    return out


def fcm_memberships(points, centroids, fuzziness_m: float = DEFAULT_FUZZINESS, level: int = 0) -> MembershipMatrix:
    """Fuzzy c-means memberships of ``points`` with respect to fixed centroids.

    ``u[g, k] = 1 / sum_j (d(g,k) / d(g,j)) ** (2 / (m - 1))``, evaluated as a
    softmax over ``-(2 / (m - 1)) * log d`` so it stays finite for ``m`` close
    to 1. A point at zero distance from a centroid gets a one-hot row at the
    lowest such centroid.
    """
    if not fuzziness_m > 1:
        raise ValueError("fuzziness exponent must be > 1")
    p = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.atleast_2d(np.asarray(centroids, dtype=float))
    if c.shape[0] == 0:
        raise ValueError("at least one centroid is required")
    d = np.sqrt(_sq_distances(p, c))
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite distances")

    u = np.zeros_like(d)
    zero = d == 0
    crisp_rows = zero.any(axis=1)
    if crisp_rows.any():
        u[crisp_rows, zero[crisp_rows].argmax(axis=1)] = 1.0
    soft = ~crisp_rows
    if soft.any():
        logits = -(2.0 / (fuzziness_m - 1.0)) * np.log(d[soft])
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        u[soft] = w / w.sum(axis=1, keepdims=True)
    return MembershipMatrix(u, level, float(fuzziness_m))


def level_memberships(hierarchy: CodebookHierarchy, fuzziness_m: float = DEFAULT_FUZZINESS) -> list[MembershipMatrix]:
    """Per-level memberships computed on that level's residual inputs."""
    return [
        fcm_memberships(hierarchy.level_inputs[cb.level], cb.centroids, fuzziness_m, cb.level)
        for cb in hierarchy.codebooks
    ]


def _label(occupancy: float) -> str:
    if occupancy >= 0.8:
        return WELL_DISTRIBUTED
    if occupancy >= 0.2:
        return MODERATE
    return DEGENERATE


def occupancy(hierarchy: CodebookHierarchy) -> OccupancyReport:
    """Normalised entropy of assignment counts per level.

    ``H(p) / log(|C_l|)`` with ``|C_l|`` the requested codebook size. A level
    with a single requested codeword has no spread to measure and reports 0.
    """
    rows = []
    for cb in hierarchy.codebooks:
        counts = np.bincount(hierarchy.assignments[:, cb.level], minlength=cb.size)
        p = counts[counts > 0] / counts.sum()
        if cb.requested_size > 1:
            h = float(-(p * np.log(p)).sum())
            occ = min(1.0, max(0.0, h / math.log(cb.requested_size)))
        else:
            occ = 0.0
        rows.append(LevelOccupancy(cb.level, cb.requested_size, occ, _label(occ)))
    return OccupancyReport(tuple(rows))
