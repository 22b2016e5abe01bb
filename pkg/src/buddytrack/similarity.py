"""Reciprocal-rank patch similarity: the MBS metric and its BBS special case.

Two patch sets are compared through pairs that are mutually among each
other's ``cap_c`` nearest neighbors; each such pair scores ``exp(-r*s/sigma1)``
where ``r`` and ``s`` are the 1-based mutual ranks.  Averaging over pairs
gives MBS; restricting to mutual 1-nearest neighbors with unit score gives
the BBS baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import PatchSet

__all__ = [
    "SimilarityConfig",
    "RankPairList",
    "pairwise_distances",
    "reciprocal_rank_pairs",
    "mbp",
    "mbs",
    "bbs",
    "batch_score",
]


@dataclass(frozen=True)
class SimilarityConfig:
    """Kernel width and neighbor-rank cap for the similarity metric."""

    sigma1: float = 0.5
    cap_c: int = 4

    def __post_init__(self):
        if not (self.sigma1 > 0):
            raise ValueError("sigma1 must be positive")
        if self.cap_c < 1:
            raise ValueError("cap_c must be >= 1")


@dataclass(frozen=True)
class RankPairList:
    """Mutual-neighbor pairs ``(i, j)`` with their 1-based ranks ``(r, s)``.

    ``r`` is the rank of ``q_j`` among ``p_i``'s neighbors in Q, ``s`` the
    rank of ``p_i`` among ``q_j``'s neighbors in P; both are <= the cap.
    """

    i: np.ndarray
    j: np.ndarray
    r: np.ndarray
    s: np.ndarray

    @property
    def count(self) -> int:
        return len(self.i)

    def as_tuples(self) -> list[tuple[int, int, int, int]]:
        return [
            (int(a), int(b), int(c), int(d))
            for a, b, c, d in zip(self.i, self.j, self.r, self.s)
        ]


def _as_matrix(points) -> np.ndarray:
    if isinstance(points, PatchSet):
        return points.vectors
    m = np.asarray(points, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    return m


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between the rows of ``a`` and ``b``."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
    sq -= 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def _top_c_indices(dists: np.ndarray, c: int) -> np.ndarray:
    """Per row, the ``c`` nearest column indices ordered by (distance, index).

    Equal distances break toward the lower column index.  Small matrices use
    successive masked argmin passes (argmin's first-occurrence rule is the
    tie break); larger ones use a single partition pass per row, with a full
    per-row sort only where the selection boundary is tied.
    """
    n, m = dists.shape
    c = min(c, m)
    if m <= 128 or c >= m:
        d = np.array(dists, dtype=float, copy=True)
        out = np.empty((n, c), dtype=np.intp)
        rows = np.arange(n)
        for k in range(c):
            idx = np.argmin(d, axis=1)
            out[:, k] = idx
            if k + 1 < c:
                d[rows, idx] = np.inf
        return out
    part = np.argpartition(dists, c - 1, axis=1)[:, :c]
    rows = np.arange(n)[:, None]
    sel = dists[rows, part]
    thr = sel.max(axis=1)
    within = np.count_nonzero(dists <= thr[:, None], axis=1)
    out = np.empty((n, c), dtype=np.intp)
    safe = within == c
    if np.any(safe):
        sub = part[safe]
        dsub = dists[np.arange(n)[safe][:, None], sub]
        order = np.lexsort((sub, dsub), axis=1)
        out[safe] = np.take_along_axis(sub, order, axis=1)
    for row in np.nonzero(~safe)[0]:
        order = np.lexsort((np.arange(m), dists[row]))
        out[row] = order[:c]
    return out


def _squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
    sq -= 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def reciprocal_rank_pairs(p, q, cfg: SimilarityConfig = SimilarityConfig()) -> RankPairList:
    """All pairs mutually within each other's ``cap_c`` nearest neighbors.

    Distances are Euclidean on the patch vectors; rank ties break toward the
    lower patch index so the output is deterministic.
    """
    pm, qm = _as_matrix(p), _as_matrix(q)
    if pm.shape[1] != qm.shape[1]:
        raise ValueError(
            f"dimension mismatch: {pm.shape[1]} vs {qm.shape[1]}"
        )
    # ranks are monotone in the squared distance, so the sqrt is skipped
    sq = _squared_distances(pm, qm)
    c = cfg.cap_c
    n, m = sq.shape
    top_pq = _top_c_indices(sq, c)                          # (n, c) q indices
    top_qp = _top_c_indices(np.ascontiguousarray(sq.T), c)  # (m, c) p indices
    # mutual test through the candidates' own short neighbor lists; avoids a
    # full (m, n) rank table
    neighbors = top_qp[top_pq]                              # (n, c, c)
    hits = neighbors == np.arange(n)[:, None, None]
    mutual = hits.any(axis=2)
    s_vals = hits.argmax(axis=2) + 1
    i_idx, pos = np.nonzero(mutual)
    return RankPairList(
        i=i_idx,
        j=top_pq[mutual],
        r=pos + 1,
        s=s_vals[mutual],
    )


def mbp(r, s, cfg: SimilarityConfig = SimilarityConfig()):
    """Pair score ``exp(-r*s/sigma1)``, zero once either rank exceeds the cap."""
    r = np.asarray(r)
    s = np.asarray(s)
    score = np.where(
        (r <= cfg.cap_c) & (s <= cfg.cap_c),
        np.exp(-(r.astype(float) * s) / cfg.sigma1),
        0.0,
    )
    return float(score) if score.ndim == 0 else score


def mbs(p, q, cfg: SimilarityConfig = SimilarityConfig()) -> float:
    """Average mutual-buddy score between two patch sets."""
    pm, qm = _as_matrix(p), _as_matrix(q)
    pairs = reciprocal_rank_pairs(pm, qm, cfg)
    if pairs.count == 0:
        return 0.0
    total = float(np.sum(np.exp(-(pairs.r.astype(float) * pairs.s) / cfg.sigma1)))
    return total / min(pm.shape[0], qm.shape[0])


def bbs(p, q) -> float:
    """Fraction of mutual 1-nearest-neighbor pairs (the rank-1 special case)."""
    pm, qm = _as_matrix(p), _as_matrix(q)
    pairs = reciprocal_rank_pairs(pm, qm, SimilarityConfig(sigma1=1.0, cap_c=1))
    return pairs.count / min(pm.shape[0], qm.shape[0])


def batch_score(candidates, template, cfg: SimilarityConfig = SimilarityConfig()):
    """Score every candidate against the template; ties pick the lowest index.

    Returns ``(scores, argmax_index)``.
    """
    if len(candidates) == 0:
        raise ValueError("candidate list must be non-empty")
    scores = np.array([mbs(c, template, cfg) for c in candidates])
    return scores, int(np.argmax(scores))
