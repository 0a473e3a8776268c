"""Cosine kernel, batched similarity matrices, deterministic ranking.

All functions are pure; ties in rankings are broken by ascending item
index (competition style) so degenerate inputs rank reproducibly.
"""

from __future__ import annotations

import numpy as np


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name}: expected a 1-D vector, got shape {v.shape}")
    return v


def cosine(a, b) -> float:
    """Cosine similarity of two nonzero vectors, clamped to [-1, 1]."""
    va = _as_vector(a, "a")
    vb = _as_vector(b, "b")
    if va.shape != vb.shape:
        raise ValueError(f"dim mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for zero vectors")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def sim_matrix(queries, videos) -> np.ndarray:
    """Pairwise cosine matrix; entry (i, j) = cosine(query_i, video_j)."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    v = np.atleast_2d(np.asarray(videos, dtype=np.float64))
    if q.shape[1] != v.shape[1]:
        raise ValueError(f"dim mismatch: queries {q.shape[1]} vs videos {v.shape[1]}")
    qn = np.linalg.norm(q, axis=1)
    vn = np.linalg.norm(v, axis=1)
    if np.any(qn == 0.0) or np.any(vn == 0.0):
        raise ValueError("zero row: cosine is undefined for zero vectors")
    sims = (q / qn[:, None]) @ (v / vn[:, None]).T
    return np.clip(sims, -1.0, 1.0)


def rank_of(scores, target_index: int) -> int:
    """1-based rank of the target among all scores (higher score = better).

    rank = 1 + #{j != t : s_j > s_t} + #{j < t : s_j == s_t}.
    """
    s = _as_vector(scores, "scores")
    if s.size and not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    t = int(target_index)
    if t < 0 or t >= s.shape[0]:
        raise IndexError(f"target index {t} out of range for {s.shape[0]} scores")
    st = s[t]
    return int(1 + np.count_nonzero(s > st) + np.count_nonzero(s[:t] == st))


def full_ranking(scores) -> np.ndarray:
    """Ranks 1..n for every item, same tie rule as :func:`rank_of`."""
    s = _as_vector(scores, "scores")
    if s.size and not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    n = s.shape[0]
    order = np.lexsort((np.arange(n), -s))  # score desc, then index asc
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    return ranks
