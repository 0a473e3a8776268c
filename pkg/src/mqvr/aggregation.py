"""Scoring a multi-query bundle against a set of candidate videos.

Two families:

* score aggregation: combine per-query score vectors (``sa`` averages
  similarities, ``ra`` averages ranks);
* feature aggregation: combine the bundle into a single feature row,
  then score it once (``mf`` plain mean, ``tswf``/``lgwf``/``cgwf``
  weighted means on the probability simplex).

All functions accept raw embeddings. :func:`score_method` optionally
applies trained projection heads to both sides first; ``lgwf``/``cgwf``
need parameters, ``mf``/``tswf`` work with or without.
"""

from __future__ import annotations

import numpy as np

from . import models
from .methods import PARAMETRIC_METHODS, normalize_method
from .similarity import full_ranking, sim_matrix

WEIGHT_SIMPLEX_ATOL = 1e-9


def _as_bundle(bundle) -> np.ndarray:
    B = np.atleast_2d(np.asarray(bundle, dtype=np.float64))
    if B.ndim != 2 or B.shape[0] < 1:
        raise ValueError(f"bundle must be a (k, m) matrix with k >= 1, got shape {B.shape}")
    return B


def score_sa(bundle, videos) -> np.ndarray:
    """Similarity averaging: mean over queries of per-query cosine scores."""
    S = sim_matrix(_as_bundle(bundle), videos)
    return S.mean(axis=0)


def score_ra(bundle, videos) -> np.ndarray:
    """Rank averaging: negative mean of per-query ranks, higher is better.

    Only the ordering of the output is meaningful; the values are not
    similarities.
    """
    S = sim_matrix(_as_bundle(bundle), videos)
    ranks = np.stack([full_ranking(row) for row in S], axis=0)
    return -ranks.mean(axis=0, dtype=np.float64)


def mean_feature(bundle) -> np.ndarray:
    return _as_bundle(bundle).mean(axis=0)


def weighted_feature(bundle, weights) -> np.ndarray:
    """Convex combination of query rows; weights must lie on the simplex."""
    B = _as_bundle(bundle)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (B.shape[0],):
        raise ValueError(f"weights shape {w.shape} does not match bundle of {B.shape[0]} queries")
    if np.any(w < -WEIGHT_SIMPLEX_ATOL):
        raise ValueError("weights must be non-negative")
    if abs(w.sum() - 1.0) > WEIGHT_SIMPLEX_ATOL:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w @ B


def tswf_weights(features, tau: float = 1.0) -> np.ndarray:
    """Training-free weights from pairwise similarity.

    A query similar to many of its peers restates shared content; its
    informativeness ``-sum_{j != i} cos(f_i, f_j)`` is low and it is
    down-weighted by a temperature softmax.
    """
    F = _as_bundle(features)
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    Fhat, _ = models._normalize_rows(F)
    C = Fhat @ Fhat.T
    np.fill_diagonal(C, 0.0)
    return models.softmax(-C.sum(axis=1) / tau)


def lgwf_weights(features, params: models.ModelParams) -> np.ndarray:
    """Learned weights: shared MLP scores each row, softmax over the bundle."""
    F = _as_bundle(features)
    return models.softmax(models.mlp_scores(F, params))


def cgwf_weights(features, params: models.ModelParams) -> np.ndarray:
    """Context-aware learned weights.

    Rows are contextualized with residual self-attention before the MLP,
    so each weight can depend on the whole bundle; the combination
    itself still uses the un-contextualized rows.
    """
    F = _as_bundle(features)
    ctx = models.attention_forward(F, params)
    return models.softmax(models.mlp_scores(ctx, params))


def method_weights(method: str, features, params: models.ModelParams | None = None,
                   tswf_tau: float = 1.0) -> np.ndarray:
    """Bundle weights over already-projected feature rows."""
    method = normalize_method(method)
    F = _as_bundle(features)
    if method == "mf":
        return np.full(F.shape[0], 1.0 / F.shape[0])
    if method == "tswf":
        return tswf_weights(F, tau=tswf_tau)
    if method in PARAMETRIC_METHODS:
        if params is None:
            raise ValueError(f"{method!r} requires trained parameters")
        if method == "lgwf":
            return lgwf_weights(F, params)
        return cgwf_weights(F, params)
    raise ValueError(f"{method!r} does not produce bundle weights")


def score_method(method: str, bundle, videos, params: models.ModelParams | None = None,
                 tswf_tau: float = 1.0) -> np.ndarray:
    """Score one bundle against every video row; higher is better.

    With ``params`` the projection heads are applied to both sides, and
    weight heads (if any) run on the projected queries. ``sa``/``ra``
    never take parameters.
    """
    method = normalize_method(method)
    B = _as_bundle(bundle)
    V = np.atleast_2d(np.asarray(videos, dtype=np.float64))
    if method in ("sa", "ra"):
        if params is not None:
            raise ValueError(f"{method!r} is post-hoc and takes no parameters")
        return score_sa(B, V) if method == "sa" else score_ra(B, V)
    if method in PARAMETRIC_METHODS and params is None:
        raise ValueError(f"{method!r} requires trained parameters")
    if params is not None:
        if params.kind != method:
            raise ValueError(f"parameters are for {params.kind!r}, not {method!r}")
        B = models.project(B, params.query_proj_w, params.query_proj_b)
        V = models.project(V, params.video_proj_w, params.video_proj_b)
    if method == "mf":
        z = mean_feature(B)
    else:
        z = weighted_feature(B, method_weights(method, B, params=params, tswf_tau=tswf_tau))
    return sim_matrix(z[None, :], V)[0]
