"""Retrieval evaluation with repeated query sampling.

Captions are plentiful per video, so a single draw of query bundles is
noisy; the protocol repeats the whole evaluation (default 100 times)
with fresh bundles and averages the metrics. Each (repeat, video) pair
gets its own random substream keyed by the video id, so results do not
depend on corpus ordering and repeats can run on worker threads without
changing any value.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import aggregation, models
from .methods import METHODS, PARAMETRIC_METHODS, POST_HOC_METHODS, normalize_method
from .similarity import rank_of, sim_matrix
from .store import Corpus

DEFAULT_RECALL_KS = (1, 5, 10)
AUC_CHECKPOINTS = (3, 5, 10)


@dataclass
class EvalConfig:
    method: str
    n_queries: int
    repeats: int = 100
    seed: int = 0
    recall_ks: tuple = DEFAULT_RECALL_KS
    tswf_tau: float = 1.0

    def __post_init__(self):
        self.method = normalize_method(self.method)
        self.recall_ks = tuple(int(k) for k in self.recall_ks)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not self.recall_ks or any(k < 1 for k in self.recall_ks):
            raise ValueError("recall_ks must be positive cutoffs")
        if not (self.tswf_tau > 0.0):
            raise ValueError("tswf_tau must be positive")


@dataclass
class EvalReport:
    """Mean metrics over repeats, plus the per-repeat breakdown."""

    config: EvalConfig
    recall: dict
    mdr: float
    mnr: float
    per_repeat: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.config.method,
            "n_queries": self.config.n_queries,
            "repeats": self.config.repeats,
            "seed": self.config.seed,
            "recall": {f"r@{k}": v for k, v in self.recall.items()},
            "mdr": self.mdr,
            "mnr": self.mnr,
            "per_repeat": [
                {
                    "recall": {f"r@{k}": v for k, v in rep["recall"].items()},
                    "mdr": rep["mdr"],
                    "mnr": rep["mnr"],
                }
                for rep in self.per_repeat
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        ks = self.config.recall_ks
        header = "repeat," + ",".join(f"r@{k}" for k in ks) + ",mdr,mnr"
        lines = [header]
        for i, rep in enumerate(self.per_repeat, start=1):
            cells = [str(i)]
            cells += [repr(rep["recall"][k]) for k in ks]
            cells += [repr(rep["mdr"]), repr(rep["mnr"])]
            lines.append(",".join(cells))
        mean_cells = ["mean"] + [repr(self.recall[k]) for k in ks]
        mean_cells += [repr(self.mdr), repr(self.mnr)]
        lines.append(",".join(mean_cells))
        return "\n".join(lines) + "\n"


def metrics_from_ranks(ranks, recall_ks: Sequence[int] = DEFAULT_RECALL_KS) -> dict:
    """Recall@K, median rank and mean rank from 1-based ranks."""
    r = np.asarray(ranks, dtype=np.int64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("ranks must be a non-empty 1-D array")
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return {
        "recall": {int(k): float(np.mean(r <= k)) for k in recall_ks},
        "mdr": float(np.median(r)),
        "mnr": float(np.mean(r)),
    }


def _bundle_rng(seed: int, repeat: int, video_id: str) -> np.random.Generator:
    # Key the substream by the id's digest, not the row index, so a
    # reordered corpus reproduces identical bundles per video.
    digest = hashlib.sha256(video_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, len(digest), 4)]
    return np.random.default_rng([seed, repeat, *words])


def _draw_bundle(captions: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = captions.shape[0]
    if k <= n:
        idx = rng.choice(n, size=k, replace=False)
    else:
        idx = rng.choice(n, size=k, replace=True)
    return captions[idx]


def _prepare_sides(corpus: Corpus, method: str, params) -> np.ndarray:
    """Validate the method/params pairing and project the video side once."""
    if method in POST_HOC_METHODS:
        if params is not None:
            raise ValueError(f"{method!r} is post-hoc and takes no parameters")
        return corpus.video_embeddings
    if method in PARAMETRIC_METHODS and params is None:
        raise ValueError(f"{method!r} requires trained parameters")
    if params is None:
        return corpus.video_embeddings
    if params.kind != method:
        raise ValueError(f"parameters are for {params.kind!r}, not {method!r}")
    return models.project(corpus.video_embeddings, params.video_proj_w, params.video_proj_b)


def _bundle_scores(method: str, bundle: np.ndarray, videos_proj: np.ndarray,
                   params, tswf_tau: float) -> np.ndarray:
    """Scores for one raw bundle against the already-projected video side."""
    if method == "sa":
        return aggregation.score_sa(bundle, videos_proj)
    if method == "ra":
        return aggregation.score_ra(bundle, videos_proj)
    F = bundle
    if params is not None:
        F = models.project(F, params.query_proj_w, params.query_proj_b)
    w = aggregation.method_weights(method, F, params=params, tswf_tau=tswf_tau)
    z = w @ F
    return sim_matrix(z[None, :], videos_proj)[0]


def _repeat_ranks(corpus: Corpus, config: EvalConfig, params, videos_proj: np.ndarray,
                  repeat: int) -> np.ndarray:
    ranks = np.empty(corpus.n_videos, dtype=np.int64)
    for t, vid in enumerate(corpus.video_ids):
        rng = _bundle_rng(config.seed, repeat, vid)
        bundle = _draw_bundle(corpus.captions[t], config.n_queries, rng)
        scores = _bundle_scores(config.method, bundle, videos_proj, params, config.tswf_tau)
        ranks[t] = rank_of(scores, t)
    return ranks


def evaluate(corpus: Corpus, config: EvalConfig, params: models.ModelParams | None = None,
             threads: int = 1) -> EvalReport:
    """Run the repeated protocol; identical output for any ``threads``."""
    config.validate()
    corpus.validate()
    if threads < 1:
        raise ValueError("threads must be >= 1")
    videos_proj = _prepare_sides(corpus, config.method, params)

    def one(repeat: int) -> dict:
        ranks = _repeat_ranks(corpus, config, params, videos_proj, repeat)
        return metrics_from_ranks(ranks, config.recall_ks)

    if threads == 1:
        per_repeat = [one(r) for r in range(config.repeats)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_repeat = list(pool.map(one, range(config.repeats)))

    # fsum in fixed repeat order keeps the reduction exact and thread-count
    # independent
    recall = {
        k: math.fsum(rep["recall"][k] for rep in per_repeat) / config.repeats
        for k in config.recall_ks
    }
    mdr = math.fsum(rep["mdr"] for rep in per_repeat) / config.repeats
    mnr = math.fsum(rep["mnr"] for rep in per_repeat) / config.repeats
    return EvalReport(config=config, recall=recall, mdr=mdr, mnr=mnr, per_repeat=per_repeat)


# ---------------------------------------------------------------------------
# area under the query-count curve


def auc(curve) -> float:
    """Trapezoid area under a unit-spaced curve, normalized by its span.

    Equals the plain mean of interior-weighted endpoints; a constant
    curve has AUC equal to that constant.
    """
    c = np.asarray(curve, dtype=np.float64)
    if c.ndim != 1 or c.size < 2:
        raise ValueError("auc needs a 1-D curve with at least 2 points")
    if not np.isfinite(c).all():
        raise ValueError("auc: non-finite curve values")
    area = math.fsum(0.5 * (c[i] + c[i + 1]) for i in range(c.size - 1))
    return area / (c.size - 1)


@dataclass
class SweepReport:
    """Metrics as a function of query count, with prefix AUC checkpoints."""

    method: str
    seed: int
    repeats: int
    n_values: list
    recall_curves: dict
    mdr_curve: list
    mnr_curve: list
    auc_at: dict

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "repeats": self.repeats,
            "n_values": self.n_values,
            "recall_curves": {f"r@{k}": v for k, v in self.recall_curves.items()},
            "mdr_curve": self.mdr_curve,
            "mnr_curve": self.mnr_curve,
            "auc_at": {str(n): v for n, v in self.auc_at.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        ks = sorted(self.recall_curves)
        header = "n_queries," + ",".join(f"r@{k}" for k in ks) + ",mdr,mnr"
        lines = [header]
        for i, n in enumerate(self.n_values):
            cells = [str(n)]
            cells += [repr(self.recall_curves[k][i]) for k in ks]
            cells += [repr(self.mdr_curve[i]), repr(self.mnr_curve[i])]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def sweep(corpus: Corpus, method: str, n_max: int, repeats: int = 100, seed: int = 0,
          params: models.ModelParams | None = None, recall_ks: Sequence[int] = DEFAULT_RECALL_KS,
          tswf_tau: float = 1.0, threads: int = 1) -> SweepReport:
    """Evaluate at every query count 1..n_max and report the curves.

    ``auc_at`` holds the area under the prefix of the recall@1 curve at
    the standard checkpoints (3, 5, 10) and at ``n_max``, whichever fall
    inside the sweep.
    """
    method = normalize_method(method)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n_values = list(range(1, n_max + 1))
    recall_curves = {int(k): [] for k in recall_ks}
    mdr_curve, mnr_curve = [], []
    for n in n_values:
        config = EvalConfig(method=method, n_queries=n, repeats=repeats, seed=seed,
                            recall_ks=tuple(recall_ks), tswf_tau=tswf_tau)
        report = evaluate(corpus, config, params=params, threads=threads)
        for k in recall_curves:
            recall_curves[k].append(report.recall[k])
        mdr_curve.append(report.mdr)
        mnr_curve.append(report.mnr)
    first_k = sorted(recall_curves)[0]
    head_curve = recall_curves.get(1, recall_curves[first_k])
    auc_at = {}
    for checkpoint in sorted(set(AUC_CHECKPOINTS) | {n_max}):
        if 2 <= checkpoint <= n_max:
            auc_at[checkpoint] = auc(head_curve[:checkpoint])
    return SweepReport(method=method, seed=seed, repeats=repeats, n_values=n_values,
                       recall_curves=recall_curves, mdr_curve=mdr_curve, mnr_curve=mnr_curve,
                       auc_at=auc_at)


# ---------------------------------------------------------------------------
# weight diagnostics


@dataclass
class WeightTable:
    """Mean combination weight per within-bundle quality rank.

    Quality rank 1 is the query whose single-query retrieval ranks the
    target best (ties broken by position in the bundle).
    """

    method: str
    n_queries: int
    repeats: int
    seed: int
    mean_weight: list

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_queries": self.n_queries,
            "repeats": self.repeats,
            "seed": self.seed,
            "mean_weight": self.mean_weight,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        lines = ["quality_rank,mean_weight"]
        for i, w in enumerate(self.mean_weight, start=1):
            lines.append(f"{i},{w!r}")
        return "\n".join(lines) + "\n"


def inspect_weights(corpus: Corpus, method: str, params: models.ModelParams | None = None,
                    n_queries: int = 5, repeats: int = 100, seed: int = 0,
                    tswf_tau: float = 1.0) -> WeightTable:
    """Average the bundle weights after sorting each bundle by query quality.

    Draws the same bundles as :func:`evaluate` for the same seed. Only
    the weighted methods are meaningful here.
    """
    method = normalize_method(method)
    if method not in ("tswf", "lgwf", "cgwf"):
        raise ValueError(f"{method!r} does not produce bundle weights")
    config = EvalConfig(method=method, n_queries=n_queries, repeats=repeats, seed=seed,
                        tswf_tau=tswf_tau)
    config.validate()
    corpus.validate()
    videos_proj = _prepare_sides(corpus, method, params)
    sums = np.zeros(n_queries)
    count = 0
    for repeat in range(repeats):
        for t, vid in enumerate(corpus.video_ids):
            rng = _bundle_rng(seed, repeat, vid)
            bundle = _draw_bundle(corpus.captions[t], n_queries, rng)
            F = bundle
            if params is not None:
                F = models.project(F, params.query_proj_w, params.query_proj_b)
            w = aggregation.method_weights(method, F, params=params, tswf_tau=tswf_tau)
            single_scores = sim_matrix(F, videos_proj)
            single_ranks = [rank_of(row, t) for row in single_scores]
            order = sorted(range(n_queries), key=lambda i: (single_ranks[i], i))
            sums += w[order]
            count += 1
    return WeightTable(method=method, n_queries=n_queries, repeats=repeats, seed=seed,
                       mean_weight=[float(v) for v in sums / count])
