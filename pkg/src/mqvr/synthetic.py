"""Synthetic retrieval corpora with controllable caption quality.

Videos sit near cluster centroids on the unit sphere. Each caption is
either informative (a noisy copy of its video, so it identifies the
video) or generic (a noisy copy of the cluster centroid, so it only
identifies the cluster and confuses retrieval within it). The generic
fraction and the three noise scales control task difficulty; quality
labels travel with the corpus for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .store import GENERIC, INFORMATIVE, Corpus

_MAX_RESAMPLES = 100


@dataclass
class SyntheticConfig:
    n_videos: int = 200
    dim: int = 32
    captions_per_video: object = (5, 20)
    n_clusters: int = 20
    p_generic: float = 0.4
    sigma_video: float = 0.3
    sigma_informative: float = 0.4
    sigma_generic: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.captions_per_video, (list, tuple)):
            self.captions_per_video = tuple(int(v) for v in self.captions_per_video)
        else:
            self.captions_per_video = int(self.captions_per_video)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown corpus config keys: {', '.join(unknown)}")
        return cls(**data)

    def validate(self) -> None:
        if self.n_videos < 1:
            raise ValueError("n_videos must be >= 1")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        counts = self.captions_per_video
        if isinstance(counts, tuple):
            if len(counts) != 2 or counts[0] < 1 or counts[0] > counts[1]:
                raise ValueError("captions_per_video range must be (lo, hi) with 1 <= lo <= hi")
        elif counts < 1:
            raise ValueError("captions_per_video must be >= 1")
        if not (0.0 <= self.p_generic <= 1.0):
            raise ValueError("p_generic must be in [0, 1]")
        for name in ("sigma_video", "sigma_informative", "sigma_generic"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        counts = self.captions_per_video
        return {
            "n_videos": self.n_videos,
            "dim": self.dim,
            "captions_per_video": list(counts) if isinstance(counts, tuple) else counts,
            "n_clusters": self.n_clusters,
            "p_generic": self.p_generic,
            "sigma_video": self.sigma_video,
            "sigma_informative": self.sigma_informative,
            "sigma_generic": self.sigma_generic,
            "seed": self.seed,
        }


def default_config(seed: int = 0) -> SyntheticConfig:
    return SyntheticConfig(seed=seed)


def _unit_noisy(base: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """normalize(base + sigma * gaussian), redrawing the noise on a zero norm."""
    for _ in range(_MAX_RESAMPLES):
        v = base + sigma * rng.standard_normal(base.shape[0])
        norm = np.linalg.norm(v)
        if norm > 0.0:
            return v / norm
    raise RuntimeError("exhausted resample attempts for a zero-norm draw")


def _caption_count(config: SyntheticConfig, rng: np.random.Generator) -> int:
    counts = config.captions_per_video
    if isinstance(counts, tuple):
        return int(rng.integers(counts[0], counts[1] + 1))
    return counts


def generate(config: SyntheticConfig | None = None) -> Corpus:
    """Build a corpus from the config; a pure function of its fields."""
    return _generate(config or default_config(), stream=0)


def _generate(config: SyntheticConfig, stream: int) -> Corpus:
    config.validate()
    rng = np.random.default_rng([config.seed, stream])
    centroids = np.stack(
        [_unit_noisy(np.zeros(config.dim), 1.0, rng) for _ in range(config.n_clusters)]
    )
    videos = np.empty((config.n_videos, config.dim))
    captions, labels = [], []
    for i in range(config.n_videos):
        centroid = centroids[i % config.n_clusters]
        videos[i] = _unit_noisy(centroid, config.sigma_video, rng)
        k = _caption_count(config, rng)
        rows = np.empty((k, config.dim))
        row_labels = []
        for j in range(k):
            if rng.random() < config.p_generic:
                rows[j] = _unit_noisy(centroid, config.sigma_generic, rng)
                row_labels.append(GENERIC)
            else:
                rows[j] = _unit_noisy(videos[i], config.sigma_informative, rng)
                row_labels.append(INFORMATIVE)
        captions.append(rows)
        labels.append(row_labels)
    corpus = Corpus(
        video_ids=[f"v{i:06d}" for i in range(config.n_videos)],
        video_embeddings=videos,
        captions=captions,
        quality_labels=labels,
        creation_seed=config.seed,
        provenance={"generator": "synthetic", "config": config.to_dict()},
    )
    corpus.validate()
    return corpus


def generate_pair(config: SyntheticConfig | None = None, shift: dict | None = None) -> tuple:
    """Source and target corpora for transfer experiments.

    The source equals ``generate(config)``; the target draws from a
    disjoint substream of the same seed, so it is a fresh corpus even
    with no ``shift``. ``shift`` overrides config fields for the target
    (e.g. a different generic fraction).
    """
    config = config or default_config()
    source = _generate(config, stream=0)
    target_config = replace(config, **(shift or {}))
    target = _generate(target_config, stream=1)
    return source, target
