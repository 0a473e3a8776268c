"""Contrastive training of the feature-aggregation methods.

Each step draws a batch of videos, samples a query bundle per video,
and pulls every combined bundle feature toward its own video and away
from the rest of the batch with a temperature-scaled cross-entropy over
cosine scores. Optimization is AdamW with linear warmup and cosine
decay. Everything is driven by explicit seeds; a run is a pure function
of (corpus, config).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from . import models
from .methods import TRAINABLE_METHODS, normalize_method
from .store import Corpus

LOSS_DIRECTIONS = ("t2v", "symmetric")
SCHEDULES = ("cosine", "constant")
COMBINATION_MODES = ("off", "mix")


@dataclass
class TrainConfig:
    """Knobs for one training run; defaults follow the reference recipe."""

    method: str
    train_query_count: int = 5
    epochs: int = 30
    batch_size: int = 48
    temperature: float = 0.05
    base_lr: float = 1e-3
    warmup_epochs: int = 5
    schedule: str = "cosine"
    combination_mode: str = "off"
    single_query_prob: float = 0.5
    weight_decay: float = 0.01
    loss_direction: str = "t2v"
    seed: int = 0
    mlp_hidden: int = 128
    attn_dim: int = 64
    tswf_tau: float = 1.0

    def __post_init__(self):
        self.method = normalize_method(self.method)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {', '.join(unknown)}")
        if "method" not in data:
            raise ValueError("training config requires 'method'")
        return cls(**data)

    def validate(self) -> None:
        if self.method not in TRAINABLE_METHODS:
            raise ValueError(f"post-hoc method {self.method!r} is not trainable")
        if self.train_query_count < 1:
            raise ValueError("train_query_count must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2: the loss needs in-batch negatives")
        if not (self.temperature > 0.0):
            raise ValueError("temperature must be positive")
        if not (self.base_lr > 0.0):
            raise ValueError("base_lr must be positive")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.combination_mode not in COMBINATION_MODES:
            raise ValueError(f"combination_mode must be one of {COMBINATION_MODES}")
        if not (0.0 <= self.single_query_prob <= 1.0):
            raise ValueError("single_query_prob must be in [0, 1]")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be >= 0")
        if self.loss_direction not in LOSS_DIRECTIONS:
            raise ValueError(f"loss_direction must be one of {LOSS_DIRECTIONS}")
        if self.mlp_hidden < 1 or self.attn_dim < 1:
            raise ValueError("mlp_hidden and attn_dim must be >= 1")
        if not (self.tswf_tau > 0.0):
            raise ValueError("tswf_tau must be positive")


@dataclass
class TrainLog:
    """Per-epoch mean loss and the learning rate at each epoch's last step."""

    seed: int
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    wall_clock_sec: float = 0.0

    def to_csv(self) -> str:
        lines = ["epoch,loss,lr"]
        for i, (loss, lr) in enumerate(zip(self.losses, self.lrs), start=1):
            lines.append(f"{i},{loss!r},{lr!r}")
        return "\n".join(lines) + "\n"


def sample_bundle(captions: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k caption rows sampled without replacement; with replacement (and a
    warning) when the video has fewer than k captions."""
    n = captions.shape[0]
    if k <= n:
        idx = rng.choice(n, size=k, replace=False)
    else:
        warnings.warn(
            f"requested {k} queries from a video with {n} captions; sampling with replacement",
            stacklevel=2,
        )
        idx = rng.choice(n, size=k, replace=True)
    return captions[idx]


def infonce_loss(scores: np.ndarray, temperature: float, direction: str = "t2v") -> float:
    """Cross entropy of the matched pair against in-batch negatives.

    ``scores[i, j]`` is the similarity of bundle i to video j; the match
    is the diagonal. ``symmetric`` averages the bundle->video and
    video->bundle directions.
    """
    if direction not in LOSS_DIRECTIONS:
        raise ValueError(f"direction must be one of {LOSS_DIRECTIONS}")
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"scores must be square, got shape {S.shape}")
    logits = S / temperature
    loss = _cross_entropy_diag(logits)
    if direction == "symmetric":
        loss = 0.5 * (loss + _cross_entropy_diag(logits.T))
    return loss


def _cross_entropy_diag(logits: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logZ - np.diagonal(shifted)))


def infonce_gradient(scores: np.ndarray, temperature: float, direction: str = "t2v") -> np.ndarray:
    """d(loss)/d(scores); rows softmax minus identity, scaled by 1/(B*tau)."""
    if direction not in LOSS_DIRECTIONS:
        raise ValueError(f"direction must be one of {LOSS_DIRECTIONS}")
    S = np.asarray(scores, dtype=np.float64)
    b = S.shape[0]
    logits = S / temperature
    d = _softmax_rows(logits) - np.eye(b)
    if direction == "symmetric":
        d = 0.5 * (d + (_softmax_rows(logits.T) - np.eye(b)).T)
    return d / (b * temperature)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def lr_at(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Learning rate for a 0-based step: linear warmup, then cosine to zero.

    Warmup covers ``warmup_epochs`` whole epochs, rising so the last
    warmup step sits exactly at ``base_lr``.
    """
    total = config.epochs * steps_per_epoch
    if step < 0 or step >= total:
        raise ValueError(f"step {step} outside [0, {total})")
    if config.schedule == "constant":
        return config.base_lr
    warm = min(config.warmup_epochs, config.epochs) * steps_per_epoch
    if step < warm:
        return config.base_lr * (step + 1) / warm
    progress = (step - warm) / (total - warm)
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; one slot pair per named tensor."""

    def __init__(self, params: models.ModelParams, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.tensors().items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.tensors().items()}

    def step(self, params: models.ModelParams, grads: models.GradientSet, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, arr in params.tensors().items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            arr -= lr * (update + self.weight_decay * arr)


def train(corpus: Corpus, config: TrainConfig) -> tuple:
    """Full training run; returns ``(params, log)``.

    Deterministic for a fixed (corpus, config): parameter init uses
    ``config.seed`` and all data order comes from one generator seeded
    with ``[seed, 1]``.
    """
    config.validate()
    corpus.validate()
    n = corpus.n_videos
    if n < 2:
        raise ValueError("training needs at least 2 videos for in-batch negatives")
    params = models.init_params(
        config.method, corpus.dim, h=config.mlp_hidden, d_a=config.attn_dim, seed=config.seed
    )
    optimizer = AdamW(params, weight_decay=config.weight_decay)
    data_rng = np.random.default_rng([config.seed, 1])
    batch_size = min(config.batch_size, n)
    steps_per_epoch = n // batch_size
    log = TrainLog(seed=config.seed)
    started = time.perf_counter()
    step = 0
    for _ in range(config.epochs):
        order = data_rng.permutation(n)
        epoch_losses = []
        lr = config.base_lr
        for b in range(steps_per_epoch):
            batch = order[b * batch_size : (b + 1) * batch_size]
            bundles = []
            for vi in batch:
                k = config.train_query_count
                if config.combination_mode == "mix" and k > 1:
                    # Bernoulli choice between 1-query and k-query bundles,
                    # drawn per instance so batches mix both regimes.
                    if data_rng.random() < config.single_query_prob:
                        k = 1
                bundles.append(sample_bundle(corpus.captions[vi], k, data_rng))
            videos = corpus.video_embeddings[batch]
            scores, cache = models.scores_forward(
                config.method, bundles, videos, params, tswf_tau=config.tswf_tau
            )
            loss = infonce_loss(scores, config.temperature, config.loss_direction)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at step {step}: {loss}")
            dscores = infonce_gradient(scores, config.temperature, config.loss_direction)
            grads = models.scores_backward(dscores, cache, params)
            lr = lr_at(step, config, steps_per_epoch)
            optimizer.step(params, grads, lr)
            epoch_losses.append(loss)
            step += 1
        log.losses.append(float(np.mean(epoch_losses)))
        log.lrs.append(lr)
    log.wall_clock_sec = time.perf_counter() - started
    return params, log
