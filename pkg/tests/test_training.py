"""Contrastive loss, schedule, optimizer, and the training loop."""

import math

import numpy as np
import pytest

from mqvr import models, synthetic, training
from oracles import o_infonce


def tiny_corpus(seed=0, n=10, dim=6):
    cfg = synthetic.SyntheticConfig(
        n_videos=n, dim=dim, captions_per_video=6, n_clusters=3, seed=seed
    )
    return synthetic.generate(cfg)


# ---------------------------------------------------------------------------
# loss


def test_infonce_hand_value():
    """2x2 identity logits at tau=1: both rows give log(1 + e^-1)."""
    scores = np.array([[1.0, 0.0], [0.0, 1.0]])
    want = math.log(1.0 + math.exp(-1.0))
    assert training.infonce_loss(scores, 1.0) == pytest.approx(want, abs=1e-12)
    assert training.infonce_loss(scores, 1.0, "symmetric") == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.31326168751822286, abs=1e-15)


def test_infonce_single_pair_is_zero():
    assert training.infonce_loss(np.array([[0.37]]), 0.05) == 0.0


def test_infonce_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = int(rng.integers(1, 7))
        scores = rng.standard_normal((b, b))
        tau = float(rng.uniform(0.05, 1.0))
        for direction in ("t2v", "symmetric"):
            got = training.infonce_loss(scores, tau, direction)
            want = o_infonce(scores.tolist(), tau, direction)
            assert got == pytest.approx(want, abs=1e-10)


def test_infonce_temperature_extremes_stay_finite():
    scores = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert math.isfinite(training.infonce_loss(scores, 1e-3))
    assert training.infonce_loss(scores, 1e-3) == pytest.approx(0.0, abs=1e-12)


def test_infonce_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        b = int(rng.integers(2, 5))
        scores = rng.standard_normal((b, b))
        tau = float(rng.uniform(0.1, 1.0))
        for direction in ("t2v", "symmetric"):
            grad = training.infonce_gradient(scores, tau, direction)
            step = 1e-6
            for i in range(b):
                for j in range(b):
                    bumped = scores.copy()
                    bumped[i, j] += step
                    hi = training.infonce_loss(bumped, tau, direction)
                    bumped[i, j] -= 2 * step
                    lo = training.infonce_loss(bumped, tau, direction)
                    num = (hi - lo) / (2 * step)
                    assert grad[i, j] == pytest.approx(num, abs=1e-6)


def test_infonce_rejects_non_square():
    with pytest.raises(ValueError):
        training.infonce_loss(np.zeros((2, 3)), 0.05)


# ---------------------------------------------------------------------------
# schedule


def cfg(**kw):
    base = dict(method="mf", epochs=7, warmup_epochs=1, base_lr=1e-3)
    base.update(kw)
    return training.TrainConfig(**base)


def test_lr_warmup_rises_linearly_to_base():
    c = cfg(epochs=10, warmup_epochs=2, base_lr=0.5)
    spe = 4
    warm = 2 * spe
    lrs = [training.lr_at(s, c, spe) for s in range(warm)]
    assert lrs[0] == pytest.approx(0.5 / warm)
    assert lrs[-1] == pytest.approx(0.5)
    assert all(b > a for a, b in zip(lrs, lrs[1:]))


def test_lr_cosine_midpoint_is_half_base():
    # steps/epoch 2, 7 epochs, 1 warmup: decay spans steps 2..14, midpoint 8
    c = cfg()
    assert training.lr_at(8, c, 2) == pytest.approx(5e-4, abs=1e-12)


def test_lr_decays_toward_zero():
    c = cfg()
    total = 14
    last = training.lr_at(total - 1, c, 2)
    assert 0.0 < last < 0.1 * c.base_lr
    lrs = [training.lr_at(s, c, 2) for s in range(2, total)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_lr_constant_schedule():
    c = cfg(schedule="constant")
    assert {training.lr_at(s, c, 2) for s in range(14)} == {c.base_lr}


def test_lr_rejects_out_of_range_steps():
    c = cfg()
    with pytest.raises(ValueError):
        training.lr_at(-1, c, 2)
    with pytest.raises(ValueError):
        training.lr_at(14, c, 2)


# ---------------------------------------------------------------------------
# optimizer


def test_adamw_first_step_matches_reference_formula():
    params = models.init_params("mf", 3, seed=0)
    opt = training.AdamW(params, weight_decay=0.01)
    grads = models.zero_gradients(params)
    grads["query_proj_w"] += 0.5
    before = params.query_proj_w.copy()
    opt.step(params, grads, lr=0.1)

    g = 0.5
    m_hat = ((1 - 0.9) * g) / (1 - 0.9)
    v_hat = ((1 - 0.999) * g * g) / (1 - 0.999)
    want = before - 0.1 * (m_hat / (math.sqrt(v_hat) + 1e-8) + 0.01 * before)
    assert np.allclose(params.query_proj_w, want, atol=1e-15)


def test_adamw_decay_is_decoupled():
    """With zero gradients the update reduces to pure shrinkage."""
    params = models.init_params("mf", 3, seed=0)
    opt = training.AdamW(params, weight_decay=0.1)
    before = params.query_proj_w.copy()
    opt.step(params, models.zero_gradients(params), lr=0.2)
    assert np.allclose(params.query_proj_w, before * (1 - 0.2 * 0.1), atol=1e-15)


# ---------------------------------------------------------------------------
# bundle sampling


def test_sample_bundle_without_replacement():
    rng = np.random.default_rng(2)
    captions = np.arange(12.0).reshape(6, 2)
    for _ in range(20):
        rows = training.sample_bundle(captions, 4, rng)
        assert rows.shape == (4, 2)
        assert len({tuple(r) for r in rows.tolist()}) == 4


def test_sample_bundle_falls_back_with_replacement():
    rng = np.random.default_rng(3)
    captions = np.arange(4.0).reshape(2, 2)
    with pytest.warns(UserWarning):
        rows = training.sample_bundle(captions, 5, rng)
    assert rows.shape == (5, 2)


# ---------------------------------------------------------------------------
# the loop


def quick_config(method="mf", **kw):
    base = dict(method=method, epochs=3, batch_size=5, warmup_epochs=1,
                train_query_count=3, seed=4)
    base.update(kw)
    return training.TrainConfig(**base)


def test_train_is_deterministic():
    corpus = tiny_corpus()
    p1, log1 = training.train(corpus, quick_config())
    p2, log2 = training.train(corpus, quick_config())
    assert log1.losses == log2.losses
    for name, arr in p1.tensors().items():
        assert np.array_equal(arr, p2.tensors()[name]), name


def test_train_reduces_loss():
    corpus = tiny_corpus(n=20)
    _, log = training.train(corpus, quick_config(epochs=8))
    assert log.losses[-1] < log.losses[0]
    assert all(math.isfinite(v) for v in log.losses)


def test_train_moves_every_owned_tensor():
    corpus = tiny_corpus(n=12)
    for method in ("tswf", "lgwf", "cgwf"):
        params, _ = training.train(corpus, quick_config(method=method, epochs=2))
        fresh = models.init_params(method, corpus.dim, h=128, d_a=64, seed=4)
        for name, arr in params.tensors().items():
            assert not np.array_equal(arr, fresh.tensors()[name]), (method, name)


def test_train_mix_mode_runs():
    corpus = tiny_corpus(n=12)
    config = quick_config(combination_mode="mix", single_query_prob=0.5, epochs=2)
    _, log = training.train(corpus, config)
    assert len(log.losses) == 2


def test_train_log_csv_shape():
    corpus = tiny_corpus(n=8)
    _, log = training.train(corpus, quick_config(epochs=2))
    lines = log.to_csv().strip().split("\n")
    assert lines[0] == "epoch,loss,lr"
    assert len(lines) == 3
    assert lines[1].startswith("1,")


def test_train_rejects_bad_setups():
    corpus = tiny_corpus(n=6)
    with pytest.raises(ValueError):
        training.train(corpus, quick_config(method="sa"))
    with pytest.raises(ValueError):
        training.TrainConfig(method="mf", batch_size=1).validate()
    one = tiny_corpus(n=1)
    with pytest.raises(ValueError):
        training.train(one, quick_config())


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError):
        training.TrainConfig.from_dict({"method": "mf", "momentum": 0.9})
    with pytest.raises(ValueError):
        training.TrainConfig.from_dict({"epochs": 3})
