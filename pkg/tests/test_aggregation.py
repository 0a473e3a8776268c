"""Bundle scoring: post-hoc combiners, feature combiners, weight heads."""

import numpy as np
import pytest

from mqvr import aggregation, models
from mqvr.methods import METHODS
from conftest import params_to_lists, random_params, random_unit_rows
from oracles import o_score_method, o_tswf_weights


def random_instance(rng, unit=False):
    n = int(rng.integers(2, 11))
    k = int(rng.integers(1, 6))
    m = int(rng.integers(2, 9))
    if unit:
        return random_unit_rows(rng, k, m), random_unit_rows(rng, n, m)
    return rng.standard_normal((k, m)), rng.standard_normal((n, m))


def params_for(method, m, rng):
    if method in ("sa", "ra"):
        return None
    return random_params(method, m, h=4, d_a=3, rng=rng)


def test_all_methods_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(40):
        bundle, videos = random_instance(rng)
        for method in METHODS:
            params = params_for(method, bundle.shape[1], rng)
            got = aggregation.score_method(method, bundle, videos, params=params)
            want = o_score_method(
                method, bundle.tolist(), videos.tolist(),
                params=params_to_lists(params) if params else None,
            )
            assert np.max(np.abs(got - np.array(want))) < 1e-9, method


def test_mf_and_tswf_accept_missing_params():
    rng = np.random.default_rng(1)
    bundle, videos = random_instance(rng)
    for method in ("mf", "tswf"):
        got = aggregation.score_method(method, bundle, videos)
        want = o_score_method(method, bundle.tolist(), videos.tolist())
        assert np.max(np.abs(got - np.array(want))) < 1e-9


def test_score_ra_values_are_negated_mean_ranks():
    bundle = np.array([[1.0, 0.0], [0.0, 1.0]])
    videos = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    # query 1 ranks: v0=1, v1=2, v2=3; query 2 ranks: v1=1, v0=2 (tie with v2
    # broken by index), v2=3
    assert aggregation.score_ra(bundle, videos).tolist() == [-1.5, -1.5, -3.0]


def test_tswf_weight_hand_value():
    """Two identical queries and one orthogonal one: softmax(-1, -1, 0)."""
    bundle = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    w = aggregation.tswf_weights(bundle, tau=1.0)
    e = np.exp(-1.0)
    want = np.array([e, e, 1.0]) / (2.0 * e + 1.0)
    assert np.allclose(w, want, atol=1e-15)
    assert w[2] > w[0]


def test_tswf_temperature_sharpens_weights():
    rng = np.random.default_rng(2)
    bundle = random_unit_rows(rng, 4, 6)
    mild = aggregation.tswf_weights(bundle, tau=5.0)
    sharp = aggregation.tswf_weights(bundle, tau=0.1)
    assert sharp.max() > mild.max()
    assert np.allclose(aggregation.tswf_weights(bundle), o_tswf_weights(bundle.tolist()),
                       atol=1e-12)


def test_weight_heads_land_on_simplex():
    rng = np.random.default_rng(3)
    for _ in range(100):
        k = int(rng.integers(1, 6))
        m = int(rng.integers(2, 9))
        F = rng.standard_normal((k, m))
        for method in ("tswf", "lgwf", "cgwf"):
            params = params_for(method, m, rng)
            w = aggregation.method_weights(method, F, params=params)
            assert w.shape == (k,)
            assert np.all(w >= 0.0)
            assert abs(w.sum() - 1.0) < 1e-9


def test_weighted_feature_validates_simplex():
    bundle = np.eye(3)
    aggregation.weighted_feature(bundle, [0.2, 0.3, 0.5])
    with pytest.raises(ValueError):
        aggregation.weighted_feature(bundle, [0.5, 0.5])
    with pytest.raises(ValueError):
        aggregation.weighted_feature(bundle, [0.7, 0.7, -0.4])
    with pytest.raises(ValueError):
        aggregation.weighted_feature(bundle, [0.5, 0.4, 0.2])


def test_uniform_weights_reproduce_mean_feature():
    rng = np.random.default_rng(4)
    for _ in range(20):
        bundle, videos = random_instance(rng)
        k = bundle.shape[0]
        z = aggregation.weighted_feature(bundle, np.full(k, 1.0 / k))
        assert np.allclose(z, aggregation.mean_feature(bundle), atol=1e-12)


def test_dispatch_rejects_bad_pairings():
    rng = np.random.default_rng(5)
    bundle, videos = random_instance(rng)
    m = bundle.shape[1]
    with pytest.raises(ValueError):
        aggregation.score_method("sa", bundle, videos, params=random_params("mf", m))
    with pytest.raises(ValueError):
        aggregation.score_method("lgwf", bundle, videos)
    with pytest.raises(ValueError):
        aggregation.score_method("cgwf", bundle, videos, params=random_params("lgwf", m))
    with pytest.raises(ValueError):
        aggregation.score_method("nope", bundle, videos)


# ---------------------------------------------------------------------------
# invariances


def test_query_permutation_leaves_scores_unchanged():
    rng = np.random.default_rng(6)
    for _ in range(50):
        bundle, videos = random_instance(rng)
        perm = rng.permutation(bundle.shape[0])
        for method in METHODS:
            params = params_for(method, bundle.shape[1], rng)
            a = aggregation.score_method(method, bundle, videos, params=params)
            b = aggregation.score_method(method, bundle[perm], videos, params=params)
            assert np.max(np.abs(a - b)) < 1e-12, method


def test_video_permutation_permutes_scores():
    rng = np.random.default_rng(7)
    for _ in range(50):
        bundle, videos = random_instance(rng)
        perm = rng.permutation(videos.shape[0])
        for method in METHODS:
            params = params_for(method, bundle.shape[1], rng)
            a = aggregation.score_method(method, bundle, videos, params=params)
            b = aggregation.score_method(method, bundle, videos[perm], params=params)
            assert np.max(np.abs(a[perm] - b)) < 1e-12, method


def test_weights_permute_with_the_bundle():
    rng = np.random.default_rng(8)
    for _ in range(30):
        k = int(rng.integers(2, 6))
        m = int(rng.integers(2, 9))
        F = rng.standard_normal((k, m))
        perm = rng.permutation(k)
        for method in ("tswf", "lgwf", "cgwf"):
            params = params_for(method, m, rng)
            w = aggregation.method_weights(method, F, params=params)
            wp = aggregation.method_weights(method, F[perm], params=params)
            assert np.max(np.abs(w[perm] - wp)) < 1e-12, method


def test_positive_scaling_of_videos_is_invisible():
    rng = np.random.default_rng(9)
    for _ in range(30):
        bundle, videos = random_instance(rng)
        scales = np.abs(rng.standard_normal(videos.shape[0])) + 0.1
        for method in METHODS:
            params = params_for(method, bundle.shape[1], rng)
            if params is not None:
                continue  # projections add a bias, so raw-side scaling matters
            a = aggregation.score_method(method, bundle, videos, params=params)
            b = aggregation.score_method(method, bundle, videos * scales[:, None],
                                         params=params)
            assert np.max(np.abs(a - b)) < 1e-12, method


def test_common_query_scaling_is_invisible_to_cosine_combiners():
    rng = np.random.default_rng(10)
    for _ in range(30):
        bundle, videos = random_instance(rng)
        c = float(np.abs(rng.standard_normal())) + 0.1
        for method in ("sa", "ra", "mf", "tswf"):
            a = aggregation.score_method(method, bundle, videos)
            b = aggregation.score_method(method, c * bundle, videos)
            assert np.max(np.abs(a - b)) < 1e-12, method


def test_per_query_scaling_is_invisible_to_score_aggregators():
    rng = np.random.default_rng(11)
    for _ in range(30):
        bundle, videos = random_instance(rng)
        scales = np.abs(rng.standard_normal(bundle.shape[0])) + 0.1
        for method in ("sa", "ra"):
            a = aggregation.score_method(method, bundle, videos)
            b = aggregation.score_method(method, bundle * scales[:, None], videos)
            assert np.max(np.abs(a - b)) < 1e-12, method


# ---------------------------------------------------------------------------
# collapse identities


def test_single_query_collapses_to_plain_cosine_ranking():
    rng = np.random.default_rng(12)
    from mqvr.similarity import full_ranking, sim_matrix

    for _ in range(50):
        _, videos = random_instance(rng)
        q = rng.standard_normal((1, videos.shape[1]))
        base = sim_matrix(q, videos)[0]
        for method in METHODS:
            params = params_for(method, videos.shape[1], rng)
            if params is not None:
                # random projections change the geometry; identity-initialized
                # ones must not
                params = models.init_params(method, videos.shape[1], h=4, d_a=3, seed=0)
            s = aggregation.score_method(method, q, videos, params=params)
            assert np.array_equal(full_ranking(s), full_ranking(base)), method


def test_fresh_parametric_heads_match_mean_feature():
    """Zero-initialized scalar heads emit uniform weights, so every weighted
    combiner starts exactly at the plain mean."""
    rng = np.random.default_rng(13)
    for _ in range(20):
        bundle, videos = random_instance(rng)
        want = aggregation.score_method("mf", bundle, videos)
        for method in ("lgwf", "cgwf"):
            params = models.init_params(method, bundle.shape[1], h=4, d_a=3, seed=1)
            got = aggregation.score_method(method, bundle, videos, params=params)
            assert np.max(np.abs(got - want)) < 1e-12, method


def test_mf_and_sa_agree_on_unit_embeddings():
    rng = np.random.default_rng(14)
    from mqvr.similarity import full_ranking

    for _ in range(100):
        bundle, videos = random_instance(rng, unit=True)
        sa = aggregation.score_method("sa", bundle, videos)
        mf = aggregation.score_method("mf", bundle, videos)
        assert np.array_equal(np.argsort(-sa, kind="stable"),
                              np.argsort(-mf, kind="stable"))
        assert np.array_equal(full_ranking(sa), full_ranking(mf))
