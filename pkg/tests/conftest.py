"""Shared helpers for building random test instances and checking gradients."""

import numpy as np

from mqvr import models

GRAD_STEP = 1e-5
GRAD_RTOL = 1e-4
GRAD_ABS_FLOOR = 1e-10


def random_unit_rows(rng, n, m):
    """n random unit vectors; rejection keeps norms well away from zero."""
    rows = rng.standard_normal((n, m))
    norms = np.linalg.norm(rows, axis=1)
    while np.any(norms < 1e-6):
        bad = norms < 1e-6
        rows[bad] = rng.standard_normal((int(bad.sum()), m))
        norms = np.linalg.norm(rows, axis=1)
    return rows / norms[:, None]


def random_params(kind, m, h=4, d_a=3, rng=None, scale=0.5):
    """ModelParams with every tensor random, including the projections."""
    rng = rng or np.random.default_rng(0)
    params = models.init_params(kind, m, h=h, d_a=d_a, seed=0)
    for name in params.tensors():
        shape = params.expected_shape(name)
        setattr(params, name, scale * rng.standard_normal(shape))
    params.validate()
    return params


def params_to_lists(params):
    """Nested-list view of the tensors, for the pure-Python oracles."""
    return {name: arr.tolist() for name, arr in params.tensors().items()}


def numeric_gradients(loss_fn, params, step=GRAD_STEP):
    """Central finite differences of a scalar loss over every tensor entry."""
    grads = {}
    for name, arr in params.tensors().items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + step
            hi = loss_fn(params)
            flat[idx] = keep - step
            lo = loss_fn(params)
            flat[idx] = keep
            gflat[idx] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


def worst_gradient_error(analytic, numeric):
    """Largest per-entry relative error, ignoring entries that are ~0 on both
    sides (relative error is meaningless there)."""
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        scale = np.maximum(np.abs(num), np.abs(ana))
        mask = scale > GRAD_ABS_FLOOR
        if mask.any():
            rel = np.abs(num - ana)[mask] / scale[mask]
            worst = max(worst, float(rel.max()))
    return worst
