"""Trainable parameters and the hand-written forward/backward engine.

The trainable pieces are linear projection heads for the query and video
sides (identity-initialized, standing in for encoder fine-tuning), a
one-hidden-layer relu MLP that maps a feature row to a scalar weight
logit, and a single-head residual attention block that contextualizes a
bundle before the MLP (no positional encoding, no layer norm).

Everything uses a row-vector convention: feature rows are
right-multiplied, ``out = x @ W + b``. All math is float64. Backward
passes are exact analytic gradients of a scalar loss, entered through
the upstream gradient at the cosine score matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import store
from .methods import TRAINABLE_METHODS, normalize_method

PROJECTION_TENSORS = ("query_proj_w", "query_proj_b", "video_proj_w", "video_proj_b")
MLP_TENSORS = ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")
ATTENTION_TENSORS = ("attn_wq", "attn_wk", "attn_wv", "attn_wo")

#: gradient container: one array per parameter tensor, same shapes
GradientSet = dict


def tensor_names_for(kind: str) -> tuple[str, ...]:
    kind = normalize_method(kind)
    if kind not in TRAINABLE_METHODS:
        raise ValueError(f"post-hoc method {kind!r} has no parameters")
    names = PROJECTION_TENSORS
    if kind in ("lgwf", "cgwf"):
        names = names + MLP_TENSORS
    if kind == "cgwf":
        names = names + ATTENTION_TENSORS
    return names


@dataclass
class ModelParams:
    """Parameter tensors for one method (see :func:`tensor_names_for`).

    Shapes: projections (m, m) with (m,) biases; MLP (m, h), (h,), (h,),
    scalar; attention maps (m, d_a) for q/k/v and (d_a, m) out.
    """

    kind: str
    m: int
    h: int = 128
    d_a: int = 64
    seed: int | None = None
    query_proj_w: np.ndarray | None = None
    query_proj_b: np.ndarray | None = None
    video_proj_w: np.ndarray | None = None
    video_proj_b: np.ndarray | None = None
    mlp_w1: np.ndarray | None = None
    mlp_b1: np.ndarray | None = None
    mlp_w2: np.ndarray | None = None
    mlp_b2: np.ndarray | None = None
    attn_wq: np.ndarray | None = None
    attn_wk: np.ndarray | None = None
    attn_wv: np.ndarray | None = None
    attn_wo: np.ndarray | None = None

    def __post_init__(self):
        self.kind = normalize_method(self.kind)

    def tensors(self) -> dict[str, np.ndarray]:
        """Name -> array for every tensor this kind owns, in a fixed order."""
        out = {}
        for name in tensor_names_for(self.kind):
            arr = getattr(self, name)
            if arr is None:
                raise ValueError(f"params for {self.kind!r} missing tensor {name}")
            out[name] = arr
        return out

    def expected_shape(self, name: str) -> tuple[int, ...]:
        m, h, d_a = self.m, self.h, self.d_a
        return {
            "query_proj_w": (m, m),
            "query_proj_b": (m,),
            "video_proj_w": (m, m),
            "video_proj_b": (m,),
            "mlp_w1": (m, h),
            "mlp_b1": (h,),
            "mlp_w2": (h,),
            "mlp_b2": (),
            "attn_wq": (m, d_a),
            "attn_wk": (m, d_a),
            "attn_wv": (m, d_a),
            "attn_wo": (d_a, m),
        }[name]

    def validate(self) -> None:
        for name, arr in self.tensors().items():
            want = self.expected_shape(name)
            if arr.shape != want:
                raise ValueError(f"{name}: shape {arr.shape}, expected {want}")
            if arr.size and not np.isfinite(arr).all():
                raise ValueError(f"{name}: non-finite values")

    def copy(self) -> "ModelParams":
        kwargs = {}
        for f in fields(self):
            value = getattr(self, f.name)
            kwargs[f.name] = value.copy() if isinstance(value, np.ndarray) else value
        return ModelParams(**kwargs)


def init_params(kind: str, m: int, h: int = 128, d_a: int = 64, seed: int = 0) -> ModelParams:
    """Deterministic initialization.

    Projections start at the identity so a fresh model scores exactly like
    the raw embeddings. MLP/attention weights are uniform in +-1/sqrt(fan_in);
    the final MLP layer is zeroed so generated weights start uniform.
    """
    kind = normalize_method(kind)
    if kind not in TRAINABLE_METHODS:
        raise ValueError(f"post-hoc method {kind!r} has no parameters to initialize")
    rng = np.random.default_rng(seed)
    params = ModelParams(
        kind=kind,
        m=m,
        h=h,
        d_a=d_a,
        seed=seed,
        query_proj_w=np.eye(m),
        query_proj_b=np.zeros(m),
        video_proj_w=np.eye(m),
        video_proj_b=np.zeros(m),
    )
    bound_m = 1.0 / np.sqrt(m)
    if kind in ("lgwf", "cgwf"):
        params.mlp_w1 = rng.uniform(-bound_m, bound_m, size=(m, h))
        params.mlp_b1 = rng.uniform(-bound_m, bound_m, size=h)
        params.mlp_w2 = np.zeros(h)
        params.mlp_b2 = np.zeros(())
    if kind == "cgwf":
        bound_d = 1.0 / np.sqrt(d_a)
        params.attn_wq = rng.uniform(-bound_m, bound_m, size=(m, d_a))
        params.attn_wk = rng.uniform(-bound_m, bound_m, size=(m, d_a))
        params.attn_wv = rng.uniform(-bound_m, bound_m, size=(m, d_a))
        params.attn_wo = rng.uniform(-bound_d, bound_d, size=(d_a, m))
    params.validate()
    return params


def zero_gradients(params: ModelParams) -> GradientSet:
    return {name: np.zeros_like(arr) for name, arr in params.tensors().items()}


# ---------------------------------------------------------------------------
# forward primitives


def project(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def softmax(x) -> np.ndarray:
    """Numerically stable softmax of a 1-D array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"softmax expects a 1-D array, got shape {v.shape}")
    e = np.exp(v - v.max())
    return e / e.sum()


def mlp_forward(x, params: ModelParams) -> float:
    """Scalar head: w2 . relu(x @ w1 + b1) + b2 for a single feature row."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != params.m:
        raise ValueError(f"mlp_forward expects shape ({params.m},), got {v.shape}")
    s, _ = _mlp_rows(v[None, :], params)
    return float(s[0])


def mlp_scores(X, params: ModelParams) -> np.ndarray:
    """MLP scalar per row of X (the shared-head, per-query application)."""
    s, _ = _mlp_rows(np.atleast_2d(np.asarray(X, dtype=np.float64)), params)
    return s


def attention_forward(X, params: ModelParams) -> np.ndarray:
    """Single-head residual attention over bundle rows (k, m) -> (k, m)."""
    out, _ = _attention_rows(np.atleast_2d(np.asarray(X, dtype=np.float64)), params)
    return out


def _mlp_rows(X: np.ndarray, params: ModelParams):
    if params.mlp_w1 is None:
        raise ValueError(f"params for {params.kind!r} carry no MLP head")
    if X.shape[1] != params.mlp_w1.shape[0]:
        raise ValueError(f"mlp input dim {X.shape[1]} != {params.mlp_w1.shape[0]}")
    U = X @ params.mlp_w1 + params.mlp_b1
    R = np.maximum(U, 0.0)  # relu; subgradient at 0 is taken as 0
    s = R @ params.mlp_w2 + params.mlp_b2
    return s, (X, U, R)


def _mlp_rows_backward(ds: np.ndarray, cache, params: ModelParams, grads: GradientSet) -> np.ndarray:
    X, U, R = cache
    grads["mlp_w2"] += R.T @ ds
    grads["mlp_b2"] += ds.sum()
    dR = np.outer(ds, params.mlp_w2)
    dU = dR * (U > 0.0)
    grads["mlp_w1"] += X.T @ dU
    grads["mlp_b1"] += dU.sum(axis=0)
    return dU @ params.mlp_w1.T


def _attention_rows(X: np.ndarray, params: ModelParams):
    if params.attn_wq is None:
        raise ValueError(f"params for {params.kind!r} carry no attention block")
    if X.shape[1] != params.attn_wq.shape[0]:
        raise ValueError(f"attention input dim {X.shape[1]} != {params.attn_wq.shape[0]}")
    scale = 1.0 / np.sqrt(params.d_a)
    Q = X @ params.attn_wq
    K = X @ params.attn_wk
    V = X @ params.attn_wv
    E = (Q @ K.T) * scale
    A = np.exp(E - E.max(axis=1, keepdims=True))
    A /= A.sum(axis=1, keepdims=True)
    H = A @ V
    out = X + H @ params.attn_wo  # residual
    return out, (X, Q, K, V, A, H, scale)


def _attention_rows_backward(dOut: np.ndarray, cache, params: ModelParams, grads: GradientSet) -> np.ndarray:
    X, Q, K, V, A, H, scale = cache
    dX = dOut.copy()  # residual branch
    grads["attn_wo"] += H.T @ dOut
    dH = dOut @ params.attn_wo.T
    dA = dH @ V.T
    dV = A.T @ dH
    # row-softmax backward: dE_i = A_i * (dA_i - <dA_i, A_i>)
    dE = A * (dA - (dA * A).sum(axis=1, keepdims=True))
    dQ = (dE @ K) * scale
    dK = (dE.T @ Q) * scale
    grads["attn_wq"] += X.T @ dQ
    grads["attn_wk"] += X.T @ dK
    grads["attn_wv"] += X.T @ dV
    dX += dQ @ params.attn_wq.T + dK @ params.attn_wk.T + dV @ params.attn_wv.T
    return dX


def _normalize_rows(X: np.ndarray):
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero row: cosine is undefined for zero vectors")
    return X / norms[:, None], norms


def _normalize_rows_backward(dXhat: np.ndarray, Xhat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    inner = (dXhat * Xhat).sum(axis=1, keepdims=True)
    return (dXhat - inner * Xhat) / norms[:, None]


def _softmax_backward(dalpha: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return alpha * (dalpha - dalpha @ alpha)


# ---------------------------------------------------------------------------
# bundle combination


def bundle_forward(method: str, queries, params: ModelParams, tswf_tau: float = 1.0):
    """Project a raw bundle and combine it into one feature row.

    Returns ``(z, alpha, cache)``; alpha is None for mf. The combined
    feature is the weighted sum of *projected* query rows; tswf/lgwf/cgwf
    weights are also computed from the projected rows.
    """
    method = normalize_method(method)
    if method not in TRAINABLE_METHODS:
        raise ValueError(f"{method!r} has no feature-combination forward pass")
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    F = project(Q, params.query_proj_w, params.query_proj_b)
    alpha = None
    sub = None
    if method == "mf":
        z = F.mean(axis=0)
    elif method == "tswf":
        Fhat, fnorms = _normalize_rows(F)
        C = Fhat @ Fhat.T
        np.fill_diagonal(C, 0.0)
        informativeness = -C.sum(axis=1)
        alpha = softmax(informativeness / tswf_tau)
        z = alpha @ F
        sub = (Fhat, fnorms, tswf_tau)
    elif method == "lgwf":
        s, mlp_cache = _mlp_rows(F, params)
        alpha = softmax(s)
        z = alpha @ F
        sub = mlp_cache
    else:  # cgwf
        ctx, attn_cache = _attention_rows(F, params)
        s, mlp_cache = _mlp_rows(ctx, params)
        alpha = softmax(s)
        z = alpha @ F
        sub = (attn_cache, mlp_cache)
    cache = (method, Q, F, alpha, sub)
    return z, alpha, cache


def bundle_backward(dz: np.ndarray, cache, params: ModelParams, grads: GradientSet) -> None:
    """Accumulate gradients for one bundle given dLoss/d(combined feature)."""
    method, Q, F, alpha, sub = cache
    k = F.shape[0]
    if method == "mf":
        dF = np.tile(dz / k, (k, 1))
    else:
        dF = np.outer(alpha, dz)
        dalpha = F @ dz
        ds = _softmax_backward(dalpha, alpha)
        if method == "tswf":
            Fhat, fnorms, tau = sub
            dI = ds / tau
            # I_a = -sum_{b != a} C_ab; C_ab also feeds I_b, handled by dC + dC.T
            dC = np.tile(-dI[:, None], (1, k))
            np.fill_diagonal(dC, 0.0)
            dFhat = (dC + dC.T) @ Fhat
            dF += _normalize_rows_backward(dFhat, Fhat, fnorms)
        elif method == "lgwf":
            dF += _mlp_rows_backward(ds, sub, params, grads)
        else:  # cgwf
            attn_cache, mlp_cache = sub
            dctx = _mlp_rows_backward(ds, mlp_cache, params, grads)
            dF += _attention_rows_backward(dctx, attn_cache, params, grads)
    grads["query_proj_w"] += Q.T @ dF
    grads["query_proj_b"] += dF.sum(axis=0)


# ---------------------------------------------------------------------------
# batch scores


def scores_forward(method: str, bundles, videos, params: ModelParams, tswf_tau: float = 1.0):
    """Cosine of each combined bundle feature against each projected video.

    ``bundles`` is a sequence of (k_i, m) raw query matrices; ``videos``
    is (B, m) raw. Returns ``(scores, cache)`` with scores of shape
    (len(bundles), B).
    """
    V = np.atleast_2d(np.asarray(videos, dtype=np.float64))
    G = project(V, params.video_proj_w, params.video_proj_b)
    zs, caches = [], []
    for queries in bundles:
        z, _, cache = bundle_forward(method, queries, params, tswf_tau)
        zs.append(z)
        caches.append(cache)
    Z = np.stack(zs, axis=0)
    Zhat, znorms = _normalize_rows(Z)
    Ghat, gnorms = _normalize_rows(G)
    scores = Zhat @ Ghat.T
    cache = (caches, V, Zhat, znorms, Ghat, gnorms)
    return scores, cache


def scores_backward(dscores: np.ndarray, cache, params: ModelParams) -> GradientSet:
    """Exact gradients of a scalar loss given dLoss/dscores.

    Tensors that the scored path never touches keep exactly-zero
    gradients (e.g. the video projection under a query-only probe).
    """
    bundle_caches, V, Zhat, znorms, Ghat, gnorms = cache
    grads = zero_gradients(params)
    dZhat = dscores @ Ghat
    dGhat = dscores.T @ Zhat
    dZ = _normalize_rows_backward(dZhat, Zhat, znorms)
    dG = _normalize_rows_backward(dGhat, Ghat, gnorms)
    grads["video_proj_w"] += V.T @ dG
    grads["video_proj_b"] += dG.sum(axis=0)
    for dz, bcache in zip(dZ, bundle_caches):
        bundle_backward(dz, bcache, params, grads)
    return grads


# ---------------------------------------------------------------------------
# persistence

_SIDECAR_NAME = "params.json"


def save_params(params: ModelParams, directory) -> None:
    """Persist tensors as binary blobs plus a JSON sidecar.

    Storage is float32, like corpora; reloaded values are the float32
    rounding of the in-memory tensors.
    """
    params.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensor_meta = {}
    for name, arr in params.tensors().items():
        blob = f"{name}.bin"
        flat = np.atleast_2d(arr) if arr.ndim <= 2 else None
        if flat is None:
            raise ValueError(f"{name}: tensors must be at most 2-D")
        store.write_matrix(directory / blob, flat)
        tensor_meta[name] = {"file": blob, "shape": list(arr.shape)}
    sidecar = {
        "kind": params.kind,
        "m": params.m,
        "h": params.h,
        "d_a": params.d_a,
        "seed": params.seed,
        "tensors": tensor_meta,
    }
    with open(directory / _SIDECAR_NAME, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(directory) -> ModelParams:
    directory = Path(directory)
    path = directory / _SIDECAR_NAME
    if not path.is_file():
        raise store.FormatError(f"missing params sidecar: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            sidecar = json.load(fh)
        except json.JSONDecodeError as exc:
            raise store.FormatError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("kind", "m", "h", "d_a", "tensors"):
        if key not in sidecar:
            raise store.FormatError(f"{path}: missing sidecar field {key!r}")
    params = ModelParams(
        kind=sidecar["kind"],
        m=sidecar["m"],
        h=sidecar["h"],
        d_a=sidecar["d_a"],
        seed=sidecar.get("seed"),
    )
    for name in tensor_names_for(params.kind):
        meta = sidecar["tensors"].get(name)
        if meta is None:
            raise store.FormatError(f"{path}: sidecar lists no tensor {name!r}")
        arr = store.read_matrix(directory / meta["file"])
        setattr(params, name, arr.reshape(tuple(meta["shape"])))
    params.validate()
    return params
