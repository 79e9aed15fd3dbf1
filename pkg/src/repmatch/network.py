"""Jointly trained selection/representation/prediction network.

Architecture: a one-to-one feature-selection layer (one learned weight per
input column), fully connected ReLU representation layers with dropout, a
softmax treatment head, and two scalar outcome heads of which each unit
only uses the one matching its observed treatment.  The training
objective adds five terms: treatment cross-entropy, weighted factual
outcome MSE, a weighted transport distance between treated and control
representation clouds, an elastic-net penalty on selection/representation
weights, and an L2 penalty on prediction-head weights.

Gradients are exact and computed by hand, including the transport term
differentiated through the unrolled Sinkhorn iterations; the finite
difference suite in tests/test_gradients.py checks every parameter of
every term.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .balance import sinkhorn_wasserstein, wasserstein_grad
from .datagen import Dataset
from .numcore import RandomStream

PROB_FLOOR = 1e-12
N_TREATMENTS = 2


@dataclass
class TrainConfig:
    """Hyperparameters and architecture sizes.

    delta weights the outcome loss, gamma the distribution-balance term,
    (lambda_l2, alpha_l1) the elastic net on selection/representation
    weights, beta the L2 penalty on prediction-head weights.  layer_dims
    are the hidden representation widths (the input width is prepended
    automatically); pred_layers/pred_dim shape each prediction branch
    before its linear output layer.
    """

    delta: float = 2.0
    gamma: float = 0.5
    lambda_l2: float = 1e-4
    alpha_l1: float = 1e-3
    beta: float = 1e-4
    layer_dims: tuple[int, ...] = (100, 50)
    pred_layers: int = 2
    pred_dim: int = 50
    batch_size: int = 100
    dropout_rate: float = 0.1
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 300
    patience: int = 30
    val_fraction: float = 0.3
    sinkhorn_eps: float = 0.1
    sinkhorn_iters: int = 100
    ipm_grad_mode: str = "unrolled"  # or "envelope"
    use_feature_selection: bool = True

    def __post_init__(self):
        for name in ("delta", "gamma", "lambda_l2", "alpha_l1", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.layer_dims:
            raise ValueError("layer_dims must be nonempty")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.pred_layers < 0:
            raise ValueError("pred_layers must be >= 0")
        if self.ipm_grad_mode not in ("unrolled", "envelope"):
            raise ValueError("ipm_grad_mode must be 'unrolled' or 'envelope'")


@dataclass
class NetworkParams:
    """All learnable weights, plus the input standardization constants.

    Exactly one of select_diag (the one-to-one layer) and select_dense
    (its fully connected replacement used by the no-selection ablation)
    is set.  Heads are lists of (W, b) whose last entry is the linear
    output layer.
    """

    select_diag: Optional[np.ndarray]
    select_dense: Optional[tuple[np.ndarray, np.ndarray]]
    rep_layers: list[tuple[np.ndarray, np.ndarray]]
    treat_head: list[tuple[np.ndarray, np.ndarray]]
    out_head0: list[tuple[np.ndarray, np.ndarray]]
    out_head1: list[tuple[np.ndarray, np.ndarray]]
    x_mean: Optional[np.ndarray] = None
    x_std: Optional[np.ndarray] = None

    @property
    def input_dim(self) -> int:
        if self.select_diag is not None:
            return len(self.select_diag)
        return self.select_dense[0].shape[0]

    def clone(self) -> "NetworkParams":
        return copy.deepcopy(self)


@dataclass
class ForwardResult:
    representation: np.ndarray  # (n, rep_dim)
    treat_logits: np.ndarray  # (n, 2)
    y_hat: np.ndarray  # (n,)
    p_treated: np.ndarray  # (n,)


def _affine_stack(dims, stream):
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        s = 1.0 / np.sqrt(d_in)
        w = (2.0 * stream.uniform((d_in, d_out)) - 1.0) * s
        layers.append((w, np.zeros(d_out)))
    return layers


def init_params(d_in: int, config: TrainConfig, stream: RandomStream) -> NetworkParams:
    """Fresh parameters: selection weights at 1, affine layers fan-in scaled."""
    rep_dims = (d_in,) + tuple(config.layer_dims)
    head_dims = (rep_dims[-1],) + (config.pred_dim,) * config.pred_layers
    if config.use_feature_selection:
        select_diag, select_dense = np.ones(d_in), None
    else:
        select_diag = None
        w, b = _affine_stack((d_in, d_in), stream)[0]
        select_dense = (w, b)
    return NetworkParams(
        select_diag=select_diag,
        select_dense=select_dense,
        rep_layers=_affine_stack(rep_dims, stream),
        treat_head=_affine_stack(head_dims + (N_TREATMENTS,), stream),
        out_head0=_affine_stack(head_dims + (1,), stream),
        out_head1=_affine_stack(head_dims + (1,), stream),
    )


def _std_scale(x_std: np.ndarray) -> np.ndarray:
    # constant columns map to 0 rather than dividing by 0
    return np.where(x_std > 0, 1.0 / np.where(x_std > 0, x_std, 1.0), 0.0)


def standardize(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Apply the stored per-column standardization (identity if absent)."""
    if params.x_mean is None:
        return np.asarray(x, dtype=float)
    return (np.asarray(x, dtype=float) - params.x_mean) * _std_scale(params.x_std)


def _head_forward(layers, h, cache=None):
    """ReLU hidden layers then a linear output layer."""
    for w, b in layers[:-1]:
        z = h @ w + b
        if cache is not None:
            cache.append((h, z))
        h = np.maximum(z, 0.0)
    w, b = layers[-1]
    if cache is not None:
        cache.append((h, None))
    return h @ w + b


def _softmax(z):
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(params: NetworkParams, x, t, mode, stream, dropout_rate):
    """Forward pass keeping every intermediate needed by the reverse pass."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=np.int64).ravel()
    if x.shape[1] != params.input_dim:
        raise ValueError(f"expected {params.input_dim} input columns, got {x.shape[1]}")
    if x.shape[0] != len(t):
        raise ValueError("x and t disagree on the number of units")

    cache: dict = {"x": x, "t": t, "mode": mode}
    if params.select_diag is not None:
        h = x * params.select_diag[None, :]
    else:
        w0, b0 = params.select_dense
        h = x @ w0 + b0
    cache["selected"] = h

    rep_cache = []
    train_mode = mode == "train" and dropout_rate > 0.0
    for w, b in params.rep_layers:
        z = h @ w + b
        a = np.maximum(z, 0.0)
        if train_mode:
            mask = (stream.uniform(a.shape) >= dropout_rate) / (1.0 - dropout_rate)
        else:
            mask = None
        h_next = a * mask if mask is not None else a
        rep_cache.append((h, z, mask))
        h = h_next
    cache["rep_cache"] = rep_cache
    cache["rep"] = h

    tc: list = []
    logits = _head_forward(params.treat_head, h, tc)
    cache["treat_cache"] = tc
    pi = _softmax(logits)
    cache["pi"] = pi

    oc0: list = []
    oc1: list = []
    yhat0 = _head_forward(params.out_head0, h, oc0).ravel()
    yhat1 = _head_forward(params.out_head1, h, oc1).ravel()
    cache["out_cache"] = (oc0, oc1)
    cache["yhat01"] = (yhat0, yhat1)

    y_hat = np.where(t == 1, yhat1, yhat0)
    p_treated = np.clip(pi[:, 1], PROB_FLOOR, 1.0 - PROB_FLOOR)
    result = ForwardResult(
        representation=h, treat_logits=logits, y_hat=y_hat, p_treated=p_treated
    )
    return result, cache


def forward(
    params: NetworkParams,
    x: np.ndarray,
    t: np.ndarray,
    mode: str = "eval",
    stream: Optional[RandomStream] = None,
    dropout_rate: float = 0.0,
) -> ForwardResult:
    """Run the network; mode='train' samples dropout masks from the stream."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if mode == "train" and dropout_rate > 0.0 and stream is None:
        raise ValueError("train mode with dropout needs a stream")
    result, _ = _forward_cached(params, x, t, mode, stream, dropout_rate)
    return result


def eval_forward(params: NetworkParams, ds: Dataset) -> ForwardResult:
    """Eval-mode forward on a dataset, applying stored standardization."""
    return forward(params, standardize(params, ds.x), ds.t, mode="eval")


def loss_treatment(fr: ForwardResult, t: np.ndarray) -> float:
    """Mean cross-entropy of the softmax treatment head."""
    t = np.asarray(t, dtype=np.int64).ravel()
    pi = _softmax(fr.treat_logits)
    picked = np.clip(pi[np.arange(len(t)), t], PROB_FLOOR, None)
    return float(-np.log(picked).mean())


def loss_outcome(fr: ForwardResult, y: np.ndarray, delta: float) -> float:
    """delta-weighted mean squared error on factual outcomes."""
    y = np.asarray(y, dtype=float).ravel()
    return float(delta * np.mean((fr.y_hat - y) ** 2))


def _selection_weights(params: NetworkParams):
    if params.select_diag is not None:
        return [params.select_diag]
    return [params.select_dense[0]]


def elastic_net_penalty(params: NetworkParams, lambda_l2: float, alpha_l1: float) -> float:
    """L2 + L1 over selection and representation weights (no biases)."""
    mats = _selection_weights(params) + [w for w, _ in params.rep_layers]
    l2 = sum(float((w * w).sum()) for w in mats)
    l1 = sum(float(np.abs(w).sum()) for w in mats)
    return lambda_l2 * l2 + alpha_l1 * l1


def l2_prediction_penalty(params: NetworkParams, beta: float) -> float:
    """L2 over all prediction-head weights (no biases)."""
    mats = [w for head in (params.treat_head, params.out_head0, params.out_head1) for w, _ in head]
    return beta * sum(float((w * w).sum()) for w in mats)


def _ipm_term(rep, t, config):
    """(weighted value, raw value, plan or None, skipped flag)."""
    treated = rep[t == 1]
    control = rep[t == 0]
    if len(treated) == 0 or len(control) == 0:
        return 0.0, 0.0, None, True
    if config.gamma == 0.0:
        return 0.0, 0.0, None, False
    plan = sinkhorn_wasserstein(treated, control, config.sinkhorn_eps, config.sinkhorn_iters)
    return config.gamma * plan.cost, plan.cost, plan, False


def total_objective(
    params: NetworkParams,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: TrainConfig,
    stream: Optional[RandomStream] = None,
    mode: str = "train",
) -> tuple[float, dict]:
    """Full objective on one batch plus its per-term breakdown."""
    x, t, y = batch
    result, cache = _forward_cached(params, x, t, mode, stream, config.dropout_rate)
    lt = loss_treatment(result, t)
    mse = float(np.mean((result.y_hat - np.asarray(y, dtype=float).ravel()) ** 2))
    ly = config.delta * mse
    ipm, ipm_raw, _, skipped = _ipm_term(cache["rep"], cache["t"], config)
    en = elastic_net_penalty(params, config.lambda_l2, config.alpha_l1)
    pred = l2_prediction_penalty(params, config.beta)
    total = lt + ly + ipm + en + pred
    breakdown = {
        "treatment": lt,
        "outcome": ly,
        "outcome_mse": mse,
        "ipm": ipm,
        "ipm_raw": ipm_raw,
        "elastic_net": en,
        "prediction_l2": pred,
        "total": total,
        "ipm_skipped": skipped,
    }
    return total, breakdown


def _zeros_like_params(params: NetworkParams) -> NetworkParams:
    zl = lambda layers: [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    return NetworkParams(
        select_diag=None if params.select_diag is None else np.zeros_like(params.select_diag),
        select_dense=None
        if params.select_dense is None
        else (np.zeros_like(params.select_dense[0]), np.zeros_like(params.select_dense[1])),
        rep_layers=zl(params.rep_layers),
        treat_head=zl(params.treat_head),
        out_head0=zl(params.out_head0),
        out_head1=zl(params.out_head1),
    )


def _head_backward(layers, caches, dout, grads):
    """Backprop a head; returns gradient w.r.t. its input representation."""
    d = dout
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        h_in, z = caches[idx]
        gw, gb = grads[idx]
        gw += h_in.T @ d
        gb += d.sum(axis=0)
        d = d @ w.T
        if idx > 0:
            _, z_prev = caches[idx - 1]
            d = d * (z_prev > 0)
    return d


def backward(
    params: NetworkParams,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: TrainConfig,
    stream: Optional[RandomStream] = None,
) -> NetworkParams:
    """Exact gradient of the full objective; mirrors NetworkParams.

    Runs its own forward pass so one dropout realization is shared by the
    forward and reverse sweeps.
    """
    x, t, y = batch
    y = np.asarray(y, dtype=float).ravel()
    result, cache = _forward_cached(params, x, t, "train", stream, config.dropout_rate)
    t = cache["t"]
    n = len(t)
    grads = _zeros_like_params(params)

    # treatment cross-entropy through the softmax
    dlogits = (_softmax(result.treat_logits) - np.eye(N_TREATMENTS)[t]) / n
    d_rep = _head_backward(params.treat_head, cache["treat_cache"], dlogits, grads.treat_head)

    # factual outcome loss, routed to the observed head only
    dy = 2.0 * config.delta / n * (result.y_hat - y)
    yhat0, yhat1 = cache["yhat01"]
    oc0, oc1 = cache["out_cache"]
    d0 = (dy * (t == 0))[:, None]
    d1 = (dy * (t == 1))[:, None]
    d_rep = d_rep + _head_backward(params.out_head0, oc0, d0, grads.out_head0)
    d_rep = d_rep + _head_backward(params.out_head1, oc1, d1, grads.out_head1)

    # distribution balance between the two representation clouds
    if config.gamma > 0.0:
        rep = cache["rep"]
        tm = t == 1
        if tm.any() and (~tm).any():
            plan = sinkhorn_wasserstein(
                rep[tm], rep[~tm], config.sinkhorn_eps, config.sinkhorn_iters
            )
            gt, gc = wasserstein_grad(plan, rep[tm], rep[~tm], mode=config.ipm_grad_mode)
            d_ipm = np.zeros_like(rep)
            d_ipm[tm] = config.gamma * gt
            d_ipm[~tm] = config.gamma * gc
            d_rep = d_rep + d_ipm

    # representation stack
    d = d_rep
    for idx in range(len(params.rep_layers) - 1, -1, -1):
        w, _ = params.rep_layers[idx]
        h_in, z, mask = cache["rep_cache"][idx]
        if mask is not None:
            d = d * mask
        d = d * (z > 0)
        gw, gb = grads.rep_layers[idx]
        gw += h_in.T @ d
        gb += d.sum(axis=0)
        d = d @ w.T

    # selection layer
    if params.select_diag is not None:
        grads.select_diag += (cache["x"] * d).sum(axis=0)
    else:
        gw, gb = grads.select_dense
        gw += cache["x"].T @ d
        gb += d.sum(axis=0)

    # penalties (pure functions of the weights)
    sel_grads = (
        [grads.select_diag] if params.select_diag is not None else [grads.select_dense[0]]
    )
    for w, gw in zip(_selection_weights(params), sel_grads):
        gw += 2.0 * config.lambda_l2 * w + config.alpha_l1 * np.sign(w)
    for (w, _), (gw, _) in zip(params.rep_layers, grads.rep_layers):
        gw += 2.0 * config.lambda_l2 * w + config.alpha_l1 * np.sign(w)
    for head, ghead in (
        (params.treat_head, grads.treat_head),
        (params.out_head0, grads.out_head0),
        (params.out_head1, grads.out_head1),
    ):
        for (w, _), (gw, _) in zip(head, ghead):
            gw += 2.0 * config.beta * w
    return grads


def flatten_params(params: NetworkParams) -> list[np.ndarray]:
    """All parameter arrays in a fixed traversal order."""
    out = []
    if params.select_diag is not None:
        out.append(params.select_diag)
    else:
        out.extend(params.select_dense)
    for layers in (params.rep_layers, params.treat_head, params.out_head0, params.out_head1):
        for w, b in layers:
            out.append(w)
            out.append(b)
    return out


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        flat = flatten_params(params)
        return cls(0, [np.zeros_like(a) for a in flat], [np.zeros_like(a) for a in flat])


def adam_step(
    params: NetworkParams, grads: NetworkParams, state: AdamState, config: TrainConfig
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    new_params = params.clone()
    flat_p = flatten_params(new_params)
    flat_g = flatten_params(grads)
    b1, b2 = config.adam_beta1, config.adam_beta2
    step = state.step + 1
    new_m, new_v = [], []
    for p, g, m, v in zip(flat_p, flat_g, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**step)
        vhat = v / (1.0 - b2**step)
        p -= config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)
        new_m.append(m)
        new_v.append(v)
    new_params.x_mean = params.x_mean
    new_params.x_std = params.x_std
    return new_params, AdamState(step, new_m, new_v)


def _stratified_split(t, val_fraction, stream):
    train_idx, val_idx = [], []
    for group in (0, 1):
        members = np.flatnonzero(t == group)
        perm = members[stream.permutation(len(members))]
        n_val = int(round(val_fraction * len(members)))
        n_val = min(max(n_val, 1 if len(members) > 1 else 0), len(members) - 1)
        val_idx.extend(perm[:n_val])
        train_idx.extend(perm[n_val:])
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(
        np.array(val_idx, dtype=np.int64)
    )


def train(
    config: TrainConfig, ds: Dataset, stream: RandomStream
) -> tuple[NetworkParams, list[dict]]:
    """Minibatch Adam training with early stopping on validation objective.

    Covariates are standardized to the training split (constant columns
    map to 0).  Returns the parameters of the best validation epoch and a
    per-epoch history of every objective term on both splits.
    """
    if not ((ds.t == 1).any() and (ds.t == 0).any()):
        raise ValueError("training requires both treatment groups")

    s_init = stream.split(0)
    s_split = stream.split(1)
    s_steps = stream.split(2)

    train_idx, val_idx = _stratified_split(ds.t, config.val_fraction, s_split)
    x_mean = ds.x[train_idx].mean(axis=0)
    x_std = ds.x[train_idx].std(axis=0)
    scale = _std_scale(x_std)
    x_all = (ds.x - x_mean) * scale

    params = init_params(ds.d, config, s_init)
    params.x_mean = x_mean
    params.x_std = x_std
    if config.max_epochs == 0:
        return params, []

    state = AdamState.zeros(params)
    xt, tt, yt = x_all[train_idx], ds.t[train_idx], ds.y_f[train_idx]
    xv, tv, yv = x_all[val_idx], ds.t[val_idx], ds.y_f[val_idx]

    best_val = np.inf
    best_params = params.clone()
    best_epoch = -1
    history: list[dict] = []
    since_best = 0
    for epoch in range(config.max_epochs):
        order = s_steps.permutation(len(train_idx))
        for start in range(0, len(order), config.batch_size):
            sel = order[start : start + config.batch_size]
            if len(sel) < 2:
                continue
            grads = backward(params, (xt[sel], tt[sel], yt[sel]), config, s_steps)
            params, state = adam_step(params, grads, state, config)

        _, tr = total_objective(params, (xt, tt, yt), config, mode="eval")
        _, va = total_objective(params, (xv, tv, yv), config, mode="eval")
        if va["total"] < best_val:
            best_val = va["total"]
            best_params = params.clone()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        row = {"epoch": epoch, "best_val": best_val, "is_best": int(best_epoch == epoch)}
        row.update({f"train_{k}": v for k, v in tr.items() if k != "ipm_skipped"})
        row.update({f"val_{k}": v for k, v in va.items() if k != "ipm_skipped"})
        history.append(row)
        if since_best > config.patience:
            break
    return best_params, history


# -- checkpointing ----------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: NetworkParams) -> None:
    """Dump weights and standardization constants; reload is bit-exact."""
    arrays = {}
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": "diag" if params.select_diag is not None else "dense",
        "n_rep": len(params.rep_layers),
        "n_treat": len(params.treat_head),
        "n_out": len(params.out_head0),
        "has_stats": params.x_mean is not None,
    }
    if params.select_diag is not None:
        arrays["select_diag"] = params.select_diag
    else:
        arrays["select_w"], arrays["select_b"] = params.select_dense
    for tag, layers in (
        ("rep", params.rep_layers),
        ("treat", params.treat_head),
        ("out0", params.out_head0),
        ("out1", params.out_head1),
    ):
        for i, (w, b) in enumerate(layers):
            arrays[f"{tag}_w{i}"] = w
            arrays[f"{tag}_b{i}"] = b
    if params.x_mean is not None:
        arrays["x_mean"] = params.x_mean
        arrays["x_std"] = params.x_std
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_checkpoint(path) -> NetworkParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        stack = lambda tag, count: [
            (data[f"{tag}_w{i}"], data[f"{tag}_b{i}"]) for i in range(count)
        ]
        return NetworkParams(
            select_diag=data["select_diag"] if meta["kind"] == "diag" else None,
            select_dense=None
            if meta["kind"] == "diag"
            else (data["select_w"], data["select_b"]),
            rep_layers=stack("rep", meta["n_rep"]),
            treat_head=stack("treat", meta["n_treat"]),
            out_head0=stack("out0", meta["n_out"]),
            out_head1=stack("out1", meta["n_out"]),
            x_mean=data["x_mean"] if meta["has_stats"] else None,
            x_std=data["x_std"] if meta["has_stats"] else None,
        )
