"""Graph-convolutional ranking predictor with exact analytic gradients.

The network scores an architecture (A, X): a stack of degree-normalized
graph convolutions with rectifier activations, mean pooling over the
node dimension, and a single linear output neuron. Higher score means
predicted-better (lower validation error). Gradients are implemented by
hand, both w.r.t. parameters (training) and w.r.t. relaxed continuous
inputs (gradient-based candidate sampling), so the whole predictor runs
in double precision with no autograd dependency.

Training minimizes a pairwise cross-entropy: for a pair with scores
(s_i, s_j) and label y = 1 iff architecture i has the lower mean
validation error, p(y=1) = logistic(s_i - s_j).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .space import Architecture

__all__ = [
    "PredictorConfig",
    "PredictorParams",
    "PredictorGrads",
    "TrainHyper",
    "ForwardCache",
    "NoRankingSignalError",
    "normalize_adjacency",
    "forward",
    "backward_params",
    "backward_inputs",
    "pairwise_loss",
    "train",
    "score_set",
    "score_matrices",
    "init_params",
    "cosine_lr",
    "save_params",
    "load_params",
]

_SCORE_CHUNK = 8192


class NoRankingSignalError(ValueError):
    """Training set has no pair of distinct error values to rank."""


@dataclass(frozen=True)
class PredictorConfig:
    """Shape of the predictor: input one-hot width, GCN depth and width."""

    input_width: int
    num_gcn_layers: int = 3
    hidden_width: int = 256
    activation: str = "relu"

    def __post_init__(self):
        if self.input_width < 1 or self.num_gcn_layers < 1 or self.hidden_width < 1:
            raise ValueError(f"bad predictor config: {self}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_width] + [self.hidden_width] * self.num_gcn_layers
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class PredictorParams:
    weights: list[np.ndarray]
    w_out: np.ndarray
    b_out: float

    def copy(self) -> "PredictorParams":
        return PredictorParams(
            [w.copy() for w in self.weights], self.w_out.copy(), self.b_out
        )


@dataclass
class PredictorGrads:
    weights: list[np.ndarray]
    w_out: np.ndarray
    b_out: float


@dataclass(frozen=True)
class TrainHyper:
    """SGD-with-momentum schedule; lr follows a by-step cosine decay to 0."""

    epochs: int = 2000
    lr: float = 0.01
    momentum: float = 0.9
    pairs_per_epoch: int = 512
    batch_pairs: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or not (0 <= self.momentum < 1):
            raise ValueError(f"bad training hyperparameters: {self}")
        if self.pairs_per_epoch < 1 or self.batch_pairs < 1:
            raise ValueError(f"bad training hyperparameters: {self}")


@dataclass
class ForwardCache:
    """Everything the backward passes need from one forward evaluation."""

    ahat: np.ndarray          # (1, L, L) normalized adjacency
    atilde: np.ndarray        # (1, L, L) adjacency with self-loops
    deg: np.ndarray           # (1, L) row degrees of atilde
    hs: list[np.ndarray]      # [(1, L, d_g)] activations, hs[0] = X
    pooled: np.ndarray        # (1, hidden)
    score: float


def init_params(config: PredictorConfig, rng: np.random.Generator) -> PredictorParams:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); zero bias."""
    weights = []
    for fan_in, fan_out in config.layer_shapes():
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
    a = math.sqrt(6.0 / (config.hidden_width + 1))
    w_out = rng.uniform(-a, a, size=config.hidden_width)
    return PredictorParams(weights=weights, w_out=w_out, b_out=0.0)


def _to_matrices(arch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(arch, Architecture):
        return arch.adjacency.astype(np.float64), arch.features.astype(np.float64)
    a, x = arch
    return np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64)


def _normalize_batch(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ahat, atilde, deg) for a batch of (relaxed) adjacencies."""
    L = a.shape[-1]
    atilde = a + np.eye(L)
    deg = atilde.sum(axis=-1)
    if np.any(deg <= 0):
        raise ValueError("relaxed adjacency has a non-positive row degree")
    ahat = atilde / np.sqrt(deg)[..., None]
    return np.ascontiguousarray(ahat), atilde, deg


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """D^{-1/2} (A + I) with D the row-sum degrees of A + I.

    One-sided normalization: rows are scaled by 1/sqrt(degree), columns
    are left untouched.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    ahat, _, _ = _normalize_batch(a[None])
    return ahat[0]


def _check_dims(config: PredictorConfig, params: PredictorParams, x: np.ndarray):
    if x.shape[-1] != config.input_width:
        raise ValueError(
            f"feature width {x.shape[-1]} != config input_width {config.input_width}"
        )
    shapes = config.layer_shapes()
    if len(params.weights) != len(shapes) or any(
        w.shape != s for w, s in zip(params.weights, shapes)
    ):
        raise ValueError("params shapes inconsistent with config")


def batched_forward(
    params: PredictorParams,
    ahat: np.ndarray,
    x: np.ndarray,
    keep_hidden: bool = False,
):
    """Scores for a batch; optionally keep per-layer activations.

    Returns (scores, hs, pooled); hs/pooled are None when not kept.
    """
    h = np.ascontiguousarray(x, dtype=np.float64)
    hs = [h] if keep_hidden else None
    for w in params.weights:
        h = kernels.conv_forward(ahat, h, np.ascontiguousarray(w))
        if keep_hidden:
            hs.append(h)
    pooled = h.mean(axis=1)
    scores = pooled @ params.w_out + params.b_out
    return scores, hs, (pooled if keep_hidden else None)


def forward(params: PredictorParams, config: PredictorConfig, arch):
    """Score one architecture (or a relaxed (A, X) pair of real matrices).

    Returns (score, cache); the cache feeds backward_params and
    backward_inputs.
    """
    a, x = _to_matrices(arch)
    _check_dims(config, params, x)
    ahat, atilde, deg = _normalize_batch(a[None])
    scores, hs, pooled = batched_forward(params, ahat, x[None], keep_hidden=True)
    cache = ForwardCache(
        ahat=ahat, atilde=atilde, deg=deg, hs=hs, pooled=pooled,
        score=float(scores[0]),
    )
    return float(scores[0]), cache


def _out_layer_backward(params, pooled, hs_last, upstream):
    """Gradients of (upstream * score) through pooling and output neuron."""
    b, l, _ = hs_last.shape
    upstream = np.asarray(upstream, dtype=np.float64).reshape(b)
    g_wout = pooled.T @ upstream
    g_bout = float(upstream.sum())
    g_h = np.ascontiguousarray(
        np.broadcast_to(
            upstream[:, None, None] * params.w_out[None, None, :] / l,
            hs_last.shape,
        )
    )
    return g_wout, g_bout, g_h


def batched_backward_params(params, ahat, hs, pooled, upstream) -> PredictorGrads:
    """Parameter gradients summed over the batch, upstream per sample."""
    g_wout, g_bout, g_h = _out_layer_backward(params, pooled, hs[-1], upstream)
    g_ws = [None] * len(params.weights)
    for g in range(len(params.weights) - 1, -1, -1):
        g_w, g_h, _ = kernels.conv_backward(
            ahat, hs[g], hs[g + 1], np.ascontiguousarray(params.weights[g]), g_h
        )
        g_ws[g] = g_w
    return PredictorGrads(weights=g_ws, w_out=g_wout, b_out=g_bout)


def backward_params(
    cache: ForwardCache, params: PredictorParams, config: PredictorConfig,
    upstream: float,
) -> PredictorGrads:
    """Exact gradients of upstream * score w.r.t. every parameter."""
    _check_dims(config, params, cache.hs[0])
    return batched_backward_params(
        params, cache.ahat, cache.hs, cache.pooled, np.array([upstream])
    )


def batched_backward_inputs(params, ahat, atilde, deg, hs, upstream):
    """Gradients w.r.t. the relaxed adjacency and feature matrices.

    The degree normalization is differentiated through: with
    deg_i = 1 + sum_j A_ij,

        dL/dA_il = g_ahat_il / sqrt(deg_i)
                   - (1/2) deg_i^{-3/2} sum_j g_ahat_ij atilde_ij.
    """
    b, l, _ = hs[-1].shape
    upstream = np.asarray(upstream, dtype=np.float64).reshape(b)
    g_h = np.ascontiguousarray(
        np.broadcast_to(
            upstream[:, None, None] * params.w_out[None, None, :] / l,
            hs[-1].shape,
        )
    )
    g_ahat = np.zeros_like(ahat)
    for g in range(len(params.weights) - 1, -1, -1):
        _, g_h, g_a = kernels.conv_backward(
            ahat, hs[g], hs[g + 1], np.ascontiguousarray(params.weights[g]),
            g_h, True,
        )
        g_ahat += g_a
    dinv = 1.0 / np.sqrt(deg)
    row_dot = np.einsum("bij,bij->bi", g_ahat, atilde)
    g_a_full = g_ahat * dinv[:, :, None] - 0.5 * (dinv**3 * row_dot)[:, :, None]
    return g_a_full, g_h


def backward_inputs(
    cache: ForwardCache, params: PredictorParams, config: PredictorConfig,
    upstream: float,
):
    """(grad wrt relaxed adjacency (L,L), grad wrt relaxed features (L,d))."""
    _check_dims(config, params, cache.hs[0])
    g_a, g_x = batched_backward_inputs(
        params, cache.ahat, cache.atilde, cache.deg, cache.hs,
        np.array([upstream]),
    )
    return g_a[0], g_x[0]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def pairwise_loss(score_i: float, score_j: float, y: int):
    """Pairwise cross-entropy with p(y=1) = logistic(score_i - score_j).

    y = 1 means architecture i is the better one (lower mean validation
    error). Overflow-safe for arbitrarily large score gaps. Returns
    (loss, dloss/dscore_i, dloss/dscore_j).
    """
    if y not in (0, 1):
        raise ValueError(f"y must be 0 or 1, got {y!r}")
    delta = float(score_i) - float(score_j)
    loss = float(np.logaddexp(0.0, -delta) if y == 1 else np.logaddexp(0.0, delta))
    p = float(_sigmoid(delta))
    return loss, p - y, y - p


def cosine_lr(step: int, total_steps: int, lr: float) -> float:
    """Cosine-by-step schedule from lr at step 0 to exactly 0 at the last step."""
    if total_steps <= 1:
        return lr
    return lr * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def _arch_stacks(archs) -> tuple[np.ndarray, np.ndarray]:
    a = np.stack([arch.adjacency for arch in archs]).astype(np.float64)
    x = np.stack([arch.features for arch in archs]).astype(np.float64)
    return a, x


def _sample_distinct(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """k distinct integers from range(n), uniform, cheap for k << n."""
    if k >= n:
        return rng.permutation(n)
    if n <= 4 * k:
        return rng.permutation(n)[:k]
    chosen = set()
    # Floyd's algorithm: uniform over k-subsets in O(k) draws
    for j in range(n - k, n):
        t = int(rng.integers(0, j + 1))
        if t in chosen:
            chosen.add(j)
        else:
            chosen.add(t)
    out = np.fromiter(chosen, dtype=np.int64, count=k)
    rng.shuffle(out)
    return out


def train(
    params: PredictorParams,
    config: PredictorConfig,
    hyper: TrainHyper,
    train_set,
    loss_log_path=None,
) -> PredictorParams:
    """SGD-with-momentum training on sampled ordered pairs.

    train_set is a list of (Architecture, mean validation error). Each
    epoch samples min(|T|(|T|-1), pairs_per_epoch) ordered pairs without
    replacement; exactly tied pairs carry no gradient. The learning rate
    follows a cosine-by-step decay from hyper.lr to zero. Deterministic
    given hyper.seed; the input params are not mutated.
    """
    n = len(train_set)
    if n < 2:
        raise ValueError(f"need at least 2 training architectures, got {n}")
    errors = np.array([float(e) for _, e in train_set])
    if np.all(errors == errors[0]):
        raise NoRankingSignalError(
            "no ranking signal: all training errors are identical"
        )
    a_raw, x = _arch_stacks([arch for arch, _ in train_set])
    _check_dims(config, params, x)
    ahat, _, _ = _normalize_batch(a_raw)

    rng = np.random.default_rng(hyper.seed)
    params = params.copy()
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_out = np.zeros_like(params.w_out)
    vel_b = 0.0

    n_pairs_all = n * (n - 1)
    pairs_per_epoch = min(n_pairs_all, hyper.pairs_per_epoch)
    steps_per_epoch = -(-pairs_per_epoch // hyper.batch_pairs)
    total_steps = hyper.epochs * steps_per_epoch

    epoch_losses = []
    step = 0
    for epoch in range(hyper.epochs):
        pair_ids = _sample_distinct(rng, n_pairs_all, pairs_per_epoch)
        loss_sum, loss_cnt = 0.0, 0
        for lo in range(0, pairs_per_epoch, hyper.batch_pairs):
            batch = pair_ids[lo : lo + hyper.batch_pairs]
            ii = batch // (n - 1)
            rr = batch % (n - 1)
            jj = rr + (rr >= ii)
            slots = np.concatenate([ii, jj])
            ahat_slots = np.ascontiguousarray(ahat[slots])
            scores, hs, pooled = batched_forward(
                params, ahat_slots, x[slots], keep_hidden=True,
            )
            m = len(batch)
            delta = scores[:m] - scores[m:]
            e_i, e_j = errors[ii], errors[jj]
            valid = e_i != e_j
            y = (e_i < e_j).astype(np.float64)
            n_valid = int(valid.sum())
            lr_t = cosine_lr(step, total_steps, hyper.lr)
            step += 1
            if n_valid > 0:
                loss_sum += float(
                    np.logaddexp(0.0, np.where(y > 0.5, -delta, delta))[valid].sum()
                )
                loss_cnt += n_valid
                g_delta = np.where(valid, (_sigmoid(delta) - y) / n_valid, 0.0)
            else:
                g_delta = np.zeros(m)
            upstream = np.concatenate([g_delta, -g_delta])
            grads = batched_backward_params(params, ahat_slots, hs, pooled, upstream)
            for w, v, g in zip(params.weights, vel_w, grads.weights):
                v *= hyper.momentum
                v -= lr_t * g
                w += v
            vel_out *= hyper.momentum
            vel_out -= lr_t * grads.w_out
            params.w_out += vel_out
            vel_b = hyper.momentum * vel_b - lr_t * grads.b_out
            params.b_out += vel_b
        epoch_losses.append(loss_sum / max(loss_cnt, 1))

    if loss_log_path is not None:
        with open(loss_log_path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_pair_loss\n")
            for e, ls in enumerate(epoch_losses):
                fh.write(f"{e},{ls!r}\n")
    return params


def score_matrices(
    params: PredictorParams, ahat: np.ndarray, x: np.ndarray,
    chunk: int = _SCORE_CHUNK,
) -> np.ndarray:
    """Scores for pre-normalized stacks; chunked to bound memory."""
    n = ahat.shape[0]
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        scores, _, _ = batched_forward(params, ahat[lo:hi], x[lo:hi])
        out[lo:hi] = scores
    return out


def score_set(params: PredictorParams, config: PredictorConfig, archs) -> np.ndarray:
    """Element-wise forward over a list of architectures (order preserved)."""
    if len(archs) == 0:
        return np.empty(0)
    a, x = _arch_stacks(archs)
    _check_dims(config, params, x)
    ahat, _, _ = _normalize_batch(a)
    return score_matrices(params, ahat, x)


_CHECKPOINT_VERSION = 1


def save_params(params: PredictorParams, path) -> None:
    """Round-trip-exact binary checkpoint (npz, float64 preserved)."""
    arrays = {f"w{i}": w for i, w in enumerate(params.weights)}
    np.savez(
        path,
        version=np.array(_CHECKPOINT_VERSION),
        num_layers=np.array(len(params.weights)),
        w_out=params.w_out,
        b_out=np.array(params.b_out),
        **arrays,
    )


def load_params(path) -> PredictorParams:
    with np.load(path) as data:
        version = int(data["version"])
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n = int(data["num_layers"])
        return PredictorParams(
            weights=[data[f"w{i}"] for i in range(n)],
            w_out=data["w_out"],
            b_out=float(data["b_out"]),
        )
