"""Online GRU-FCN regressor with analytic backpropagation through time.

At each step the GRU consumes one feature vector and updates its hidden
state; a three-layer dense branch (the FCN, restricted to the current
sample) runs on the same vector, and a linear head maps
``h_t ⊕ fcn(x_t)`` to a score. Training minimizes MSE with AdamW.

Shapes: ``D`` input dim, ``H`` hidden dim, batches are ``(B, T, D)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import NumericalOverflowError
from .tensorfile import load_tensors, save_tensors

log = logging.getLogger(__name__)

GATES = ("z", "r", "h")
BUFFERS = ("in_shift", "in_scale")


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass(eq=False)
class RegressorParams:
    """Named weight tensors plus the frozen input-normalization buffers."""

    tensors: dict
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.tensors["W_z"].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.tensors["W_z"].shape[0]

    @property
    def fcn_dims(self) -> tuple:
        return tuple(self.tensors[f"fc{i}.weight"].shape[0] for i in range(3))

    @property
    def trainable(self) -> list:
        return [k for k in self.tensors if k not in BUFFERS]

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "RegressorParams":
        return RegressorParams({k: v.copy() for k, v in self.tensors.items()}, self.seed)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, fcn_dims: Sequence[int] = (16, 32, 16),
             seed: int = 0, out_bias: float = 0.0) -> "RegressorParams":
        if len(fcn_dims) != 3:
            raise ValueError("the FCN branch has exactly three layers")
        rng = np.random.default_rng(seed)
        t = {}
        for g in GATES:
            t[f"W_{g}"] = rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=(hidden_dim, input_dim))
        for g in GATES:
            t[f"U_{g}"] = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), size=(hidden_dim, hidden_dim))
        for g in GATES:
            t[f"b_{g}"] = np.zeros(hidden_dim)
        d_prev = input_dim
        for i, d in enumerate(fcn_dims):
            t[f"fc{i}.weight"] = rng.normal(0.0, np.sqrt(2.0 / d_prev), size=(d, d_prev))
            t[f"fc{i}.bias"] = np.zeros(d)
            d_prev = d
        t["out.weight"] = rng.normal(0.0, 0.1 / np.sqrt(hidden_dim + d_prev), size=hidden_dim + d_prev)
        t["out.bias"] = np.array(float(out_bias))
        t["in_shift"] = np.zeros(input_dim)
        t["in_scale"] = np.ones(input_dim)
        # float32-representable so saved weights reload bit-identically
        t = {k: v.astype(np.float32).astype(np.float64) for k, v in t.items()}
        return cls(t, seed)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int, fcn_dims: Sequence[int] = (16, 32, 16)):
        p = cls.init(input_dim, hidden_dim, fcn_dims)
        for k in p.trainable:
            p.tensors[k] = np.zeros_like(p.tensors[k])
        return p

    def save(self, path, meta: Optional[dict] = None) -> None:
        meta = dict(meta or {}, seed=self.seed, input_dim=self.input_dim,
                    hidden_dim=self.hidden_dim, fcn_dims=list(self.fcn_dims))
        save_tensors(path, self.tensors, meta)

    @classmethod
    def load(cls, path) -> "RegressorParams":
        tensors, meta = load_tensors(path)
        return cls(tensors, meta.get("seed", 0))


@dataclass
class HiddenState:
    h: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, hidden_dim: int) -> "HiddenState":
        return cls(np.zeros(hidden_dim), 0)


# ---------------------------------------------------------------------------
# single-step (online) path


def _check_dim(x, params):
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input dim {x.shape[-1]} != regressor input_dim {params.input_dim}")


def gru_step(x: np.ndarray, state: HiddenState, params: RegressorParams) -> HiddenState:
    """One Cho-style GRU update on an already-normalized input vector."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(x, params)
    if state.h.shape != (params.hidden_dim,):
        raise ValueError(f"hidden state has shape {state.h.shape}, expected ({params.hidden_dim},)")
    p, h = params.tensors, state.h
    z = _sigmoid(p["W_z"] @ x + p["U_z"] @ h + p["b_z"])
    r = _sigmoid(p["W_r"] @ x + p["U_r"] @ h + p["b_r"])
    cand = np.tanh(p["W_h"] @ x + p["U_h"] @ (r * h) + p["b_h"])
    return HiddenState((1.0 - z) * h + z * cand, state.step + 1)


def _fcn(xn, p):
    a = xn
    for i in range(3):
        a = np.maximum(a @ p[f"fc{i}.weight"].T + p[f"fc{i}.bias"], 0.0)
    return a


def predict_step(x, state: HiddenState, params: RegressorParams):
    """Consume exactly one sample; return ``(score, new_state)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(x, params)
    p = params.tensors
    xn = (x - p["in_shift"]) * p["in_scale"]
    with np.errstate(over="ignore", invalid="ignore"):
        new = gru_step(xn, state, params)
        score = float(np.concatenate([new.h, _fcn(xn, p)]) @ p["out.weight"] + p["out.bias"])
    if not np.isfinite(score):
        raise NumericalOverflowError("numerical overflow")
    return score, new


# ---------------------------------------------------------------------------
# batched (offline / training) path


def forward_batch(params: RegressorParams, X: np.ndarray):
    """Run ``(B, T, D)`` sequences from a zero hidden state.

    Returns ``(Y, cache)`` with ``Y`` of shape ``(B, T)``.
    """
    X = np.asarray(X, dtype=np.float64)
    _check_dim(X, params)
    p = params.tensors
    B, T, _ = X.shape
    H = params.hidden_dim
    xn = (X - p["in_shift"]) * p["in_scale"]
    # input projections for all steps at once
    proj = {g: xn @ p[f"W_{g}"].T + p[f"b_{g}"] for g in GATES}
    hs = np.zeros((T + 1, B, H))
    zs, rs, cands = (np.empty((T, B, H)) for _ in range(3))
    h = hs[0]
    for t in range(T):
        z = _sigmoid(proj["z"][:, t] + h @ p["U_z"].T)
        r = _sigmoid(proj["r"][:, t] + h @ p["U_r"].T)
        cand = np.tanh(proj["h"][:, t] + (r * h) @ p["U_h"].T)
        h = (1.0 - z) * h + z * cand
        zs[t], rs[t], cands[t], hs[t + 1] = z, r, cand, h
    acts = [xn]
    for i in range(3):
        acts.append(np.maximum(acts[-1] @ p[f"fc{i}.weight"].T + p[f"fc{i}.bias"], 0.0))
    w_out = p["out.weight"]
    with np.errstate(over="ignore", invalid="ignore"):
        Y = np.einsum("tbh,h->bt", hs[1:], w_out[:H]) + acts[-1] @ w_out[H:] + p["out.bias"]
    if not np.all(np.isfinite(Y)):
        raise NumericalOverflowError("numerical overflow")
    cache = dict(xn=xn, hs=hs, zs=zs, rs=rs, cands=cands, acts=acts)
    return Y, cache


def backward_batch(params: RegressorParams, cache: dict, dY: np.ndarray) -> dict:
    """Gradients of a loss w.r.t. every trainable tensor, given ``dL/dY``."""
    p = params.tensors
    H = params.hidden_dim
    xn, hs, zs, rs, cands, acts = (cache[k] for k in ("xn", "hs", "zs", "rs", "cands", "acts"))
    T = zs.shape[0]
    w_out = p["out.weight"]
    g = {}
    feat = np.concatenate([np.moveaxis(hs[1:], 0, 1), acts[-1]], axis=-1)  # (B, T, H+d3)
    g["out.weight"] = np.einsum("bt,btk->k", dY, feat)
    g["out.bias"] = np.array(dY.sum())

    # FCN branch
    da = dY[..., None] * w_out[H:]
    for i in (2, 1, 0):
        da = da * (acts[i + 1] > 0)
        g[f"fc{i}.weight"] = np.einsum("btj,btk->jk", da, acts[i])
        g[f"fc{i}.bias"] = da.sum(axis=(0, 1))
        da = da @ p[f"fc{i}.weight"]

    # GRU, backpropagated through time
    dh_head = np.moveaxis(dY, 1, 0)[..., None] * w_out[:H]  # (T, B, H)
    da_gate = {k: np.empty_like(zs) for k in GATES}
    dU = {k: np.zeros((H, H)) for k in GATES}
    dh = np.zeros_like(hs[0])
    for t in range(T - 1, -1, -1):
        dh = dh + dh_head[t]
        h_prev, z, r, cand = hs[t], zs[t], rs[t], cands[t]
        da_h = dh * z * (1.0 - cand**2)
        dz = dh * (cand - h_prev)
        d_rh = da_h @ p["U_h"]
        da_r = d_rh * h_prev * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        dU["h"] += da_h.T @ (r * h_prev)
        dU["z"] += da_z.T @ h_prev
        dU["r"] += da_r.T @ h_prev
        dh = dh * (1.0 - z) + d_rh * r + da_z @ p["U_z"] + da_r @ p["U_r"]
        da_gate["z"][t], da_gate["r"][t], da_gate["h"][t] = da_z, da_r, da_h
    for k in GATES:
        g[f"W_{k}"] = np.einsum("tbh,btd->hd", da_gate[k], xn)
        g[f"U_{k}"] = dU[k]
        g[f"b_{k}"] = da_gate[k].sum(axis=(0, 1))
    for k, v in g.items():
        if not np.all(np.isfinite(v)):
            raise NumericalOverflowError(f"numerical overflow in gradient of {k}")
    return g


def forward_sequence(params: RegressorParams, seq: np.ndarray) -> np.ndarray:
    """Offline reference: per-step scores of one ``(T, D)`` sequence."""
    Y, _ = forward_batch(params, np.asarray(seq, dtype=np.float64)[None])
    return Y[0]


def mse_loss(Y: np.ndarray, targets: np.ndarray, loss_steps: str = "all"):
    """Return ``(loss, dL/dY)`` for per-sequence targets.

    ``"all"`` averages the squared error over every step, ``"last"`` uses
    only the final step.
    """
    B, T = Y.shape
    resid = Y - np.asarray(targets, dtype=np.float64)[:, None]
    if loss_steps == "all":
        return float(np.mean(resid**2)), 2.0 * resid / (B * T)
    if loss_steps == "last":
        dY = np.zeros_like(Y)
        dY[:, -1] = 2.0 * resid[:, -1] / B
        return float(np.mean(resid[:, -1] ** 2)), dY
    raise ValueError(f"unknown loss_steps {loss_steps!r}")


def grad(params: RegressorParams, batch, loss_steps: str = "all"):
    """MSE loss and gradients over a batch of ``(sequence, target)`` pairs.

    Sequences may differ in length; each contributes equally to the mean.
    """
    if not batch:
        raise ValueError("empty batch")
    groups: dict = {}
    for seq, target in batch:
        seq = np.asarray(seq, dtype=np.float64)
        groups.setdefault(len(seq), []).append((seq, float(target)))
    total, grads = 0.0, {k: np.zeros_like(params[k]) for k in params.trainable}
    for items in groups.values():
        X = np.stack([s for s, _ in items])
        y = np.array([t for _, t in items])
        Y, cache = forward_batch(params, X)
        loss, dY = mse_loss(Y, y, loss_steps)
        w = len(items) / len(batch)
        total += w * loss
        for k, v in backward_batch(params, cache, dY * w).items():
            grads[k] += v
    return total, grads


# ---------------------------------------------------------------------------
# optimization


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 3e-3
    backbone_lr: float = 3e-4  # recorded only: extractors stay frozen
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.99)
    eps: float = 1e-8
    video_steps: int = 20
    audio_steps: int = 10
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if min(self.epochs, self.batch_size, self.video_steps, self.audio_steps) < 1:
            raise ValueError("epochs, batch_size and step counts must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.audio_steps > self.video_steps:
            raise ValueError("audio_steps must not exceed video_steps")


class AdamW:
    """Adam with decoupled weight decay over dicts of named arrays."""

    def __init__(self, lr, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.0):
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m, self.v, self.t = {}, {}, 0

    def step(self, tensors: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p = tensors[k]
            p -= self.lr * self.wd * p
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def systematic_sample(T: int, k: int, seed=None) -> list:
    """``k`` evenly spaced indices into ``range(T)`` with a random offset.

    Stride is ``T // k`` and the offset is uniform in ``[0, stride)``.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if T < k:
        raise ValueError(f"sequence too short: T={T} < k={k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    stride = T // k
    offset = int(rng.integers(0, stride))
    return [offset + i * stride for i in range(k)]


def sample_steps(seq: np.ndarray, k: Optional[int], rng) -> np.ndarray:
    """Systematically sample ``k`` steps, repeating the last step when too short."""
    if k is None:
        return seq
    if len(seq) < k:
        seq = np.concatenate([seq, np.repeat(seq[-1:], k - len(seq), axis=0)])
    return seq[systematic_sample(len(seq), k, rng)]


def fit_normalizer(params: RegressorParams, sequences: Iterable[np.ndarray]) -> None:
    """Set the input shift/scale buffers to the pooled per-feature mean and 1/std."""
    rows = np.concatenate([np.asarray(s, dtype=np.float64) for s in sequences])
    mean, std = rows.mean(axis=0), rows.std(axis=0)
    params.tensors["in_shift"] = mean
    params.tensors["in_scale"] = np.where(std > 1e-8, 1.0 / np.maximum(std, 1e-8), 1.0)


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1


def train_loop(models: dict, epoch_batches: Callable, batch_loss: Callable, cfg: TrainConfig,
               rng: np.random.Generator, val_loss: Optional[Callable] = None,
               train_log: Optional[TrainLog] = None, lr: Optional[float] = None) -> dict:
    """Generic AdamW loop over several regressors trained together.

    ``epoch_batches(rng)`` yields batches; ``batch_loss(models, batch)``
    returns ``(loss, {model_name: grads})``. With ``val_loss`` the parameters
    of the best validation epoch are returned, otherwise the final ones.
    """
    opts = {name: AdamW(lr or cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay) for name in models}
    train_log = train_log if train_log is not None else TrainLog()
    best, best_val = None, np.inf
    for epoch in range(cfg.epochs):
        losses, sizes = [], []
        for batch in epoch_batches(rng):
            loss, grads = batch_loss(models, batch)
            for name, g in grads.items():
                opts[name].step(models[name].tensors, g)
            losses.append(loss)
            sizes.append(len(batch))
        epoch_loss = float(np.average(losses, weights=sizes))
        train_log.epoch_loss.append(epoch_loss)
        msg = f"epoch {epoch + 1}/{cfg.epochs} train_mse={epoch_loss:.5f}"
        if val_loss is not None:
            v = float(val_loss(models))
            train_log.val_loss.append(v)
            msg += f" val_mse={v:.5f}"
            if v < best_val:
                best_val, train_log.best_epoch = v, epoch
                best = {k: m.copy() for k, m in models.items()}
        log.info(msg)
    if best is None:
        train_log.best_epoch = cfg.epochs - 1
        return models
    return best


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train(dataset, cfg: TrainConfig, hidden_dim: int = 16, fcn_dims: Sequence[int] = (16, 32, 16),
          steps: Optional[int] = None, loss_steps: str = "all", val=None,
          train_log: Optional[TrainLog] = None, init: Optional[RegressorParams] = None) -> RegressorParams:
    """Fit one regressor on ``(sequence (T, D), mos)`` pairs.

    Each epoch every sequence is reduced to ``steps`` systematically sampled
    steps (``None`` keeps full sequences). ``val`` is an optional held-out
    list in the same format, evaluated on full sequences for model selection.
    """
    if len(dataset) < 2:
        raise ValueError("training needs at least two samples")
    seqs = [np.asarray(s, dtype=np.float64) for s, _ in dataset]
    targets = np.array([float(m) for _, m in dataset])
    if targets.min() < 1.0 or targets.max() > 5.0:
        raise ValueError("targets must lie in [1, 5]")
    if np.ptp(targets) == 0:
        warnings.warn("all training targets are identical", RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng(cfg.seed)
    params = init.copy() if init is not None else RegressorParams.init(
        seqs[0].shape[1], hidden_dim, fcn_dims, seed=cfg.seed, out_bias=float(targets.mean()))
    if init is None:
        fit_normalizer(params, seqs)

    def epoch_batches(rng):
        sampled = [sample_steps(s, steps, rng) for s in seqs]
        for idx in _batches(len(seqs), cfg.batch_size, rng):
            yield [(sampled[i], targets[i]) for i in idx]

    def batch_loss(models, batch):
        loss, g = grad(models["r"], batch, loss_steps)
        return loss, {"r": g}

    def val_fn(models):
        return grad_free_loss(models["r"], val, loss_steps)

    return train_loop({"r": params}, epoch_batches, batch_loss, cfg, rng, val_fn if val else None,
                      train_log)["r"]


def grad_free_loss(params: RegressorParams, data, loss_steps: str = "all") -> float:
    total = 0.0
    for seq, target in data:
        Y = forward_sequence(params, seq)[None]
        total += mse_loss(Y, [target], loss_steps)[0]
    return total / len(data)
