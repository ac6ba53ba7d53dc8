"""Time-conditioned MLP for the transition flow X(x, t, r), with conditioning variants.

The network sees the state plus sinusoidal embeddings of time quantities chosen by the
conditioning mode. In RESIDUAL parameterization the model output is
``x + (r - t) * net(...)``, which pins X(x, t, t) = x exactly and makes the raw net
output the average velocity over the interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Var

Array = np.ndarray


@dataclass(frozen=True)
class TimeEmbedConfig:
    dim: int = 64
    max_period: float = 1.0e4

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2 != 0:
            raise ValueError(f"embedding dim must be even and positive, got {self.dim}")
        if self.max_period <= 0:
            raise ValueError("max_period must be positive")


class ConditioningMode(Enum):
    """Which time quantities get embedded and concatenated to the state."""

    T_R = "t_r"
    T_DT = "t_dt"
    T_R_DT = "t_r_dt"
    DT_ONLY = "dt_only"


class ParamMode(Enum):
    DIRECT = "direct"
    RESIDUAL = "residual"


_N_EMBEDS = {
    ConditioningMode.T_R: 2,
    ConditioningMode.T_DT: 2,
    ConditioningMode.T_R_DT: 3,
    ConditioningMode.DT_ONLY: 1,
}


@dataclass
class TfmModel:
    """Transition-flow network parameters plus the metadata that fixes its shape."""

    params: dict[str, Array]
    data_dim: int
    hidden_sizes: tuple[int, ...]
    time_cfg: TimeEmbedConfig
    cond_mode: ConditioningMode
    param_mode: ParamMode
    n_classes: int = 0

    @property
    def feature_dim(self) -> int:
        return self.data_dim + _N_EMBEDS[self.cond_mode] * self.time_cfg.dim

    def n_params(self) -> int:
        return sum(int(p.size) for p in self.params.values())


@lru_cache(maxsize=None)
def _frequencies(dim: int, max_period: float) -> Array:
    k = np.arange(dim // 2, dtype=np.float64)
    return max_period ** (-2.0 * k / dim)


@lru_cache(maxsize=None)
def _interleave(dim: int) -> Array:
    # maps [sin block | cos block] columns into sin/cos-alternating layout
    half = dim // 2
    perm = np.zeros((dim, dim), dtype=np.float64)
    for k in range(half):
        perm[k, 2 * k] = 1.0
        perm[half + k, 2 * k + 1] = 1.0
    return perm


def time_embed(s: float, cfg: TimeEmbedConfig) -> Array:
    """Sinusoidal embedding: entry 2k = sin(s * w_k), entry 2k+1 = cos(s * w_k)."""
    arg = float(s) * _frequencies(cfg.dim, cfg.max_period)
    out = np.empty(cfg.dim, dtype=np.float64)
    out[0::2] = np.sin(arg)
    out[1::2] = np.cos(arg)
    return out


def _embed_var(s: Var, cfg: TimeEmbedConfig) -> Var:
    """The same embedding over the op set, for an [n, 1] column of times."""
    freqs = _frequencies(cfg.dim, cfg.max_period)[None, :]
    arg = ad.mul(s, freqs)
    block = ad.concat([ad.sin(arg), ad.cos(arg)], axis=1)
    return ad.matmul(block, _interleave(cfg.dim))


def init_params(
    data_dim: int,
    hidden_sizes: tuple[int, ...],
    feature_dim: int,
    n_classes: int,
    rng: np.random.Generator,
) -> dict[str, Array]:
    """Uniform fan-in init; zero output layer so the initial map carries no correction."""
    if not hidden_sizes:
        raise ValueError("need at least one hidden layer")
    params: dict[str, Array] = {}
    fan_in = feature_dim
    for i, h in enumerate(hidden_sizes):
        lim = np.sqrt(1.0 / fan_in)
        params[f"w{i}"] = rng.uniform(-lim, lim, size=(fan_in, h))
        params[f"b{i}"] = np.zeros(h)
        fan_in = h
    params["w_out"] = np.zeros((fan_in, data_dim))
    params["b_out"] = np.zeros(data_dim)
    if n_classes > 0:
        # one extra row for the null class
        params["class_embed"] = np.zeros((n_classes + 1, hidden_sizes[0]))
    return params


def init_tfm_model(
    data_dim: int = 2,
    hidden_sizes: tuple[int, ...] = (256, 256, 256, 256),
    time_cfg: TimeEmbedConfig = TimeEmbedConfig(),
    cond_mode: ConditioningMode = ConditioningMode.T_DT,
    param_mode: ParamMode = ParamMode.RESIDUAL,
    n_classes: int = 0,
    rng: np.random.Generator | None = None,
) -> TfmModel:
    rng = rng if rng is not None else np.random.default_rng(0)
    feature_dim = data_dim + _N_EMBEDS[cond_mode] * time_cfg.dim
    params = init_params(data_dim, tuple(hidden_sizes), feature_dim, n_classes, rng)
    return TfmModel(params, data_dim, tuple(hidden_sizes), time_cfg, cond_mode, param_mode, n_classes)


def mlp_stack(
    params: Mapping[str, Var | Array],
    feats: Var,
    onehot: Array | None,
    n_hidden: int,
) -> Var:
    """Shared MLP body: SiLU hidden layers, linear head, optional additive class embed."""
    h = ad.add(ad.matmul(feats, params["w0"]), params["b0"])
    if onehot is not None:
        h = ad.add(h, ad.matmul(onehot, params["class_embed"]))
    h = ad.silu(h)
    for i in range(1, n_hidden):
        h = ad.silu(ad.add(ad.matmul(h, params[f"w{i}"]), params[f"b{i}"]))
    return ad.add(ad.matmul(h, params["w_out"]), params["b_out"])


def apply(
    model: TfmModel,
    params: Mapping[str, Var | Array],
    x: Var,
    t: Var,
    r: Var,
    onehot: Array | None = None,
) -> Var:
    """Engine-level forward on batched Vars: x [n, d], t and r [n, 1] columns.

    ``params`` may hold tape-bound Vars (training) or plain arrays (evaluation);
    tangents attached to x/t/r propagate to the output either way.
    """
    cfg = model.time_cfg
    mode = model.cond_mode
    if mode is ConditioningMode.T_R:
        embeds = [_embed_var(t, cfg), _embed_var(r, cfg)]
    elif mode is ConditioningMode.T_DT:
        embeds = [_embed_var(t, cfg), _embed_var(ad.sub(r, t), cfg)]
    elif mode is ConditioningMode.T_R_DT:
        embeds = [_embed_var(t, cfg), _embed_var(r, cfg), _embed_var(ad.sub(r, t), cfg)]
    else:
        embeds = [_embed_var(ad.sub(r, t), cfg)]
    feats = ad.concat([x] + embeds, axis=1)
    net = mlp_stack(params, feats, onehot, len(model.hidden_sizes))
    if model.param_mode is ParamMode.RESIDUAL:
        return ad.add(x, ad.mul(ad.sub(r, t), net))
    return net


def class_onehot(class_id, n_classes: int, n: int) -> Array:
    """One-hot rows over n_classes + 1 columns; None selects the null row."""
    ids = np.full(n, n_classes, dtype=np.intp) if class_id is None else np.atleast_1d(np.asarray(class_id))
    if ids.shape == (1,) and n > 1:
        ids = np.repeat(ids, n)
    if ids.shape != (n,):
        raise ValueError(f"class ids shape {ids.shape} does not match batch {n}")
    if np.any(ids < 0) or np.any(ids > n_classes):
        raise IndexError(f"class id out of range [0, {n_classes}]")
    onehot = np.zeros((n, n_classes + 1), dtype=np.float64)
    onehot[np.arange(n), ids] = 1.0
    return onehot


def forward(model: TfmModel, x: Array, t: float, r: float, class_id=None) -> Array:
    """Evaluate X(x, t, r); accepts a single state [d] or a batch [n, d]."""
    if not (0.0 <= t <= r <= 1.0):
        raise ValueError(f"require 0 <= t <= r <= 1, got t={t}, r={r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != model.data_dim:
        raise ValueError(f"state must be [{model.data_dim}] or [n, {model.data_dim}], got {x.shape}")
    n = xb.shape[0]
    if model.n_classes > 0:
        onehot = class_onehot(class_id, model.n_classes, n)
    elif class_id is not None:
        raise ValueError("model is unconditional; class_id must be absent")
    else:
        onehot = None
    tcol = np.full((n, 1), float(t))
    rcol = np.full((n, 1), float(r))
    out = apply(model, model.params, Var(xb), Var(tcol), Var(rcol), onehot)
    return out.value[0] if single else out.value
