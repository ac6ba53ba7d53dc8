"""Velocity-head baseline: the same MLP stack conditioned on t only.

Shares embedding and initialization code with the transition-flow network so that
objective comparisons are architecture-controlled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Var

Array = np.ndarray


@dataclass
class FmModel:
    params: dict[str, Array]
    data_dim: int
    hidden_sizes: tuple[int, ...]
    time_cfg: nets.TimeEmbedConfig
    n_classes: int = 0

    @property
    def feature_dim(self) -> int:
        return self.data_dim + self.time_cfg.dim

    def n_params(self) -> int:
        return sum(int(p.size) for p in self.params.values())


def init_fm_model(
    data_dim: int = 2,
    hidden_sizes: tuple[int, ...] = (256, 256, 256, 256),
    time_cfg: nets.TimeEmbedConfig = nets.TimeEmbedConfig(),
    n_classes: int = 0,
    rng: np.random.Generator | None = None,
) -> FmModel:
    rng = rng if rng is not None else np.random.default_rng(0)
    feature_dim = data_dim + time_cfg.dim
    params = nets.init_params(data_dim, tuple(hidden_sizes), feature_dim, n_classes, rng)
    return FmModel(params, data_dim, tuple(hidden_sizes), time_cfg, n_classes)


def fm_apply(
    model: FmModel,
    params: Mapping[str, Var | Array],
    x: Var,
    t: Var,
    onehot: Array | None = None,
) -> Var:
    feats = ad.concat([x, nets._embed_var(t, model.time_cfg)], axis=1)
    return nets.mlp_stack(params, feats, onehot, len(model.hidden_sizes))


def fm_forward(model: FmModel, x: Array, t: float, class_id=None) -> Array:
    """Velocity estimate v(x, t); accepts a single state [d] or a batch [n, d]."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"require t in [0, 1], got {t}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != model.data_dim:
        raise ValueError(f"state must be [{model.data_dim}] or [n, {model.data_dim}], got {x.shape}")
    n = xb.shape[0]
    if model.n_classes > 0:
        onehot = nets.class_onehot(class_id, model.n_classes, n)
    elif class_id is not None:
        raise ValueError("model is unconditional; class_id must be absent")
    else:
        onehot = None
    out = fm_apply(model, model.params, Var(xb), Var(np.full((n, 1), float(t))), onehot)
    return out.value[0] if single else out.value
