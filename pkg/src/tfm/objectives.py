"""Training losses: the transition-flow objective, the velocity baseline, adaptive weights.

The transition-flow target for a coupled pair is the conditional transition state plus
``(r - t)`` times the model's own time-derivative along the conditional velocity. The
derivative comes from the dual (forward-mode) stream of the same forward pass and the
whole target is stop-gradiented, so parameter gradients flow only through the model's
primal output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import baseline_fm, nets
from .autodiff import Var
from .flowcore import CouplingSample, TimePair

Array = np.ndarray

LOSS_ABORT_THRESHOLD = 1.0e6


class TrainingDivergence(FloatingPointError):
    """Loss became non-finite or exploded; carries a diagnostic dict."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class LossConfig:
    """Adaptive-weight exponent p, stabilizer c, and class-dropout rate for guidance."""

    power_p: float = 1.0
    stabilizer_c: float = 1.0e-3
    cfg_dropout: float = 0.1

    def __post_init__(self):
        if self.power_p < 0:
            raise ValueError("power_p must be >= 0")
        if self.stabilizer_c <= 0:
            raise ValueError("stabilizer_c must be positive")
        if not (0.0 <= self.cfg_dropout <= 1.0):
            raise ValueError("cfg_dropout must lie in [0, 1]")


@dataclass(frozen=True)
class LossReport:
    weighted_loss: float
    raw_mse: float
    mean_weight: float
    target_norm: float

    def __post_init__(self):
        vals = (self.weighted_loss, self.raw_mse, self.mean_weight, self.target_norm)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"loss report must be finite, got {vals}")
        if self.weighted_loss < 0:
            raise ValueError("weighted loss must be nonnegative")


def adaptive_weight(delta_sq: float, cfg: LossConfig) -> float:
    """w = 1 / (|delta|^2 + c)^p. Applied stop-gradiented: contribution = sg(w) * |delta|^2."""
    if delta_sq < 0:
        raise ValueError("delta_sq must be nonnegative")
    return float((delta_sq + cfg.stabilizer_c) ** (-cfg.power_p))


def _weights(delta_sq: Array, cfg: LossConfig) -> Array:
    return (delta_sq + cfg.stabilizer_c) ** (-cfg.power_p)


def _stack_batch(batch: Sequence[CouplingSample], data_dim: int) -> tuple[Array, Array, list]:
    if not batch:
        raise ValueError("batch must be nonempty")
    x0 = np.stack([np.asarray(s.x0, dtype=np.float64) for s in batch])
    x1 = np.stack([np.asarray(s.x1, dtype=np.float64) for s in batch])
    if x0.shape[1] != data_dim:
        raise ValueError(f"samples have dim {x0.shape[1]}, model expects {data_dim}")
    return x0, x1, [s.label for s in batch]


def _training_onehot(
    labels: list,
    n_classes: int,
    dropout: float,
    rng: np.random.Generator | None,
) -> Array | None:
    """Per-sample one-hot rows with labels dropped to the null class at rate ``dropout``."""
    if n_classes == 0:
        return None
    if any(lab is None for lab in labels):
        raise ValueError("conditional model requires a label on every coupling sample")
    ids = np.asarray(labels, dtype=np.intp)
    if np.any(ids < 0) or np.any(ids >= n_classes):
        raise IndexError(f"label out of range [0, {n_classes})")
    if dropout > 0.0:
        if rng is None:
            raise ValueError("class dropout requires an rng")
        ids = np.where(rng.random(ids.shape[0]) < dropout, n_classes, ids)
    return nets.class_onehot(ids, n_classes, ids.shape[0])


def _weighted_objective(delta: Var, cfg: LossConfig) -> tuple[Var, Array, Array]:
    """Mean over the batch of sg(w_i) * |delta_i|^2; returns (loss, per-sample sq, weights)."""
    sq = ad.vsum(ad.square(delta), axis=1)
    w = _weights(sq.value, cfg)
    loss = ad.vmean(ad.mul(sq, w))
    return loss, sq.value, w


def _guard(loss: float, context: dict) -> None:
    if not np.isfinite(loss) or loss > LOSS_ABORT_THRESHOLD:
        raise TrainingDivergence(f"training diverged: loss={loss!r}", context)


def tfm_loss(
    model: nets.TfmModel,
    batch: Sequence[CouplingSample],
    pairs: Sequence[TimePair],
    cfg: LossConfig,
    rng: np.random.Generator | None = None,
) -> tuple[LossReport, dict[str, Array]]:
    """Transition-flow loss and parameter gradients for one batch.

    Per sample: x_t interpolates the pair at t, the dual stream carries the tangent
    (x1 - x0, 1, 0), and the frozen target is the conditional transition state at r
    plus (r - t) times the resulting time-derivative.
    """
    x0, x1, labels = _stack_batch(batch, model.data_dim)
    if len(pairs) != len(batch):
        raise ValueError("need one time pair per sample")
    t = np.array([p.t for p in pairs])[:, None]
    r = np.array([p.r for p in pairs])[:, None]

    x_t = (1.0 - t) * x0 + t * x1
    v = x1 - x0
    x_trans = (1.0 - r) * x0 + r * x1
    onehot = _training_onehot(labels, model.n_classes, cfg.cfg_dropout, rng)

    tape = ad.Tape()
    pvars = {k: tape.leaf(p) for k, p in model.params.items()}
    X = nets.apply(
        model,
        pvars,
        Var(x_t, tangent=v),
        Var(t, tangent=np.ones_like(t)),
        Var(r, tangent=np.zeros_like(r)),
        onehot,
    )
    dX_dt = X.tangent
    target = x_trans + (r - t) * dX_dt  # constant: built from values and the dual stream

    loss, sq, w = _weighted_objective(ad.sub(X, target), cfg)
    _guard(
        float(loss.value),
        {
            "objective": "tfm",
            "raw_mse": float(np.mean(sq)),
            "max_delta_sq": float(np.max(sq)),
            "max_abs_target": float(np.max(np.abs(target))),
        },
    )
    grads_table = tape.backward(loss)
    grads = {k: grads_table.get(pv, np.zeros_like(pv.value)) for k, pv in pvars.items()}
    report = LossReport(
        weighted_loss=float(loss.value),
        raw_mse=float(np.mean(sq)),
        mean_weight=float(np.mean(w)),
        target_norm=float(np.mean(np.linalg.norm(target, axis=1))),
    )
    return report, grads


def fm_loss(
    model: baseline_fm.FmModel,
    batch: Sequence[CouplingSample],
    times: Sequence[float],
    cfg: LossConfig,
    rng: np.random.Generator | None = None,
) -> tuple[LossReport, dict[str, Array]]:
    """Velocity-regression baseline: v(x_t, t) against the constant target x1 - x0."""
    x0, x1, labels = _stack_batch(batch, model.data_dim)
    if len(times) != len(batch):
        raise ValueError("need one time per sample")
    t = np.asarray(times, dtype=np.float64)[:, None]

    x_t = (1.0 - t) * x0 + t * x1
    target = x1 - x0
    onehot = _training_onehot(labels, model.n_classes, cfg.cfg_dropout, rng)

    tape = ad.Tape()
    pvars = {k: tape.leaf(p) for k, p in model.params.items()}
    vhat = baseline_fm.fm_apply(model, pvars, Var(x_t), Var(t), onehot)

    loss, sq, w = _weighted_objective(ad.sub(vhat, target), cfg)
    _guard(
        float(loss.value),
        {"objective": "fm", "raw_mse": float(np.mean(sq)), "max_delta_sq": float(np.max(sq))},
    )
    grads_table = tape.backward(loss)
    grads = {k: grads_table.get(pv, np.zeros_like(pv.value)) for k, pv in pvars.items()}
    report = LossReport(
        weighted_loss=float(loss.value),
        raw_mse=float(np.mean(sq)),
        mean_weight=float(np.mean(w)),
        target_norm=float(np.mean(np.linalg.norm(target, axis=1))),
    )
    return report, grads


def identity_residual(
    model: nets.TfmModel,
    x_t: Array,
    pair: TimePair,
    marginal_transition: Array,
    marginal_velocity: Array,
) -> float:
    """Self-consistency gap |X(x,t,r) - transition - (r - t) dX/dt| at one state.

    The time-derivative is taken along the supplied marginal velocity, so the caller
    chooses the reference dynamics (oracle marginals, or conditional quantities for a
    degenerate coupling).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    mt = np.asarray(marginal_transition, dtype=np.float64)
    mv = np.asarray(marginal_velocity, dtype=np.float64)
    tcol = np.array([[pair.t]])
    rcol = np.array([[pair.r]])
    X, dX_dt = ad.jvp(
        lambda xx, tt, rr: nets.apply(model, model.params, xx, tt, rr, None),
        (x_t[None, :], tcol, rcol),
        (mv[None, :], np.ones((1, 1)), np.zeros((1, 1))),
    )
    resid = X[0] - mt - (pair.r - pair.t) * dX_dt[0]
    return float(np.linalg.norm(resid))
