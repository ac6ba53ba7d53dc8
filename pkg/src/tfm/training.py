"""Optimizer, weight averaging, and the experiment training loop."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import baseline_fm, data, metrics, nets, objectives, sampling
from .flowcore import TimeSamplerConfig, TimePair, sample_time_pairs

Array = np.ndarray


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params: dict[str, Array], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, Array], grads: dict[str, Array], lr: float | None = None) -> None:
        self.step_count += 1
        lr = self.lr if lr is None else lr
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            m = self._m[k]
            v = self._v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class Ema:
    """Exponential moving average of the weights, used for sampling when enabled."""

    def __init__(self, params: dict[str, Array], decay: float):
        if not (0.0 < decay < 1.0):
            raise ValueError("ema decay must lie in (0, 1)")
        self.decay = decay
        self.shadow = {k: v.copy() for k, v in params.items()}

    def update(self, params: dict[str, Array]) -> None:
        d = self.decay
        for k, v in params.items():
            s = self.shadow[k]
            s *= d
            s += (1.0 - d) * v


def cosine_lr(base_lr: float, step: int, total: int, floor: float = 1e-6) -> float:
    if total <= 1:
        return base_lr
    frac = step / (total - 1)
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainState:
    """Everything a run produces before any files are written."""

    model: object  # TfmModel or FmModel
    ema_params: dict[str, Array] | None
    loss_rows: list[dict] = field(default_factory=list)
    eval_rows: list[dict] = field(default_factory=list)
    target_points: Array | None = None
    target_labels: Array | None = None

    def sampling_model(self):
        """The model to sample from: EMA weights when tracked, raw weights otherwise."""
        if self.ema_params is None:
            return self.model
        import copy

        m = copy.copy(self.model)
        m.params = {k: v.copy() for k, v in self.ema_params.items()}
        return m


def _seeds(seed: int) -> dict[str, np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    names = ("init", "data", "time", "dropout", "eval")
    return {name: np.random.default_rng(child) for name, child in zip(names, ss.spawn(len(names)))}


def train_run(
    *,
    objective: str,
    dataset: data.DatasetSpec,
    source: data.SourceSpec,
    model_kw: dict,
    loss_cfg: objectives.LossConfig,
    time_cfg: TimeSamplerConfig,
    steps: int,
    batch: int,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    ema_decay: float = 0.999,
    seed: int = 0,
    lr_schedule: str = "constant",
    dataset_n: int = 20000,
    eval_every: int = 0,
    eval_n: int = 2048,
    log_every: int = 0,
    log_stream=None,
) -> TrainState:
    """Train a transition-flow model (or the velocity baseline) from scratch.

    Fully determined by the arguments plus ``seed``; no global RNG state is touched.
    ``eval_every > 0`` records sliced-W2 snapshots at 1/2/5 sampling steps.
    """
    if objective not in ("tfm", "fm"):
        raise ValueError(f"objective must be 'tfm' or 'fm', got {objective!r}")
    rngs = _seeds(seed)
    target_points, target_labels = data.make_target(dataset, dataset_n, rngs["data"])
    n_classes = dataset.n_classes

    if objective == "tfm":
        model = nets.init_tfm_model(n_classes=n_classes, rng=rngs["init"], **model_kw)
    else:
        fm_kw = {k: v for k, v in model_kw.items() if k in ("data_dim", "hidden_sizes", "time_cfg")}
        model = baseline_fm.init_fm_model(n_classes=n_classes, rng=rngs["init"], **fm_kw)

    opt = Adam(model.params, lr=lr, beta1=betas[0], beta2=betas[1])
    ema = Ema(model.params, ema_decay) if ema_decay and 0.0 < ema_decay < 1.0 else None
    state = TrainState(model, None, target_points=target_points, target_labels=target_labels)

    for step in range(steps):
        couplings = data.sample_coupling(source, target_points, batch, rngs["data"], target_labels)
        step_lr = cosine_lr(lr, step, steps) if lr_schedule == "cosine" else lr
        if objective == "tfm":
            tt, rr = sample_time_pairs(time_cfg, batch, rngs["time"])
            pairs = [TimePair(float(a), float(b)) for a, b in zip(tt, rr)]
            report, grads = objectives.tfm_loss(model, couplings, pairs, loss_cfg, rngs["dropout"])
        else:
            tt, _ = sample_time_pairs(time_cfg, batch, rngs["time"])
            report, grads = objectives.fm_loss(model, couplings, tt.tolist(), loss_cfg, rngs["dropout"])
        opt.step(model.params, grads, lr=step_lr)
        if ema is not None:
            ema.update(model.params)

        if log_every and (step % log_every == 0 or step == steps - 1):
            row = {
                "step": step,
                "weighted_loss": report.weighted_loss,
                "raw_mse": report.raw_mse,
                "mean_weight": report.mean_weight,
                "lr": step_lr,
            }
            state.loss_rows.append(row)
            if log_stream is not None:
                print(
                    f"step {step:>7d}  loss {report.weighted_loss:.6f}  mse {report.raw_mse:.6f}",
                    file=log_stream,
                )
        if eval_every and step > 0 and step % eval_every == 0:
            state.ema_params = None if ema is None else ema.shadow
            state.eval_rows.append(_snapshot(state, source, step, eval_n, seed))

    state.ema_params = None if ema is None else ema.shadow
    if steps > 0 and eval_every:
        state.eval_rows.append(_snapshot(state, source, steps, eval_n, seed))
    return state


def _snapshot(state: TrainState, source: data.SourceSpec, step: int, n: int, seed: int) -> dict:
    """Sliced-W2 of generated vs target at a few step counts, on a fixed eval stream."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, step, 0xE7A1)))
    x0 = data.sample_source(source, n, rng)
    idx = rng.integers(0, state.target_points.shape[0], size=n)
    ref = state.target_points[idx]
    model = state.sampling_model()
    row = {"step": step}
    if isinstance(model, nets.TfmModel):
        for k in (1, 2, 5):
            final, _ = sampling.sample_multistep(model, x0, sampling.TimeGrid.uniform(k))
            row[f"sw2_steps_{k}"] = metrics.sliced_w2(final, ref, rng=np.random.default_rng(seed))
    else:
        for k in (1, 2, 5):
            final = sampling.euler_ode_sample(model, x0, k)
            row[f"sw2_steps_{k}"] = metrics.sliced_w2(final, ref, rng=np.random.default_rng(seed))
    return row
