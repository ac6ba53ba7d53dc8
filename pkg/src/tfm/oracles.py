"""Ground-truth marginal quantities and the gradient-equivalence check.

Two target families make the posterior over couplings computable exactly:

  * ``AtomTarget``: the target is a finite mixture of point masses under a standard
    Gaussian source, so the posterior over atoms given x_t is a softmax over Gaussian
    log-densities (evaluated in log space for stability near t = 1).
  * ``GaussianPair``: source N(0, I) and target N(m, s^2 I) are jointly Gaussian with
    x_t, so conditional expectations have closed forms.

These feed identity-residual sweeps and the numerical check that conditional and
marginal objectives share the same parameter gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Var
from .flowcore import TimeSamplerConfig, sample_time_pairs

Array = np.ndarray


class IntegrationFailure(FloatingPointError):
    """State left the finite range during ODE integration."""

    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state at step {step} (time {time:.6g})")
        self.step = step
        self.time = time


class DegenerateGradients(ValueError):
    """Cosine similarity undefined: a Monte-Carlo gradient had zero norm."""


@dataclass(frozen=True)
class AtomTarget:
    """Finite atomic target distribution with a standard Gaussian source."""

    atoms: Array  # [J, d]
    weights: Array  # [J], sums to 1

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        if atoms.shape[0] == 0:
            raise ValueError("need at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        if weights.shape != (atoms.shape[0],):
            raise ValueError("one weight per atom required")
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class GaussianPair:
    """Source N(0, I) paired with an isotropic Gaussian target N(mean, std^2 I)."""

    mean: Array
    std: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))
        if self.std <= 0:
            raise ValueError("std must be positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _check_t(t: Array) -> None:
    if np.any(t < 0.0) or np.any(t >= 1.0):
        raise ValueError("atom oracles require t in [0, 1); the posterior degenerates at t = 1")


def posterior_atoms(X: Array, t: Array, tgt: AtomTarget) -> tuple[Array, Array]:
    """Posterior over atoms and the recovered source points, batched.

    Given x_t = (1 - t) x0 + t a_j, the source point consistent with atom j is
    x0_j = (x - t a_j) / (1 - t), and the posterior weight is proportional to
    weights_j * N(x0_j; 0, I) / (1 - t)^d. Returns (w [n, J], x0 [n, J, d]).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    _check_t(t)
    one_minus = (1.0 - t)[:, None, None]  # [n, 1, 1]
    x0 = (X[:, None, :] - t[:, None, None] * tgt.atoms[None, :, :]) / one_minus  # [n, J, d]
    logw = (
        np.log(tgt.weights)[None, :]
        - 0.5 * np.sum(x0 * x0, axis=2)
        - tgt.dim * np.log(1.0 - t)[:, None]
    )
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return w, x0


def marginal_velocity_atoms_batch(X: Array, t: Array, tgt: AtomTarget) -> Array:
    w, x0 = posterior_atoms(X, t, tgt)
    vel = tgt.atoms[None, :, :] - x0  # conditional velocity per atom
    return np.sum(w[:, :, None] * vel, axis=1)


def marginal_velocity_atoms(x: Array, t: float, tgt: AtomTarget) -> Array:
    """Posterior-averaged velocity at a single state."""
    return marginal_velocity_atoms_batch(np.asarray(x)[None, :], np.array([t]), tgt)[0]


def marginal_transition_atoms_batch(X: Array, t: Array, r: Array, tgt: AtomTarget) -> Array:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if np.any(r < t) or np.any(r > 1.0):
        raise ValueError("require t <= r <= 1")
    w, x0 = posterior_atoms(X, t, tgt)
    trans = (1.0 - r)[:, None, None] * x0 + r[:, None, None] * tgt.atoms[None, :, :]
    return np.sum(w[:, :, None] * trans, axis=1)


def marginal_transition_atoms(x: Array, t: float, r: float, tgt: AtomTarget) -> Array:
    """Posterior-averaged transition state at a single state."""
    return marginal_transition_atoms_batch(np.asarray(x)[None, :], np.array([t]), np.array([r]), tgt)[0]


def _gaussian_posterior_means(X: Array, t: Array, gp: GaussianPair) -> tuple[Array, Array]:
    """E[x0 | x_t] and E[x1 | x_t] under the jointly Gaussian pair."""
    t = t[:, None]
    s2 = gp.std * gp.std
    var_t = (1.0 - t) ** 2 + t * t * s2
    centered = X - t * gp.mean[None, :]
    e0 = (1.0 - t) / var_t * centered
    e1 = gp.mean[None, :] + (t * s2) / var_t * centered
    return e0, e1


def gaussian_marginal_velocity_batch(X: Array, t: Array, gp: GaussianPair) -> Array:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    e0, e1 = _gaussian_posterior_means(X, t, gp)
    return e1 - e0


def gaussian_marginal_velocity(x: Array, t: float, gp: GaussianPair) -> Array:
    """Closed-form posterior velocity; for mean 0, std 1 this is (2t-1) x / ((1-t)^2 + t^2)."""
    return gaussian_marginal_velocity_batch(np.asarray(x)[None, :], np.array([t]), gp)[0]


def gaussian_marginal_transition(x: Array, t: float, r: float, gp: GaussianPair) -> Array:
    """Posterior expectation of the transition state, E[(1-r) x0 + r x1 | x_t]."""
    if not (0.0 <= t <= r <= 1.0):
        raise ValueError("require 0 <= t <= r <= 1")
    e0, e1 = _gaussian_posterior_means(np.asarray(x, dtype=np.float64)[None, :], np.array([t]), gp)
    return ((1.0 - r) * e0 + r * e1)[0]


def integrate_flow_map(v_fn, x: Array, t: float, r: float, n_steps: int) -> Array:
    """Classical fixed-step 4th-order integration of dx/dtau = v(x, tau) from t to r."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x, dtype=np.float64).copy()
    if r == t:
        return x
    h = (r - t) / n_steps
    for k in range(n_steps):
        tau = t + k * h
        k1 = v_fn(x, tau)
        k2 = v_fn(x + 0.5 * h * k1, tau + 0.5 * h)
        k3 = v_fn(x + 0.5 * h * k2, tau + 0.5 * h)
        k4 = v_fn(x + h * k3, tau + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationFailure(step=k, time=tau + h)
    return x


def _flat(gradients: dict[str, Array], order: list[str]) -> Array:
    return np.concatenate([gradients[k].ravel() for k in order])


def grad_equivalence_check(
    model: nets.TfmModel,
    tgt: AtomTarget,
    n_samples: int,
    pair_cfg: TimeSamplerConfig,
    rng: np.random.Generator,
    chunk: int = 4096,
) -> float:
    """Cosine similarity of Monte-Carlo gradients of the conditional vs marginal objective.

    Both objectives regress the model output toward a frozen target built from a
    transition state plus (r - t) times a directional time-derivative; the conditional
    side uses the sampled coupling's quantities, the marginal side the posterior
    averages from ``tgt``. Squared error only (no adaptive weighting): the equivalence
    holds for that divergence. Both gradients are estimated on the same x_t stream.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if model.n_classes != 0:
        raise ValueError("gradient equivalence check expects an unconditional model")
    d = model.data_dim
    if tgt.dim != d:
        raise ValueError(f"target dim {tgt.dim} != model dim {d}")

    order = sorted(model.params)
    g_cond: dict[str, Array] = {k: np.zeros_like(model.params[k]) for k in order}
    g_marg: dict[str, Array] = {k: np.zeros_like(model.params[k]) for k in order}

    remaining = n_samples
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        atom_idx = rng.choice(tgt.atoms.shape[0], size=m, p=tgt.weights)
        x1 = tgt.atoms[atom_idx]
        x0 = rng.standard_normal((m, d))
        t, r = sample_time_pairs(pair_cfg, m, rng)
        tcol = t[:, None]
        rcol = r[:, None]
        x_t = (1.0 - tcol) * x0 + tcol * x1
        v_cond = x1 - x0
        trans_cond = (1.0 - rcol) * x0 + rcol * x1
        v_marg = marginal_velocity_atoms_batch(x_t, t, tgt)
        trans_marg = marginal_transition_atoms_batch(x_t, t, r, tgt)

        tape = ad.Tape()
        pvars = {k: tape.leaf(model.params[k]) for k in order}
        X = nets.apply(
            model,
            pvars,
            Var(x_t, tangent=v_cond),
            Var(tcol, tangent=np.ones_like(tcol)),
            Var(rcol, tangent=np.zeros_like(rcol)),
            None,
        )
        # second dual pass along the marginal velocity (values only, no tape)
        _, dX_marg = ad.jvp(
            lambda xx, tt, rr: nets.apply(model, model.params, xx, tt, rr, None),
            (x_t, tcol, rcol),
            (v_marg, np.ones_like(tcol), np.zeros_like(rcol)),
        )
        tgt_cond = trans_cond + (rcol - tcol) * X.tangent
        tgt_marg = trans_marg + (rcol - tcol) * dX_marg

        loss_cond = ad.vsum(ad.square(ad.sub(X, tgt_cond)))
        loss_marg = ad.vsum(ad.square(ad.sub(X, tgt_marg)))
        table_c = tape.backward(loss_cond)
        table_m = tape.backward(loss_marg)
        for k in order:
            gc = table_c.get(pvars[k])
            gm = table_m.get(pvars[k])
            if gc is not None:
                g_cond[k] += gc
            if gm is not None:
                g_marg[k] += gm

    a = _flat(g_cond, order)
    b = _flat(g_marg, order)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateGradients("zero-norm Monte-Carlo gradient")
    return float(a @ b / (na * nb))
