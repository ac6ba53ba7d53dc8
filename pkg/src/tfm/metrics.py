"""Distributional metrics and identity-residual sweeps.

Sliced Wasserstein-2 stands in for heavyweight feature-space metrics at this scale:
project both clouds onto random unit directions, match quantile functions on a fixed
grid, average the squared 1D transport costs over directions, and report the root.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import oracles
from .flowcore import TimePair
from .objectives import identity_residual

Array = np.ndarray

QUANTILE_GRID = 512
DEFAULT_PROJECTIONS = 256


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.name!r} is not finite: {self.value}")


def sliced_w2(A: Array, B: Array, n_projections: int = DEFAULT_PROJECTIONS, rng=None) -> float:
    """Root of the mean (over random directions) squared 1D Wasserstein-2 distance."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("sliced_w2 requires nonempty point sets")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    d = A.shape[1]
    dirs = rng.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    q = (np.arange(QUANTILE_GRID) + 0.5) / QUANTILE_GRID
    qa = np.quantile(A @ dirs.T, q, axis=0)  # [grid, P]
    qb = np.quantile(B @ dirs.T, q, axis=0)
    w2sq = np.mean((qa - qb) ** 2, axis=0)
    return float(np.sqrt(np.mean(w2sq)))


def _oracle_marginals(oracle, X: Array, t: float, r: float) -> tuple[Array, Array]:
    n = X.shape[0]
    tv = np.full(n, t)
    if isinstance(oracle, oracles.AtomTarget):
        vel = oracles.marginal_velocity_atoms_batch(X, tv, oracle)
        trans = oracles.marginal_transition_atoms_batch(X, tv, np.full(n, r), oracle)
        return vel, trans
    if isinstance(oracle, oracles.GaussianPair):
        vel = oracles.gaussian_marginal_velocity_batch(X, tv, oracle)
        trans = np.stack([oracles.gaussian_marginal_transition(x, t, r, oracle) for x in X])
        return vel, trans
    raise TypeError(f"unsupported oracle {type(oracle).__name__}")


def residual_sweep(model, oracle, t_grid, r_grid, x_samples: Array) -> Array:
    """Mean identity residual over x_samples at each (t, r) cell; NaN where r < t.

    Atom oracles exclude t = 1 (degenerate posterior); keep the grid below 1.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    r_grid = np.asarray(r_grid, dtype=np.float64)
    X = np.atleast_2d(np.asarray(x_samples, dtype=np.float64))
    out = np.full((t_grid.size, r_grid.size), np.nan)
    for i, t in enumerate(t_grid):
        for j, r in enumerate(r_grid):
            if r < t:
                continue
            vel, trans = _oracle_marginals(oracle, X, float(t), float(r))
            pair = TimePair(float(t), float(r))
            vals = [
                identity_residual(model, X[k], pair, trans[k], vel[k])
                for k in range(X.shape[0])
            ]
            out[i, j] = float(np.mean(vals))
    return out


def transition_gap_rows(gp: oracles.GaussianPair, t: float, r: float, xs: Array, n_ode_steps: int = 200) -> list[dict]:
    """Side-by-side view of the two transition-state notions for a Gaussian pair.

    The posterior expectation E[(1-r) x0 + r x1 | x_t] and the ODE-integrated state
    along the posterior velocity generally differ; both are reported, neither is
    asserted against the other.
    """
    rows = []
    for x in np.atleast_2d(np.asarray(xs, dtype=np.float64)):
        cond_exp = oracles.gaussian_marginal_transition(x, t, r, gp)
        ode = oracles.integrate_flow_map(
            lambda state, tau: oracles.gaussian_marginal_velocity(state, tau, gp),
            x,
            t,
            r,
            n_ode_steps,
        )
        rows.append(
            {
                "t": t,
                "r": r,
                "x": x.tolist(),
                "posterior_expectation": cond_exp.tolist(),
                "ode_integrated": ode.tolist(),
                "gap": float(np.linalg.norm(cond_exp - ode)),
            }
        )
    return rows


def write_residual_csv(path, grid: Array, t_grid, r_grid) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "r", "mean_residual"])
        for i, t in enumerate(t_grid):
            for j, r in enumerate(r_grid):
                writer.writerow([repr(float(t)), repr(float(r)), repr(float(grid[i, j]))])


def write_metrics_csv(path, reports: list[MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "value", "n_samples", "seed"])
        for rep in reports:
            writer.writerow([rep.name, repr(rep.value), rep.n_samples, rep.seed])
