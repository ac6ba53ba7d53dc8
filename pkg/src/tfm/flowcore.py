"""Interpolants, conditional targets, and time-pair sampling: the kinematic layer.

Everything here is closed form for the endpoint-conditioned setting: the state at time
``t`` interpolates the coupled endpoints, the conditional velocity is the endpoint
difference, and the conditional transition state is the interpolant evaluated at the
later time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

Array = np.ndarray

_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Interpolation schedule x_t = alpha(t) x0 + beta(t) x1 with endpoint pinning."""

    name: str
    alpha: Callable[[float], float]
    beta: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    beta_dot: Callable[[float], float]

    def __post_init__(self):
        checks = (
            ("alpha(0)", self.alpha(0.0), 1.0),
            ("beta(0)", self.beta(0.0), 0.0),
            ("alpha(1)", self.alpha(1.0), 0.0),
            ("beta(1)", self.beta(1.0), 1.0),
        )
        for label, got, want in checks:
            if abs(got - want) > _BOUNDARY_TOL:
                raise ValueError(f"schedule {self.name!r}: {label}={got!r}, expected {want}")


def linear_schedule() -> Schedule:
    """alpha = 1-t, beta = t; the default (and only trained) schedule."""
    return Schedule("linear", lambda t: 1.0 - t, lambda t: t, lambda t: -1.0, lambda t: 1.0)


def cosine_schedule() -> Schedule:
    """alpha = cos(pi t / 2), beta = sin(pi t / 2); exercised by unit tests only."""
    h = math.pi / 2.0
    return Schedule(
        "cosine",
        lambda t: math.cos(h * t),
        lambda t: math.sin(h * t),
        lambda t: -h * math.sin(h * t),
        lambda t: h * math.cos(h * t),
    )


@dataclass(frozen=True)
class TimePair:
    """An ordered transition interval 0 <= t <= r <= 1."""

    t: float
    r: float

    def __post_init__(self):
        if not (0.0 <= self.t <= self.r <= 1.0):
            raise ValueError(f"require 0 <= t <= r <= 1, got t={self.t}, r={self.r}")


class TimeSamplerKind(Enum):
    UNIFORM = "uniform"
    LOGNORM = "lognorm"


@dataclass(frozen=True)
class TimeSamplerConfig:
    """How (t, r) pairs are drawn during training.

    ``lognorm`` squashes a normal draw through the logistic function. The offset draw
    ``d`` uses the same family; ``r = t + d (1 - t)`` keeps the pair ordered by
    construction. Separate (mu_d, sigma_d) may be given but default to the t-draw's.
    """

    kind: TimeSamplerKind = TimeSamplerKind.LOGNORM
    mu: float = -0.4
    sigma: float = 1.0
    mu_d: float | None = None
    sigma_d: float | None = None

    def __post_init__(self):
        if self.kind is TimeSamplerKind.LOGNORM:
            if self.sigma <= 0 or (self.sigma_d is not None and self.sigma_d <= 0):
                raise ValueError("lognorm sampler requires sigma > 0")

    @property
    def offset_mu(self) -> float:
        return self.mu if self.mu_d is None else self.mu_d

    @property
    def offset_sigma(self) -> float:
        return self.sigma if self.sigma_d is None else self.sigma_d


@dataclass(frozen=True)
class CouplingSample:
    """One draw (x0, x1) from the independent source/target coupling."""

    x0: Array
    x1: Array
    label: int | None = None

    def __post_init__(self):
        if np.shape(self.x0) != np.shape(self.x1):
            raise ValueError(f"coupling endpoints disagree: {np.shape(self.x0)} vs {np.shape(self.x1)}")


def interpolate(x0: Array, x1: Array, t: float, sched: Schedule) -> Array:
    """State on the schedule path: alpha(t) x0 + beta(t) x1."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    return sched.alpha(t) * x0 + sched.beta(t) * x1


def conditional_velocity(x0: Array, x1: Array, t: float, sched: Schedule) -> Array:
    """Path time-derivative given the endpoints; x1 - x0 for the linear schedule."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    return sched.alpha_dot(t) * x0 + sched.beta_dot(t) * x1


def conditional_transition(x0: Array, x1: Array, r: float, sched: Schedule) -> Array:
    """Endpoint-conditioned transition state at time r (independent of the start time)."""
    return interpolate(x0, x1, r, sched)


def _squash(kind: TimeSamplerKind, mu: float, sigma: float, n: int, rng: np.random.Generator) -> Array:
    if kind is TimeSamplerKind.UNIFORM:
        return rng.random(n)
    g = rng.normal(mu, sigma, size=n)
    return 1.0 / (1.0 + np.exp(-g))


def sample_time_pairs(cfg: TimeSamplerConfig, n: int, rng: np.random.Generator) -> tuple[Array, Array]:
    """Vectorized draw of n ordered pairs; returns (t, r) arrays."""
    t = _squash(cfg.kind, cfg.mu, cfg.sigma, n, rng)
    d = _squash(cfg.kind, cfg.offset_mu, cfg.offset_sigma, n, rng)
    r = t + d * (1.0 - t)
    return t, r


def sample_time_pair(cfg: TimeSamplerConfig, rng: np.random.Generator) -> TimePair:
    t, r = sample_time_pairs(cfg, 1, rng)
    return TimePair(float(t[0]), float(r[0]))


def u_from_X(X_out: Array, x_t: Array, pair: TimePair) -> Array:
    """Average-velocity view of a transition output: (X - x_t) / (r - t).

    Undefined on the diagonal; callers must branch on r == t themselves.
    """
    if pair.r <= pair.t:
        raise ZeroDivisionError("u_from_X requires r > t strictly")
    X_out = np.asarray(X_out, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if X_out.shape != x_t.shape:
        raise ValueError(f"shape mismatch: {X_out.shape} vs {x_t.shape}")
    return (X_out - x_t) / (pair.r - pair.t)
