"""Generation: transition stepping over arbitrary time grids, CFG, and an Euler baseline.

One model call per grid interval; one-step generation is the two-knot grid [0, 1].
Classifier-free guidance combines the class-conditional and null-class outputs
affinely at every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baseline_fm, nets

Array = np.ndarray


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing knots from exactly 0 to exactly 1."""

    knots: tuple[float, ...]

    def __post_init__(self):
        k = self.knots
        if len(k) < 2:
            raise ValueError("grid needs at least two knots")
        if k[0] != 0.0 or k[-1] != 1.0:
            raise ValueError(f"grid must span [0, 1] exactly, got [{k[0]}, {k[-1]}]")
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("grid knots must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return len(self.knots) - 1

    @classmethod
    def uniform(cls, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        return cls(tuple(i / n_steps for i in range(n_steps)) + (1.0,))

    @classmethod
    def parse(cls, text: str) -> "TimeGrid":
        return cls(tuple(float(tok) for tok in text.split(",") if tok.strip()))


@dataclass
class Trajectory:
    """Batch snapshots (time, states) in time order, constant batch shape."""

    states: list[tuple[float, Array]]

    def __post_init__(self):
        times = [t for t, _ in self.states]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("trajectory times must be strictly increasing")
        shapes = {s.shape for _, s in self.states}
        if len(shapes) > 1:
            raise ValueError(f"inconsistent batch shapes {shapes}")

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.states]


def cfg_forward(model: nets.TfmModel, x: Array, t: float, r: float, class_id, omega: float) -> Array:
    """Guided transition: omega * conditional + (1 - omega) * unconditional output."""
    if model.n_classes == 0:
        raise ValueError("classifier-free guidance requires a class-conditional model")
    cond = nets.forward(model, x, t, r, class_id)
    if omega == 1.0:
        return cond
    uncond = nets.forward(model, x, t, r, None)
    return omega * cond + (1.0 - omega) * uncond


def _step(model, x, t, r, class_ids, cfg_scale):
    if cfg_scale is None:
        return nets.forward(model, x, t, r, class_ids)
    return cfg_forward(model, x, t, r, class_ids, cfg_scale)


def sample_multistep(
    model: nets.TfmModel,
    x0_batch: Array,
    grid: TimeGrid,
    class_ids=None,
    cfg_scale: float | None = None,
) -> tuple[Array, Trajectory]:
    """Apply the transition map across consecutive grid knots; returns (final, trajectory)."""
    x = np.asarray(x0_batch, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"x0_batch must be [n, d], got {x.shape}")
    snapshots = [(grid.knots[0], x.copy())]
    for t, r in zip(grid.knots, grid.knots[1:]):
        x = _step(model, x, t, r, class_ids, cfg_scale)
        snapshots.append((r, x.copy()))
    return x, Trajectory(snapshots)


def sample_onestep(
    model: nets.TfmModel,
    x0_batch: Array,
    class_ids=None,
    cfg_scale: float | None = None,
) -> Array:
    final, _ = sample_multistep(model, x0_batch, TimeGrid.uniform(1), class_ids, cfg_scale)
    return final


def euler_ode_sample(vel_model: baseline_fm.FmModel, x0_batch: Array, n_steps: int) -> Array:
    """Uniform-step forward Euler on dx/dt = v(x, t) from t = 0 to 1."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x0_batch, dtype=np.float64).copy()
    h = 1.0 / n_steps
    for k in range(n_steps):
        x = x + h * baseline_fm.fm_forward(vel_model, x, k * h)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at Euler step {k}")
    return x


def composition_gap(model: nets.TfmModel, x0_batch: Array, s: float = 0.5) -> float:
    """Mean norm of X(X(x,0,s),s,1) - X(x,0,1): a reported (not enforced) diagnostic."""
    x = np.asarray(x0_batch, dtype=np.float64)
    two_hop = nets.forward(model, nets.forward(model, x, 0.0, s), s, 1.0)
    one_hop = nets.forward(model, x, 0.0, 1.0)
    return float(np.mean(np.linalg.norm(two_hop - one_hop, axis=1)))


# ------------------------------------------------------------------------ CSV dumps

def write_samples_csv(path, points: Array, labels=None) -> None:
    """One row per point: x1..xd and optionally the class label."""
    points = np.asarray(points)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"x{i + 1}" for i in range(points.shape[1])]
        writer.writerow(header + (["label"] if labels is not None else []))
        for i, row in enumerate(points):
            out = [repr(float(v)) for v in row]
            if labels is not None:
                out.append(str(int(labels[i])))
            writer.writerow(out)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        d = traj.states[0][1].shape[1] if traj.states else 0
        writer.writerow(["knot_index", "time", "point_index", *[f"x{i + 1}" for i in range(d)]])
        for k, (t, batch) in enumerate(traj.states):
            for i, row in enumerate(batch):
                writer.writerow([k, repr(float(t)), i, *[repr(float(v)) for v in row]])


def read_samples_csv(path) -> tuple[Array, Array | None]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    has_labels = header and header[-1] == "label"
    d = len(header) - (1 if has_labels else 0)
    pts = np.array([[float(v) for v in row[:d]] for row in body])
    labels = np.array([int(row[-1]) for row in body], dtype=np.intp) if has_labels else None
    return pts, labels
