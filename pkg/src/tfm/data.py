"""2D synthetic datasets and the independent-coupling batch sampler.

Letter targets come from a built-in 5x7 blocky font rasterized onto a 64x64 grid and
rejection-sampled uniformly over the inked cells; shaped targets are mean-centered and
rescaled so the largest coordinate magnitude equals the stated scale. Plain Gaussian
targets are left untouched (they back the closed-form checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .flowcore import CouplingSample

Array = np.ndarray

RASTER_SIZE = 64
DEFAULT_SCALE = 2.0


class DatasetName(Enum):
    LETTER_GLYPH = "letter_glyph"
    GAUSSIAN_MIXTURE = "gaussian_mixture"
    MOONS = "moons"
    CHECKERBOARD = "checkerboard"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class DatasetSpec:
    name: DatasetName
    params: Mapping[str, object] = field(default_factory=dict)
    n_classes: int = 0


class SourceKind(Enum):
    STD_GAUSSIAN = "std_gaussian"
    RING = "ring"


@dataclass(frozen=True)
class SourceSpec:
    kind: SourceKind = SourceKind.STD_GAUSSIAN
    radius: float = 2.0
    width: float = 0.25

    def __post_init__(self):
        if self.kind is SourceKind.RING and self.radius <= 0:
            raise ValueError("ring radius must be positive")


# 5x7 font, one string per row, '#' marks an inked cell
_FONT: dict[str, tuple[str, ...]] = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
}


def glyph_mask(text: str, size: int = RASTER_SIZE) -> Array:
    """Boolean raster of ``text`` (A-Z), letters side by side with one empty column."""
    text = text.upper()
    if not text:
        raise ValueError("empty glyph string")
    for ch in text:
        if ch not in _FONT:
            raise ValueError(f"glyph {ch!r} not in the built-in font (A-Z)")
    cols = 5 * len(text) + (len(text) - 1)
    cell = min(size // cols, size // 7)
    if cell < 1:
        raise ValueError(f"glyph string {text!r} does not fit a {size}x{size} raster")
    mask = np.zeros((size, size), dtype=bool)
    y0 = (size - 7 * cell) // 2
    x0 = (size - cols * cell) // 2
    for gi, ch in enumerate(text):
        gx = x0 + gi * 6 * cell
        for row, line in enumerate(_FONT[ch]):
            for col, mark in enumerate(line):
                if mark == "#":
                    ys = y0 + row * cell
                    xs = gx + col * cell
                    mask[ys : ys + cell, xs : xs + cell] = True
    if not mask.any():
        raise ValueError(f"glyph raster for {text!r} is empty")
    return mask


def _sample_mask(mask: Array, n: int, rng: np.random.Generator) -> Array:
    """Uniform points over the inked region via rejection against the full raster."""
    size = mask.shape[0]
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        m = max(4 * (n - filled), 64)
        u = rng.uniform(0.0, size, size=m)
        v = rng.uniform(0.0, size, size=m)
        keep = mask[v.astype(np.intp), u.astype(np.intp)]
        pts = np.column_stack([u[keep], size - v[keep]])  # flip vertically: row 0 is the top
        take = min(n - filled, pts.shape[0])
        out[filled : filled + take] = pts[:take]
        filled += take
    return out


def _normalize(points: Array, scale: float) -> Array:
    points = points - points.mean(axis=0)
    peak = np.max(np.abs(points))
    if peak > 0:
        points = points * (scale / peak)
    return points


def make_target(spec: DatasetSpec, n: int, rng: np.random.Generator) -> tuple[Array, Array | None]:
    """Draw n target points (and per-component labels where the family defines them)."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = dict(spec.params)
    scale = float(p.pop("scale", DEFAULT_SCALE))
    name = spec.name

    if name is DatasetName.LETTER_GLYPH:
        glyph = str(p.pop("glyph", "M"))
        _reject_unknown(name, p)
        pts = _normalize(_sample_mask(glyph_mask(glyph), n, rng), scale)
        return pts, None

    if name is DatasetName.GAUSSIAN_MIXTURE:
        k = int(p.pop("components", 8))
        radius = float(p.pop("radius", 2.0))
        std = float(p.pop("std", 0.25))
        _reject_unknown(name, p)
        if spec.n_classes not in (0, k):
            raise ValueError(f"n_classes must be 0 or {k} for a {k}-component mixture")
        ang = 2.0 * np.pi * np.arange(k) / k
        centers = radius * np.column_stack([np.cos(ang), np.sin(ang)])
        comp = rng.integers(0, k, size=n)
        pts = centers[comp] + std * rng.standard_normal((n, 2))
        pts = _normalize(pts, scale)
        return pts, (comp if spec.n_classes else None)

    if name is DatasetName.MOONS:
        noise = float(p.pop("noise", 0.05))
        _reject_unknown(name, p)
        if spec.n_classes not in (0, 2):
            raise ValueError("moons defines 2 classes")
        half = n // 2
        th_out = rng.uniform(0.0, np.pi, size=half)
        th_in = rng.uniform(0.0, np.pi, size=n - half)
        outer = np.column_stack([np.cos(th_out), np.sin(th_out)])
        inner = np.column_stack([1.0 - np.cos(th_in), 0.5 - np.sin(th_in)])
        pts = np.vstack([outer, inner]) + noise * rng.standard_normal((n, 2))
        labels = np.concatenate([np.zeros(half, dtype=np.intp), np.ones(n - half, dtype=np.intp)])
        pts = _normalize(pts, scale)
        return pts, (labels if spec.n_classes else None)

    if name is DatasetName.CHECKERBOARD:
        _reject_unknown(name, p)
        x1 = rng.uniform(-4.0, 4.0, size=n)
        x2 = rng.uniform(size=n) - rng.integers(0, 2, size=n) * 2.0
        x2 = x2 + np.floor(x1) % 2
        pts = _normalize(np.column_stack([x1, x2]), scale)
        return pts, None

    if name is DatasetName.GAUSSIAN:
        mean = np.asarray(p.pop("mean", (0.0, 0.0)), dtype=np.float64)
        std = float(p.pop("std", 1.0))
        _reject_unknown(name, p)
        return mean + std * rng.standard_normal((n, mean.shape[0])), None

    raise ValueError(f"unknown dataset family {name!r}")


def _reject_unknown(name: DatasetName, leftovers: dict) -> None:
    if leftovers:
        raise ValueError(f"unknown parameters for {name.value}: {sorted(leftovers)}")


def sample_source(spec: SourceSpec, n: int, rng: np.random.Generator) -> Array:
    if spec.kind is SourceKind.STD_GAUSSIAN:
        return rng.standard_normal((n, 2))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    rad = spec.radius + spec.width * (rng.random(n) - 0.5)
    return rad[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])


def sample_coupling(
    source: SourceSpec,
    target_points: Array,
    batch: int,
    rng: np.random.Generator,
    target_labels: Array | None = None,
) -> list[CouplingSample]:
    """Independent coupling: fresh source draws paired with uniform resamples of the target."""
    if batch <= 0:
        raise ValueError("batch must be positive")
    target_points = np.asarray(target_points, dtype=np.float64)
    if target_points.ndim != 2 or target_points.shape[0] == 0:
        raise ValueError("target_points must be a nonempty [n, d] array")
    x0 = sample_source(source, batch, rng)
    idx = rng.integers(0, target_points.shape[0], size=batch)
    x1 = target_points[idx]
    labels = None if target_labels is None else np.asarray(target_labels)[idx]
    return [
        CouplingSample(x0[i], x1[i], None if labels is None else int(labels[i]))
        for i in range(batch)
    ]
