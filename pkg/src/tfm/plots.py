"""Static SVG emission for point clouds and generation trajectories.

Output bytes are a pure function of the inputs: fixed canvas, fixed float formatting,
no timestamps.
"""

from __future__ import annotations

import numpy as np

from .sampling import Trajectory

Array = np.ndarray

_SIZE = 480
_PAD = 24


def _require_2d(arr: Array, what: str) -> Array:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{what} must be [n, 2] points, got shape {arr.shape}")
    return arr


class _Canvas:
    """Maps data coordinates into a fixed square viewport, y pointing up."""

    def __init__(self, points: list[Array], size: int = _SIZE):
        self.size = size
        if points and sum(p.shape[0] for p in points) > 0:
            allpts = np.vstack(points)
            lo = allpts.min(axis=0)
            hi = allpts.max(axis=0)
        else:
            lo = np.array([-1.0, -1.0])
            hi = np.array([1.0, 1.0])
        span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
        self._center = (lo + hi) / 2.0
        self._scale = (size - 2 * _PAD) / span

    def xy(self, p) -> tuple[str, str]:
        cx = (p[0] - self._center[0]) * self._scale + self.size / 2.0
        cy = self.size / 2.0 - (p[1] - self._center[1]) * self._scale
        return f"{cx:.2f}", f"{cy:.2f}"


def _document(body: list[str], width: int = _SIZE, height: int = _SIZE) -> bytes:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return ("\n".join([head, *body, "</svg>"]) + "\n").encode("utf-8")


def _scatter_body(canvas: _Canvas, point_sets, radius: float = 1.6, opacity: float = 0.6) -> list[str]:
    body = []
    for pts, color in point_sets:
        circles = []
        for p in pts:
            x, y = canvas.xy(p)
            circles.append(f'<circle cx="{x}" cy="{y}" r="{radius}"/>')
        body.append(f'<g fill="{color}" fill-opacity="{opacity}">')
        body.extend(circles)
        body.append("</g>")
    return body


def write_scatter_svg(point_sets: list[tuple[Array, str]], path) -> None:
    """Scatter each (points, color) group on a shared canvas."""
    sets = [(_require_2d(pts, "scatter points"), color) for pts, color in point_sets]
    canvas = _Canvas([pts for pts, _ in sets])
    with open(path, "wb") as fh:
        fh.write(_document(_scatter_body(canvas, sets)))


def write_trajectory_svg(traj: Trajectory, path) -> None:
    """One polyline per tracked point across the trajectory's snapshots, endpoints marked."""
    if not traj.states:
        with open(path, "wb") as fh:
            fh.write(_document(["<!-- empty trajectory -->"]))
        return
    batches = [_require_2d(batch, "trajectory batch") for _, batch in traj.states]
    canvas = _Canvas(batches)
    n = batches[0].shape[0]
    body = ['<g stroke="#888888" stroke-opacity="0.5" stroke-width="0.8" fill="none">']
    for i in range(n):
        coords = " ".join(",".join(canvas.xy(batch[i])) for batch in batches)
        body.append(f'<polyline points="{coords}"/>')
    body.append("</g>")
    body.extend(_scatter_body(canvas, [(batches[0], "#1f63c4")], radius=1.8))
    body.extend(_scatter_body(canvas, [(batches[-1], "#c43a31")], radius=1.8))
    with open(path, "wb") as fh:
        fh.write(_document(body))


def write_panel_svg(panels: list[tuple[str, list[tuple[Array, str]]]], path) -> None:
    """Side-by-side panels, each a titled scatter; the generation-figure layout."""
    if not panels:
        with open(path, "wb") as fh:
            fh.write(_document([]))
        return
    body = []
    for k, (title, point_sets) in enumerate(panels):
        sets = [(_require_2d(pts, "panel points"), color) for pts, color in point_sets]
        canvas = _Canvas([pts for pts, _ in sets])
        body.append(f'<g transform="translate({k * _SIZE},0)">')
        body.append(
            f'<text x="{_SIZE / 2:.0f}" y="18" text-anchor="middle" '
            f'font-family="monospace" font-size="14">{title}</text>'
        )
        body.extend(_scatter_body(canvas, sets))
        body.append("</g>")
    with open(path, "wb") as fh:
        fh.write(_document(body, width=_SIZE * len(panels), height=_SIZE))
