"""Piecewise-constant test media ``u = background + sum_k alpha_k chi_{A_k}``.

The default geometries are only visual approximations of the usual
six-disc and three-inclusion benchmarks; they are not ground truth from
any published data set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon

from .mesh import FeFunction, Mesh


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float
    amplitude: float

    def contains(self, xy):
        d = np.hypot(xy[:, 0] - self.center[0], xy[:, 1] - self.center[1])
        return d < self.radius

    def boundary_distance(self, xy):
        d = np.hypot(xy[:, 0] - self.center[0], xy[:, 1] - self.center[1])
        return np.abs(d - self.radius)

    @property
    def area(self):
        return np.pi * self.radius**2

    @property
    def perimeter(self):
        return 2 * np.pi * self.radius

    @property
    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cy - r, cx + r, cy + r


@dataclass(frozen=True)
class PolygonInclusion:
    vertices: tuple[tuple[float, float], ...]
    amplitude: float

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    def contains(self, xy):
        return shapely.contains_xy(self.polygon, xy[:, 0], xy[:, 1])

    def boundary_distance(self, xy):
        ring = self.polygon.exterior
        return shapely.distance(ring, shapely.points(xy))

    @property
    def area(self):
        return self.polygon.area

    @property
    def perimeter(self):
        return self.polygon.length

    @property
    def bounds(self):
        return self.polygon.bounds


@dataclass(frozen=True)
class Phantom:
    name: str
    inclusions: tuple = field(default_factory=tuple)
    background: float = 1.0

    def __post_init__(self):
        for inc in self.inclusions:
            x0, y0, x1, y1 = inc.bounds
            if x0 <= 0 or y0 <= 0 or x1 >= 1 or y1 >= 1:
                raise ValueError(f"inclusion {inc} touches or crosses the boundary")
        low = self.background + min([0.0] + [i.amplitude for i in self.inclusions])
        if low <= 0:
            raise ValueError("medium must stay strictly positive")

    def deviation_at(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = np.zeros(len(xy))
        for inc in self.inclusions:
            out += inc.amplitude * inc.contains(xy)
        return out

    def __call__(self, xy) -> np.ndarray:
        return self.background + self.deviation_at(xy)

    def boundary_distance(self, xy) -> np.ndarray:
        """Distance to the nearest jump of the medium."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if not self.inclusions:
            return np.full(len(xy), np.inf)
        return np.min([inc.boundary_distance(xy) for inc in self.inclusions], axis=0)

    def on_mesh(self, mesh: Mesh, deviation: bool = False) -> FeFunction:
        vals = self.deviation_at(mesh.node_coords)
        if not deviation:
            vals = vals + self.background
        return FeFunction(mesh, vals, self.name)


def _drop(tip, center, radius, amplitude, n=200):
    # circle arc closed by the two tangents from ``tip``
    tip = np.asarray(tip, float)
    c = np.asarray(center, float)
    d = tip - c
    dist = np.linalg.norm(d)
    half = np.arccos(radius / dist)
    base = np.arctan2(d[1], d[0])
    t = np.linspace(base + half, base + 2 * np.pi - half, n)
    arc = np.column_stack([c[0] + radius * np.cos(t), c[1] + radius * np.sin(t)])
    pts = np.vstack([tip, arc])
    return PolygonInclusion(tuple(map(tuple, pts)), amplitude)


def _kite(center, scale, amplitude, n=240):
    # classic smooth non-convex kite curve
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    x = np.cos(t) + 0.65 * np.cos(2 * t) - 0.65
    y = 1.5 * np.sin(t)
    pts = np.column_stack([center[0] + scale * y, center[1] + scale * x])
    return PolygonInclusion(tuple(map(tuple, pts)), amplitude)


def six_discs() -> Phantom:
    discs = (
        Disc((0.27, 0.73), 0.12, 0.8),
        Disc((0.70, 0.75), 0.10, 1.2),
        Disc((0.25, 0.30), 0.09, 0.6),
        Disc((0.52, 0.50), 0.08, 1.0),
        Disc((0.75, 0.30), 0.11, 0.4),
        Disc((0.48, 0.18), 0.05, 0.9),
    )
    return Phantom("six_discs", discs)


THREE_INCLUSION_AMPLITUDES = (12.0, 4.0, 3.2)


def three_inclusions(amplitudes=THREE_INCLUSION_AMPLITUDES) -> Phantom:
    a_wedge, a_drop, a_kite = amplitudes
    wedge = PolygonInclusion(
        ((0.10, 0.10), (0.46, 0.10), (0.46, 0.25), (0.25, 0.25), (0.25, 0.46), (0.10, 0.46)),
        a_wedge,
    )
    drop = _drop(tip=(0.90, 0.10), center=(0.73, 0.30), radius=0.13, amplitude=a_drop)
    kite = _kite(center=(0.50, 0.73), scale=0.14, amplitude=a_kite)
    return Phantom("three_inclusions", (wedge, drop, kite))


def single_disc(radius=0.2, amplitude=1.0, center=(0.5, 0.5)) -> Phantom:
    return Phantom("single_disc", (Disc(tuple(center), radius, amplitude),))


def empty() -> Phantom:
    return Phantom("empty", ())


PHANTOMS = {
    "six_discs": six_discs,
    "three_inclusions": three_inclusions,
    "single_disc": single_disc,
    "empty": empty,
}


def phantom(spec, mesh: Mesh | None = None):
    """Look up a phantom by name (or pass one through) and optionally evaluate it on ``mesh``."""
    ph = PHANTOMS[spec]() if isinstance(spec, str) else spec
    if ph is None:
        ph = empty()
    return ph if mesh is None else ph.on_mesh(mesh)


def count_components(mask2d: np.ndarray) -> int:
    """Number of 4-connected components of True cells (flood fill)."""
    from scipy import ndimage

    _, num = ndimage.label(mask2d)
    return int(num)
