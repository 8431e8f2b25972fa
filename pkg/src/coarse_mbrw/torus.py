"""Geometry on the torus T = R^2 / (4Z)^2.

Points, the wrapped Euclidean metric, the normalized lens area of two equal
balls, and the level-r dyadic box partition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PERIOD = 4.0
HALF_PERIOD = PERIOD / 2


def wrap(v):
    """Reduce coordinates into [0, 4)."""
    if np.ndim(v) == 0:
        out = float(v) % PERIOD
        # -1e-17 % 4 rounds to 4.0
        return 0.0 if out >= PERIOD else out
    out = np.mod(np.asarray(v, dtype=float), PERIOD)
    out[out >= PERIOD] = 0.0
    return out


def wrap_delta(dv):
    """Reduce coordinate differences into [-2, 2)."""
    return np.mod(np.asarray(dv, dtype=float) + HALF_PERIOD, PERIOD) - HALF_PERIOD


@dataclass(frozen=True)
class TorusPoint:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", wrap(float(self.x)))
        object.__setattr__(self, "y", wrap(float(self.y)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def shifted(self, dx: float, dy: float) -> "TorusPoint":
        return TorusPoint(self.x + dx, self.y + dy)


@dataclass(frozen=True)
class Box:
    """Half-open square [ax, ax+side) x [ay, ay+side) on the torus.

    Sides above 4 only arise for enlarged boxes B* of coarse levels; such a
    box wraps onto itself and covers the whole torus.
    """

    anchor: TorusPoint
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"box side must be positive, got {self.side}")

    @property
    def center(self) -> TorusPoint:
        h = self.side / 2
        return self.anchor.shifted(h, h)

    def enlarged(self, factor: float = 5.0) -> "Box":
        """Concentric box with side ``factor * side`` (B* for factor 5)."""
        side = factor * self.side
        c = self.center
        return Box(TorusPoint(c.x - side / 2, c.y - side / 2), side)

    def contains(self, p) -> np.ndarray | bool:
        """Membership test; accepts a TorusPoint or an (..., 2) array."""
        xy = p.as_array() if isinstance(p, TorusPoint) else np.asarray(p, dtype=float)
        rel = np.mod(xy - np.array([self.anchor.x, self.anchor.y]), PERIOD)
        inside = np.all(rel < self.side, axis=-1) | (self.side >= PERIOD)
        return bool(inside) if inside.ndim == 0 else inside


def torus_distance(p: TorusPoint, q: TorusPoint) -> float:
    dx = wrap_delta(p.x - q.x)
    dy = wrap_delta(p.y - q.y)
    return float(math.hypot(dx, dy))


def torus_distance_array(a, b) -> np.ndarray:
    """Vectorized wrapped distance between (..., 2) coordinate arrays."""
    d = wrap_delta(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    return np.hypot(d[..., 0], d[..., 1])


def ball_overlap_fraction(d, R: float):
    """|B(x,R) ∩ B(y,R)| / |B(x,R)| for balls at distance ``d``.

    Valid on the torus whenever R <= 1, since such balls embed isometrically
    in the plane. Accepts scalar or array ``d``.
    """
    if not 0 < R <= 1:
        raise ValueError(f"radius must lie in (0, 1], got {R}")
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise ValueError("distance must be non-negative")
    ratio = np.clip(d_arr / (2 * R), 0.0, 1.0)
    theta = np.arcsin(ratio)
    frac = 1.0 - (2 * theta + np.sin(2 * theta)) / math.pi
    frac = np.where(d_arr >= 2 * R, 0.0, np.clip(frac, 0.0, 1.0))
    return float(frac) if frac.ndim == 0 else frac


def box_side(r: int, k: int) -> float:
    return 2.0 ** (-k * r)


def dyadic_box(p: TorusPoint, r: int, k: int) -> Box:
    """The element of BD_r containing ``p``."""
    if r < 0 or k < 1:
        raise ValueError("need r >= 0 and k >= 1")
    s = box_side(r, k)
    ax = math.floor(p.x / s) * s
    ay = math.floor(p.y / s) * s
    return Box(TorusPoint(ax, ay), s)


def boxes_per_side(r: int, k: int) -> int:
    return 2 ** (k * r + 2)


def box_index(p: TorusPoint, r: int, k: int) -> tuple[int, int]:
    """Integer lattice index (a, b) of BD_r(p)."""
    s = box_side(r, k)
    m = boxes_per_side(r, k)
    return (int(math.floor(p.x / s)) % m, int(math.floor(p.y / s)) % m)


def box_from_index(a: int, b: int, r: int, k: int) -> Box:
    s = box_side(r, k)
    m = boxes_per_side(r, k)
    return Box(TorusPoint((a % m) * s, (b % m) * s), s)


def are_neighbors(b1: Box, b2: Box) -> bool:
    """Same-size boxes whose centers are exactly one side apart."""
    if not math.isclose(b1.side, b2.side):
        return False
    return math.isclose(torus_distance(b1.center, b2.center), b1.side, rel_tol=1e-9)
