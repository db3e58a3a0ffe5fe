"""Open sets described by bounding data.

Each region exposes ``level(x)``: negative strictly inside, non-negative
outside, continuous across the boundary.  The integrator uses the sign change
of ``level`` between two grid points to interpolate exit times.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float
    set_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.size

    def level(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.linalg.norm(x - self.center, axis=1) - self.radius

    def contains(self, x) -> np.ndarray:
        return self.level(x) < 0

    def sample(self, n: int, rng: np.random.Generator, boundary_fraction: float = 0.0) -> np.ndarray:
        """Uniform points in the ball; a fraction is placed on the bounding sphere."""
        d = self.dim
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = rng.random(n) ** (1.0 / d)
        nb = int(round(boundary_fraction * n))
        r[:nb] = 1.0
        return self.center + self.radius * r[:, None] * g


@dataclass(frozen=True)
class Complement:
    """Complement of a closed region; leaving it means entering ``inner``."""

    inner: Ball

    @property
    def dim(self) -> int:
        return self.inner.dim

    def level(self, x) -> np.ndarray:
        return -self.inner.level(x)

    def contains(self, x) -> np.ndarray:
        return self.level(x) < 0


@dataclass(frozen=True)
class Cone:
    """Truncated cone ``{|x| > r_min, angle(x, axis) < half_angle}``.

    The level function mixes a radial and an angular term; only its sign and
    continuity matter.
    """

    axis: np.ndarray
    r_min: float
    half_angle: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", a / np.linalg.norm(a))
        if not (0 < self.half_angle < np.pi) or self.r_min < 0:
            raise ValueError("invalid cone")

    @property
    def dim(self) -> int:
        return self.axis.size

    def angle(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        r = np.linalg.norm(x, axis=1)
        c = np.divide(x @ self.axis, r, out=np.ones_like(r), where=r > 0)
        return np.arccos(np.clip(c, -1.0, 1.0))

    def level(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        r = np.linalg.norm(x, axis=1)
        return np.maximum((self.r_min - r) / max(self.r_min, 1.0), self.angle(x) - self.half_angle)

    def contains(self, x) -> np.ndarray:
        return self.level(x) < 0
