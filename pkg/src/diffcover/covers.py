"""Chart covers for SDEs on R^n and the sequences attached to them.

A cover here is a family of concentric ball pairs ``(U_i^0, U_i)`` (inner
and outer sets) plus an affine chart per set mapping the inner ball onto
``B_r``.  Two families are provided:

* :class:`GrowthCover` -- centres on concentric shells, built lazily so that
  covers reaching radius 1e6 cost only their shell table;
* :class:`ExplicitCover` -- plain arrays, used for hand-built covers and for
  certificates reloaded from disk.

Set indices are global and ordered (set 0 first, then shell by shell), which
is the order used by the "first inner set containing the point" rule.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .regions import Ball
from .sde_core import SdeSystem, SmoothMap, generator_apply

SCHEMA_VERSION = 1
LINEAR = "linear"
SUBLINEAR = "sublinear"


class CoverConstructionError(RuntimeError):
    pass


class ChartDomainError(RuntimeError):
    pass


class CoverageError(RuntimeError):
    pass


# --------------------------------------------------------------------------- charts


@dataclass(frozen=True)
class Chart:
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    r: float
    k: float
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dim: int = 2
    label: str = ""

    def smooth_map(self) -> SmoothMap:
        return SmoothMap(self.forward, self.jacobian, self.hessian)

    def check(self, points, n_sphere: int = 64) -> None:
        """inverse∘forward = id on ``points`` and the image reaches the sphere of radius 3r."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        back = self.inverse(self.forward(pts))
        scale = 1.0 + np.max(np.abs(pts))
        if np.max(np.abs(back - pts)) > 1e-9 * scale:
            raise ChartDomainError(f"chart {self.label}: inverse(forward(x)) != x")
        y = _sphere_points(self.dim, n_sphere) * 3 * self.r
        z = self.inverse(y)
        if not np.all(np.isfinite(z)) or np.max(np.abs(self.forward(z) - y)) > 1e-9 * (1 + 3 * self.r):
            raise ChartDomainError(f"chart {self.label}: image does not contain B_3r")


def affine_chart(center, scale: float, r: float, k: float, label: str = "") -> Chart:
    """``phi(z) = scale * (z - center)``; constant Jacobian, zero Hessian."""
    p = np.asarray(center, dtype=float)
    n = p.size

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(scale * np.eye(n), x.shape[:-1] + (n, n)).copy()

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, n, n))

    return Chart(
        forward=lambda z: scale * (np.asarray(z, dtype=float) - p),
        inverse=lambda y: np.asarray(y, dtype=float) / scale + p,
        jacobian=jac, hessian=hess, r=r, k=k, dim=n, label=label,
    )


def _sphere_points(dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        a = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(a), np.sin(a)])
    g = np.random.default_rng(12345).standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def angular_diameter(center, radius: float) -> float:
    """Largest angle seen from the origin between two points of ``B(center, radius)``."""
    d = float(np.linalg.norm(center))
    if radius >= d:
        return math.pi
    return 2.0 * math.asin(radius / d)


# --------------------------------------------------------------------------- ball families


class BallFamily:
    """Shared lookups for covers made of concentric (inner, outer) ball pairs."""

    dim: int
    chart_r: float
    k: float

    def __len__(self) -> int:
        raise NotImplementedError

    def center(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def inner_radius(self, i: int) -> float:
        raise NotImplementedError

    def outer_radius(self, i: int) -> float:
        raise NotImplementedError

    def _candidates(self, x: np.ndarray, reach: float) -> np.ndarray:
        """Indices of every set whose inner ball might meet ``B(x, reach)`` (superset)."""
        raise NotImplementedError

    def inner(self, i: int) -> Ball:
        return Ball(self.center(i), self.inner_radius(i), set_id=i)

    def outer(self, i: int) -> Ball:
        return Ball(self.center(i), self.outer_radius(i), set_id=i)

    def chart(self, i: int) -> Chart:
        return affine_chart(self.center(i), self.chart_r / self.inner_radius(i),
                            self.chart_r, self.k, label=str(i))

    def _members(self, idx: np.ndarray):
        c = np.array([self.center(i) for i in idx]).reshape(len(idx), self.dim)
        r = np.array([self.inner_radius(i) for i in idx])
        return c, r

    def inner_containing(self, x) -> list:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        idx = self._candidates(x, 0.0)
        if len(idx) == 0:
            return []
        c, r = self._members(idx)
        hit = np.linalg.norm(c - x, axis=1) < r
        return sorted(int(i) for i in np.asarray(idx)[hit])

    def first_inner(self, x) -> int:
        """Smallest index whose inner set contains ``x``; -1 if none (a cover gap)."""
        found = self.inner_containing(x)
        return found[0] if found else -1

    def inner_intersecting(self, i: int) -> list:
        """Sets ``j != i`` whose inner ball meets the inner ball of ``i``."""
        c0, r0 = self.center(i), self.inner_radius(i)
        idx = self._candidates(c0, r0)
        if len(idx) == 0:
            return []
        c, r = self._members(idx)
        hit = np.linalg.norm(c - c0, axis=1) < r + r0
        return sorted(int(j) for j in np.asarray(idx)[hit] if j != i)

    def coverage_gaps(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([self.first_inner(p) < 0 for p in pts], dtype=bool)


class ExplicitCover(BallFamily):
    def __init__(self, centers, inner_radii, outer_radii, chart_r: float = 1.0, k: float = np.inf,
                 mode: str = "explicit", alpha: Optional[float] = None):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.inner_radii = np.asarray(inner_radii, dtype=float)
        self.outer_radii = np.asarray(outer_radii, dtype=float)
        if not (len(self.centers) == len(self.inner_radii) == len(self.outer_radii)):
            raise ValueError("centers and radii must have equal length")
        if np.any(self.inner_radii <= 0) or np.any(self.inner_radii > self.outer_radii):
            raise ValueError("need 0 < inner radius <= outer radius for every set")
        self.dim = self.centers.shape[1]
        self.chart_r = chart_r
        self.k = k
        self.mode = mode
        self.alpha = alpha

    def __len__(self):
        return len(self.centers)

    def center(self, i):
        return self.centers[i]

    def inner_radius(self, i):
        return float(self.inner_radii[i])

    def outer_radius(self, i):
        return float(self.outer_radii[i])

    def _candidates(self, x, reach):
        d = np.linalg.norm(self.centers - x, axis=1)
        return np.flatnonzero(d < self.inner_radii + reach + 1e-12)


class GrowthCover(BallFamily):
    """Shell cover of ``R^n`` whose ball radii grow like ``|p|`` or ``|p|^alpha``.

    Set 0 is ``U_0^0 = B(p_0, 2) ⊂ U_0 = B(p_0, 6)`` with ``|p_0| = 1``.  Other
    sets sit on shells of radius ``R_s`` with

    * linear:    inner ``|p|/3``, outer ``|p|/2``, chart ``(z - p)/|p|`` (r = 1/3);
    * sublinear: inner ``|p|^a/6``, outer ``|p|^a/2``, chart ``6(z - p)/|p|^a`` (r = 1).

    Shells are spaced so that the polar boxes ``|s - R| <= rho/2``,
    ``angle <= w`` tile the plane and each lies inside ``0.98 rho`` of its
    centre, which makes coverage exact rather than sampled.
    """

    _MAX_SHELLS = 200_000
    _MAX_SETS = 10 ** 9

    def __init__(self, mode: str, region_radius: float, alpha: Optional[float] = None,
                 dim: int = 2, K: float = 1.0):
        if mode not in (LINEAR, SUBLINEAR):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == SUBLINEAR:
            if alpha is None or not 0 <= alpha < 1:
                raise ValueError("sublinear covers need 0 <= alpha < 1")
        else:
            alpha = None
        if region_radius < 10:
            raise ValueError("region_radius must be at least 10")
        if dim < 1:
            raise ValueError("dim must be positive")
        self.mode, self.alpha, self.dim = mode, alpha, dim
        self.region_radius = float(region_radius)
        self.K = K
        self.k = 18.0 * K
        self.chart_r = 1.0 / 3.0 if mode == LINEAR else 1.0
        self.p0 = np.zeros(dim)
        self.p0[0] = 1.0
        self._dirs = {}
        self._net_cache = {}
        self._build_shells()

    # radii as functions of |p|
    def inner_of(self, R):
        R = np.asarray(R, dtype=float)
        return R / 3.0 if self.mode == LINEAR else R ** self.alpha / 6.0

    def outer_of(self, R):
        R = np.asarray(R, dtype=float)
        return R / 2.0 if self.mode == LINEAR else R ** self.alpha / 2.0

    def _half_angle(self, R: float) -> float:
        rho = float(self.inner_of(R))
        h = rho / 2
        rhs = ((0.98 * rho) ** 2 - h * h) / (2 * R * (R + h))
        if rhs >= 2:
            return math.pi
        return math.acos(1 - rhs)

    def _build_shells(self):
        radii, counts = [], []
        lower = lambda R: R - float(self.inner_of(R)) / 2
        target = 0.98  # U_0^0 = B(p_0, 2) contains the closed unit ball
        total = 0
        while True:
            hi = max(2 * target + 2, 4.0)
            while lower(hi) < target:
                hi *= 2
            R = brentq(lambda r: lower(r) - target, target, hi, xtol=1e-13, rtol=1e-13)
            w = self._half_angle(R)
            n = self._count_for(w, len(radii))
            radii.append(R)
            counts.append(n)
            total += n
            upper = R + float(self.inner_of(R)) / 2
            if upper >= self.region_radius:
                break
            if len(radii) >= self._MAX_SHELLS or total > self._MAX_SETS:
                raise CoverConstructionError("shell budget exhausted before the region was covered")
            target = upper
        self.shell_radii = np.array(radii)
        self.shell_counts = np.array(counts, dtype=np.int64)
        self.offsets = 1 + np.concatenate([[0], np.cumsum(self.shell_counts)])
        self._inner = self.inner_of(self.shell_radii)
        self._lo = self.shell_radii - self._inner
        self._hi = self.shell_radii + self._inner

    def _count_for(self, w: float, s: int) -> int:
        if self.dim == 1:
            return 2
        if self.dim == 2:
            return max(1, int(math.ceil(math.pi / w - 1e-12)))
        key = round(w, 12)
        if key not in self._net_cache:
            self._net_cache[key] = self._net(w)
        self._dirs[s] = self._net_cache[key]
        return len(self._dirs[s])

    def _net(self, w: float) -> np.ndarray:
        """Greedy angular packing: a 0.8w-separated subset of a dense sample of the sphere."""
        sep = 0.8 * w
        n_sample = int(min(400_000, max(2000, 40 * (2.0 / max(0.2 * w, 1e-3)) ** (self.dim - 1))))
        sample = _sphere_points(self.dim, n_sample)
        # same result as the plain greedy scan: a sample is kept iff no kept point lies within sep
        tree = cKDTree(sample)
        chord = 2.0 * math.sin(sep / 2)
        covered = np.zeros(len(sample), dtype=bool)
        chosen = []
        for i in range(len(sample)):
            if covered[i]:
                continue
            chosen.append(sample[i])
            covered[tree.query_ball_point(sample[i], chord * (1 - 1e-12))] = True
        return np.array(chosen)

    def _shell_dirs(self, s: int) -> np.ndarray:
        if self.dim == 2:
            n = int(self.shell_counts[s])
            a = 2 * np.pi * np.arange(n) / n
            return np.column_stack([np.cos(a), np.sin(a)])
        if self.dim == 1:
            return np.array([[1.0], [-1.0]])
        return self._dirs[s]

    def __len__(self):
        return int(self.offsets[-1])

    def _locate(self, i: int):
        s = int(np.searchsorted(self.offsets, i, side="right") - 1)
        return s, i - int(self.offsets[s])

    def center(self, i):
        if i == 0:
            return self.p0.copy()
        s, j = self._locate(i)
        R = self.shell_radii[s]
        if self.dim == 2:
            a = 2 * np.pi * j / self.shell_counts[s]
            return R * np.array([math.cos(a), math.sin(a)])
        return R * self._shell_dirs(s)[j]

    def inner_radius(self, i):
        if i == 0:
            return 2.0
        return float(self._inner[self._locate(i)[0]])

    def outer_radius(self, i):
        if i == 0:
            return 6.0
        return float(self.outer_of(self.shell_radii[self._locate(i)[0]]))

    def _members(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        c = np.empty((len(idx), self.dim))
        r = np.empty(len(idx))
        zero = idx == 0
        c[zero], r[zero] = self.p0, 2.0
        rest = np.flatnonzero(~zero)
        sh = np.searchsorted(self.offsets, idx[rest], side="right") - 1
        j = idx[rest] - self.offsets[sh]
        r[rest] = self._inner[sh]
        if self.dim == 2:
            a = 2 * np.pi * j / self.shell_counts[sh]
            c[rest] = self.shell_radii[sh, None] * np.column_stack([np.cos(a), np.sin(a)])
        else:
            for s in np.unique(sh):
                m = sh == s
                c[rest[m]] = self.shell_radii[s] * self._shell_dirs(int(s))[j[m]]
        return c, r

    def shell_of(self, i: int) -> int:
        return -1 if i == 0 else self._locate(i)[0]

    def _candidates(self, x, reach):
        x = np.asarray(x, dtype=float)
        s_norm = float(np.linalg.norm(x))
        out = []
        if np.linalg.norm(x - self.p0) < 2.0 + reach + 1e-12:
            out.append(0)
        first = int(np.searchsorted(self._hi + reach, s_norm, side="right"))
        last = int(np.searchsorted(self._lo - reach, s_norm, side="left"))
        for s in range(first, last):
            R, rho = self.shell_radii[s], self._inner[s]
            n = int(self.shell_counts[s])
            base = int(self.offsets[s])
            if self.dim != 2:
                out.extend(base + np.arange(n))
                continue
            if rho + reach >= R or n <= 4:
                out.extend(base + np.arange(n))
                continue
            beta = math.asin(min(1.0, (rho + reach) / R)) if s_norm > 0 else math.pi
            theta = math.atan2(x[1], x[0]) if s_norm > 0 else 0.0
            step = 2 * math.pi / n
            j0 = int(math.floor((theta - beta) / step)) - 1
            j1 = int(math.ceil((theta + beta) / step)) + 1
            if j1 - j0 + 1 >= n:
                out.extend(base + np.arange(n))
            else:
                out.extend(base + (np.arange(j0, j1 + 1) % n))
        return np.unique(np.asarray(out, dtype=np.int64))

    def materialize(self, max_radius: Optional[float] = None) -> ExplicitCover:
        """Explicit copy of every set whose shell radius is at most ``max_radius``."""
        lim = self.region_radius if max_radius is None else max_radius
        n_sh = int(np.searchsorted(self.shell_radii, lim, side="right"))
        count = int(self.offsets[n_sh]) if n_sh < len(self.offsets) else len(self)
        idx = range(count)
        return ExplicitCover(
            [self.center(i) for i in idx], [self.inner_radius(i) for i in idx],
            [self.outer_radius(i) for i in idx], chart_r=self.chart_r, k=self.k,
            mode=self.mode, alpha=self.alpha,
        )


def build_growth_cover(mode: str, region_radius: float, alpha: Optional[float] = None,
                       dim: int = 2, K: float = 1.0) -> GrowthCover:
    """Shell cover for linear (``mode="linear"``) or sublinear(alpha) growth; see :class:`GrowthCover`."""
    return GrowthCover(mode, region_radius, alpha=alpha, dim=dim, K=K)


# --------------------------------------------------------------------------- verification


@dataclass
class CoverReport:
    passed: bool
    worst_bound: float
    worst_chart: int
    k: float
    worst_pushforward: float
    worst_generator: float
    n_charts: int


def _b2r_grid(dim: int, r: float, per_axis: int = 9) -> np.ndarray:
    if dim <= 3:
        axes = [np.linspace(-2 * r, 2 * r, per_axis)] * dim
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        g = g[np.linalg.norm(g, axis=1) <= 2 * r * (1 + 1e-12)]
    else:
        from scipy.stats import qmc
        u = qmc.Halton(d=dim, seed=0).random(10_000) * 2 - 1
        g = 2 * r * u[np.linalg.norm(u, axis=1) <= 1]
    return np.vstack([g, 2 * r * _sphere_points(dim, 16)])


def _shell_centers(cover: "GrowthCover", s: int) -> np.ndarray:
    return cover.shell_radii[s] * cover._shell_dirs(s)


def _affine_groups(cover: BallFamily):
    """``(first index, centres, scale)`` blocks of charts sharing one Jacobian."""
    if isinstance(cover, GrowthCover):
        yield 0, cover.p0[None, :], cover.chart_r / cover.inner_radius(0)
        for s in range(len(cover.shell_radii)):
            yield int(cover.offsets[s]), _shell_centers(cover, s), cover.chart_r / float(cover._inner[s])
    else:
        for i in range(len(cover)):
            yield i, cover.center(i)[None, :], cover.chart_r / cover.inner_radius(i)


def _uses_affine_charts(cover) -> bool:
    return type(cover).chart is BallFamily.chart


def verify_uniform_cover(cover: BallFamily, system: SdeSystem, grid: int = 9,
                         k: Optional[float] = None, chunk: int = 1 << 17) -> CoverReport:
    """Sup over a grid of ``B_2r`` of ``|D phi X|`` (operator norm) and ``|A(phi)|`` for every chart.

    Charts of one shell share a constant Jacobian, so their grids are
    evaluated together; custom chart classes are checked one by one.
    """
    k = cover.k if k is None else k
    base = _b2r_grid(cover.dim, cover.chart_r, grid)
    worst, worst_i, w_push, w_gen = 0.0, -1, 0.0, 0.0

    def blocks():
        if _uses_affine_charts(cover):
            for first, centers, scale in _affine_groups(cover):
                ch = affine_chart(centers[0], scale, cover.chart_r, k)
                yield first, centers, scale, ch
        else:
            for i in range(len(cover)):
                ch = cover.chart(i)
                pts = ch.inverse(base)
                if not np.all(np.isfinite(pts)):
                    raise ChartDomainError(f"chart {i}: inverse failed on the B_2r grid")
                yield i, None, pts, ch

    for first, centers, arg, ch in blocks():
        phi = ch.smooth_map()
        if centers is None:
            rows = [(first, arg)]
        else:
            per = max(1, chunk // len(base))
            rows = [(first + j, (centers[j:j + per, None, :] + base[None, :, :] / arg).reshape(-1, cover.dim))
                    for j in range(0, len(centers), per)]
        for start, pts in rows:
            J = phi.jacobian(pts)
            push = np.linalg.norm(np.einsum("bij,bjm->bim", J, system.diffusion(pts)), ord=2, axis=(1, 2))
            gen = np.linalg.norm(generator_apply(system, phi, pts), axis=1)
            both = np.maximum(push, gen).reshape(-1, len(base)).max(axis=1)
            j = int(np.argmax(both))
            w_push = max(w_push, float(push.max()))
            w_gen = max(w_gen, float(gen.max()))
            if both[j] > worst or worst_i < 0:
                worst, worst_i = float(both[j]), start + j
    return CoverReport(passed=worst <= k, worst_bound=worst, worst_chart=worst_i, k=k,
                       worst_pushforward=w_push, worst_generator=w_gen, n_charts=len(cover))


# --------------------------------------------------------------------------- delta sequences


def renormalize_groups(t) -> np.ndarray:
    """Group labels (1-based) of the greedy grouping; see :func:`renormalize_deltas`."""
    t = np.minimum(np.asarray(t, dtype=float), 1.0)
    labels = np.empty(len(t), dtype=np.int64)
    if len(t) == 0:
        return labels
    labels[0] = 1
    group, acc = 2, 0.0
    for n in range(1, len(t)):
        labels[n] = group
        acc += t[n]
        if acc >= 1.0:
            group += 1
            acc = 0.0
    return labels


def renormalize_deltas(t, N: Optional[int] = None) -> np.ndarray:
    """Shrink a divergent non-increasing sequence so its squares become summable.

    Terms are capped at 1, then grouped as ``t_1 ; t_2..t_k2 ; ...`` where each
    group after the first is the shortest run with sum >= 1 (so <= 2).  Terms
    of group ``j`` are divided by ``j``.  The output keeps ``sum s = inf``
    whenever ``sum t = inf`` and has ``sum s^2 <= 1 + 2 sum_{j>=2} j^-2``.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("t must be a non-empty sequence")
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("t must be positive")
    if np.any(np.diff(t) > 0):
        raise ValueError("t must be non-increasing")
    N = len(t) if N is None else N
    if N > len(t):
        raise ValueError(f"only {len(t)} terms available, asked for {N}")
    t = t[:N]
    return np.minimum(t, 1.0) / renormalize_groups(t)


# --------------------------------------------------------------------------- weak covers


@dataclass
class WeakUniformCover:
    family: BallFamily
    exhaustion: np.ndarray
    deltas: np.ndarray
    C: float

    def __post_init__(self):
        self.exhaustion = np.asarray(self.exhaustion, dtype=float)
        self.deltas = np.asarray(self.deltas, dtype=float)
        if np.any(np.diff(self.exhaustion) <= 0):
            raise ValueError("exhaustion radii must increase")
        if np.any(self.deltas <= 0) or np.any(np.diff(self.deltas) > 0):
            raise ValueError("deltas must be positive and non-increasing")

    def inner(self, i):
        return self.family.inner(i)

    def outer(self, i):
        return self.family.outer(i)

    def first_inner(self, x):
        return self.family.first_inner(x)

    def boundary_crossings(self, i: int) -> int:
        """How many exhaustion spheres ``|x| = K_m`` the outer set ``i`` meets."""
        c = float(np.linalg.norm(self.family.center(i)))
        rho = self.family.outer_radius(i)
        return int(np.sum((self.exhaustion > c - rho) & (self.exhaustion < c + rho)))

    def exhaustion_index(self, i: int) -> int:
        """Smallest m (1-based) with ``U_i ⊂ K_m``; 0 if beyond the listed radii."""
        c = float(np.linalg.norm(self.family.center(i)))
        ext = c + self.family.outer_radius(i)
        m = int(np.searchsorted(self.exhaustion, ext, side="left"))
        return m + 1 if m < len(self.exhaustion) else 0

    def check(self, n_sets: Optional[int] = None, samples: int = 16, seed: int = 0) -> dict:
        """Sample-check nesting ``U^0 ⊂ U`` and the one-boundary rule on the first ``n_sets`` sets."""
        rng = np.random.default_rng(seed)
        n_sets = len(self.family) if n_sets is None else min(n_sets, len(self.family))
        nest_bad, cross_bad = [], []
        for i in range(n_sets):
            inner, outer = self.inner(i), self.outer(i)
            if np.any(~outer.contains(inner.sample(samples, rng, boundary_fraction=0.5) * (1 - 1e-12)
                                      + inner.center * 1e-12)):
                nest_bad.append(i)
            if self.exhaustion_index(i) and self.boundary_crossings(i) > 1:
                cross_bad.append(i)
        return {"nesting_violations": nest_bad, "crossing_violations": cross_bad,
                "ok": not nest_bad and not cross_bad}


def exhaustion_for(family: BallFamily, r_max: float) -> np.ndarray:
    """Exhaustion radii such that every outer set meets at most one sphere ``|x| = K_m``."""
    if isinstance(family, GrowthCover):
        lo = family.shell_radii - family.outer_of(family.shell_radii)
        hi = family.shell_radii + family.outer_of(family.shell_radii)
        p0 = float(np.linalg.norm(family.p0))
        sets_lo = np.concatenate([[p0 - 6.0], lo])
        sets_hi = np.concatenate([[p0 + 6.0], hi])
    else:
        c = np.linalg.norm(family.centers, axis=1)
        sets_lo, sets_hi = c - family.outer_radii, c + family.outer_radii
    order = np.argsort(sets_lo)
    sets_lo, run_hi = sets_lo[order], np.maximum.accumulate(sets_hi[order])
    radii = []
    R = 0.0
    while R < r_max:
        j = int(np.searchsorted(sets_lo, R, side="right")) - 1
        if j < 0:
            raise CoverageError("no set meets the origin region")
        nxt = run_hi[j] * (1 + 1e-9)
        if nxt <= R:
            nxt = R * (1 + 1e-9) + 1e-9
        if j == len(sets_lo) - 1 and nxt < r_max:
            # family ends; close off at r_max
            nxt = r_max
        radii.append(nxt)
        R = nxt
    return np.array(radii)


def weak_cover_from_uniform(family: BallFamily, C: float, r_max: Optional[float] = None,
                            n_deltas: int = 10_000) -> WeakUniformCover:
    """Uniform cover → weak uniform cover with all ``delta_n = 1``."""
    r_max = getattr(family, "region_radius", None) if r_max is None else r_max
    if r_max is None:
        c = np.linalg.norm(family.centers, axis=1)
        r_max = float(np.max(c + family.outer_radii))
    return WeakUniformCover(family, exhaustion_for(family, r_max), np.ones(n_deltas), C)


# --------------------------------------------------------------------------- W^p sets, regularity


def wp_neighborhoods(cover, start: int, p: int, x=None) -> set:
    """Breadth-first closure of the inner-set intersection graph, ``p`` layers deep.

    Layer 0 is ``start`` plus every set whose inner ball contains ``x`` (if given).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    fam = cover.family if isinstance(cover, WeakUniformCover) else cover
    seen = {int(start)}
    if x is not None:
        seen.update(fam.inner_containing(x))
    frontier = deque(seen)
    for _ in range(p):
        nxt = deque()
        while frontier:
            i = frontier.popleft()
            for j in fam.inner_intersecting(i):
                if j not in seen:
                    seen.add(j)
                    nxt.append(j)
        frontier = nxt
    return seen


@dataclass
class RegularityReport:
    regular: bool
    sup_distances: list
    sets_used: list
    tolerance: float
    note: str = "checked along the supplied approach sequence only"


def check_regular(cover, model, approach, samples: int = 64, limit=None, tol: float = 1e-2,
                  seed: int = 0) -> RegularityReport:
    """Do the outer sets around an approach sequence shrink to its boundary limit?

    For each approach point the sup (over sampled points of every outer set
    whose inner set contains it) of the compactified distance to the limit is
    recorded; the cover counts as regular when that sup ends below ``tol``.
    """
    fam = cover.family if isinstance(cover, WeakUniformCover) else cover
    approach = np.atleast_2d(np.asarray(approach, dtype=float))
    target = model.boundary_projection(approach[-1]) if limit is None else limit
    rng = np.random.default_rng(seed)
    sups, used = [], []
    for x in approach:
        ids = fam.inner_containing(x)
        if not ids:
            raise CoverageError(f"approach point {x} lies in no inner set")
        worst = 0.0
        for i in ids:
            pts = fam.outer(i).sample(samples, rng, boundary_fraction=0.5)
            d = model.distance(model.embed(pts), target)
            worst = max(worst, float(np.max(d)))
        sups.append(worst)
        used.append(ids)
    return RegularityReport(regular=sups[-1] < tol, sup_distances=sups, sets_used=used, tolerance=tol)


# --------------------------------------------------------------------------- serialization


def certificate_dict(cover: WeakUniformCover, max_radius: Optional[float] = None) -> dict:
    fam = cover.family
    if isinstance(fam, GrowthCover):
        fam = fam.materialize(max_radius)
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": fam.mode,
        "alpha": fam.alpha,
        "dim": fam.dim,
        "chart_r": fam.chart_r,
        "k": None if not np.isfinite(fam.k) else fam.k,
        "centers": fam.centers.tolist(),
        "inner_radii": fam.inner_radii.tolist(),
        "outer_radii": fam.outer_radii.tolist(),
        "deltas": cover.deltas.tolist(),
        "C": cover.C,
        "exhaustion_radii": cover.exhaustion.tolist(),
    }


def dump_certificate(cover: WeakUniformCover, max_radius: Optional[float] = None) -> str:
    return json.dumps(certificate_dict(cover, max_radius), indent=1, sort_keys=True)


def load_certificate(text: str) -> WeakUniformCover:
    d = json.loads(text)
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported certificate schema {d.get('schema_version')!r}")
    fam = ExplicitCover(d["centers"], d["inner_radii"], d["outer_radii"], chart_r=d["chart_r"],
                        k=np.inf if d["k"] is None else d["k"], mode=d["mode"], alpha=d["alpha"])
    return WeakUniformCover(fam, d["exhaustion_radii"], d["deltas"], d["C"])
