"""Compactifications of R^n (and of the cylinder) and boundary behaviour of semigroups.

Every model embeds the space into a bounded subset of a Euclidean space and
uses the Euclidean distance there, which metrizes the compactification:

* :class:`OnePoint` -- one point ``Delta`` at infinity;
* :class:`SphereAtInfinity` -- the radial compactification ``R^n ∪ S^{n-1}``;
* :class:`CylinderEnds` -- ``R x S^1`` with one circle added at each end.

The radial profile is ``h(s) = (2/pi) atan(s)``; unlike ``tanh`` it stays
resolvable in double precision up to ``s ~ 1e15``.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import sde_core
from .exit_times import DeltaSequence, cdf_from_times, estimate_exit_cdf
from .regions import Ball, Complement, Cone
from .sde_core import RngStream, SdeSystem, run_paths
from .stats import Verdict, clopper_pearson


class ContractViolation(ValueError):
    pass


def _profile(s):
    return (2.0 / math.pi) * np.arctan(s)


def _profile_inv(h):
    return np.tan(0.5 * math.pi * np.asarray(h, dtype=float))


def _unit(x):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, r, out=np.zeros_like(x), where=r > 0), r[..., 0]


class _Model:
    kind = ""
    dim: int

    def distance(self, a, b) -> np.ndarray:
        return np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), axis=-1)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("cannot embed non-finite points")
        return x


class OnePoint(_Model):
    """``x -> (w(h) x/|x|, h)``, ``h = (2/pi) atan|x|``, ``w = h(1-h)``; ``Delta = (0, ..., 0, 1)``.

    With ``manifold="cylinder"`` the input is ``(s, phi)`` on ``R x S^1`` and
    both ends collapse to ``Delta``.
    """

    kind = "one_point"

    def __init__(self, dim: int = 2, manifold: str = "euclidean"):
        if manifold not in ("euclidean", "cylinder"):
            raise ValueError(f"unknown manifold {manifold!r}")
        if manifold == "cylinder" and dim != 2:
            raise ValueError("cylinder points are (s, phi)")
        self.dim, self.manifold = dim, manifold
        self.ext_dim = dim + 1 if manifold == "euclidean" else 4
        self.delta = np.zeros(self.ext_dim)
        self.delta[-1] = 1.0

    def embed(self, x) -> np.ndarray:
        x = self._check(x)
        if self.manifold == "cylinder":
            a = _profile(x[..., 0])
            q = 1.0 - a * a
            return np.stack([q * np.cos(x[..., 1]), q * np.sin(x[..., 1]), a * q, a * a], axis=-1)
        u, r = _unit(x)
        h = _profile(r)
        return np.concatenate([(h * (1 - h))[..., None] * u, h[..., None]], axis=-1)

    def is_boundary(self, e) -> np.ndarray:
        return self.distance(e, self.delta) < 1e-15

    def boundary_projection(self, x) -> np.ndarray:
        return np.broadcast_to(self.delta, np.shape(x)[:-1] + (self.ext_dim,)).copy()


class SphereAtInfinity(_Model):
    """``x -> h(|x|) x/|x|``; the boundary is the unit sphere."""

    kind = "sphere"

    def __init__(self, dim: int = 2):
        self.dim = dim
        self.ext_dim = dim

    def embed(self, x) -> np.ndarray:
        x = self._check(x)
        u, r = _unit(x)
        return _profile(r)[..., None] * u

    def interior_point(self, e) -> np.ndarray:
        u, h = _unit(e)
        if np.any(h >= 1):
            raise ValueError("boundary points have no interior preimage")
        return _profile_inv(h)[..., None] * u

    def is_boundary(self, e) -> np.ndarray:
        return np.abs(np.linalg.norm(e, axis=-1) - 1.0) < 1e-15

    def boundary_projection(self, x) -> np.ndarray:
        u, r = _unit(x)
        if np.any(r == 0):
            raise ValueError("the origin has no direction at infinity")
        return u


class CylinderEnds(_Model):
    """Points ``(s, phi)`` of ``R x S^1`` map to ``(cos phi, sin phi, (2/pi) atan s)``."""

    kind = "cylinder"

    def __init__(self):
        self.dim = 2
        self.ext_dim = 3

    def embed(self, x) -> np.ndarray:
        x = self._check(x)
        return np.stack([np.cos(x[..., 1]), np.sin(x[..., 1]), _profile(x[..., 0])], axis=-1)

    def interior_point(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if np.any(np.abs(e[..., 2]) >= 1):
            raise ValueError("boundary points have no interior preimage")
        return np.stack([_profile_inv(e[..., 2]), np.arctan2(e[..., 1], e[..., 0])], axis=-1)

    def is_boundary(self, e) -> np.ndarray:
        return np.abs(np.abs(np.asarray(e)[..., 2]) - 1.0) < 1e-15

    def boundary_projection(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.sign(x[..., 0])
        if np.any(s == 0):
            raise ValueError("s = 0 belongs to no end")
        return np.stack([np.cos(x[..., 1]), np.sin(x[..., 1]), s], axis=-1)


MODELS = {"one_point": OnePoint, "sphere": SphereAtInfinity, "cylinder": CylinderEnds}


def make_model(kind: str, dim: int = 2):
    if kind == "cylinder":
        return CylinderEnds()
    if kind not in MODELS:
        raise ValueError(f"unknown compactification {kind!r}; choose from {sorted(MODELS)}")
    return MODELS[kind](dim)


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of ``M^ \\ M`` in the extended coordinates of ``model``."""

    model: object
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", c)
        if not bool(np.all(self.model.is_boundary(c))):
            raise ValueError("coordinates are not on the boundary")


def compactify(model, x) -> np.ndarray:
    return model.embed(x)


def one_point_model(model) -> OnePoint:
    return OnePoint(2, "cylinder") if isinstance(model, CylinderEnds) else OnePoint(model.dim)


def beta(model, e) -> np.ndarray:
    """Quotient map onto the one-point model: identity on ``M``, boundary ``-> Delta``."""
    target = one_point_model(model)
    e = np.atleast_2d(np.asarray(e, dtype=float))
    if isinstance(model, OnePoint):
        return e.copy()
    out = np.empty((len(e), target.ext_dim))
    bnd = model.is_boundary(e)
    out[bnd] = target.delta
    if np.any(~bnd):
        out[~bnd] = target.embed(model.interior_point(e[~bnd]))
    return out


def pullback(f: Callable, model) -> Callable:
    """``f o beta``: a function on the one-point model viewed on ``model``."""
    return lambda e: f(beta(model, e))


# --------------------------------------------------------------------------- ball criterion


@dataclass
class BallConvergence:
    values: np.ndarray
    holds: bool
    tolerance: float


def sample_ball(model, center, r: float, n: int, rng) -> np.ndarray:
    """Uniform points of the metric ball ``B_r(center)`` of ``M`` (flat or cylinder product metric)."""
    c = np.asarray(center, dtype=float)
    return Ball(c, r).sample(n, rng, boundary_fraction=0.25)


def check_ball_convergence(model, x_seq, r: float, samples: int = 128, tol: float = 1e-2,
                           limit=None, seed: int = 0) -> BallConvergence:
    """Does ``B_r(x_n)`` shrink to the boundary limit of ``x_n`` in the compactified metric?

    The value per ``n`` is the larger of the image diameter and the distance
    of the image to the limit point.
    """
    x_seq = np.atleast_2d(np.asarray(x_seq, dtype=float))
    target = model.boundary_projection(x_seq[-1]) if limit is None else np.asarray(limit, dtype=float)
    rng = np.random.default_rng(seed)
    vals = []
    for x in x_seq:
        e = model.embed(sample_ball(model, x, r, samples, rng))
        diam = float(np.max(np.linalg.norm(e[:, None, :] - e[None, :, :], axis=-1)))
        vals.append(max(diam, float(np.max(model.distance(e, target)))))
    vals = np.array(vals)
    return BallConvergence(values=vals, holds=bool(vals[-1] < tol), tolerance=tol)


# --------------------------------------------------------------------------- semigroups


KILL = "kill"
SEND_TO_DELTA = "delta"


@dataclass
class SemigroupEstimate:
    value: float
    ci_halfwidth: float
    n_paths: int
    exploded_fraction: float


def estimate_semigroup_suite(system: SdeSystem, suite: dict, model, x, t: float, n_paths: int,
                             dt: float, seed: int, convention: str = KILL,
                             f_bound: Optional[float] = None,
                             explosion_radius: float = sde_core.DEFAULT_EXPLOSION_RADIUS,
                             workers: int = 1, stream_offset: int = 0) -> dict:
    """:func:`estimate_semigroup` for several functions on one shared batch of paths."""
    if convention not in (KILL, SEND_TO_DELTA):
        raise ValueError(f"unknown explosion convention {convention!r}")
    if convention == SEND_TO_DELTA and not isinstance(model, OnePoint):
        raise ValueError("sending exploded paths to Delta needs the one-point model")
    x = np.asarray(x, dtype=float).reshape(system.dim_state)

    def bounded(v):
        v = np.asarray(v, dtype=float)
        if f_bound is not None and np.any(np.abs(v) > f_bound * (1 + 1e-12)):
            raise ContractViolation(f"|f| exceeds the declared bound {f_bound}")
        return v

    if t == 0:
        e0 = model.embed(x[None, :])
        return {k: SemigroupEstimate(float(bounded(f(e0))[0]), 0.0, n_paths, 0.0)
                for k, f in suite.items()}
    batch = run_paths(system, x, t, dt, seed, n_paths, explosion_radius=explosion_radius,
                      workers=workers, stream_offset=stream_offset)
    boom = batch.exploded
    emb = model.embed(batch.final[~boom]) if np.any(~boom) else None
    out = {}
    for k, f in suite.items():
        vals = np.zeros(n_paths)
        if emb is not None:
            vals[~boom] = bounded(f(emb))
        if convention == SEND_TO_DELTA and np.any(boom):
            vals[boom] = float(bounded(f(model.delta[None, :]))[0])
        sd = float(np.std(vals, ddof=1)) if n_paths > 1 else 0.0
        out[k] = SemigroupEstimate(float(vals.mean()), 1.96 * sd / math.sqrt(n_paths), n_paths,
                                   float(boom.mean()))
    return out


def estimate_semigroup(system: SdeSystem, f: Callable, model, x, t: float, n_paths: int, dt: float,
                       seed: int, convention: str = KILL, f_bound: Optional[float] = None,
                       explosion_radius: float = sde_core.DEFAULT_EXPLOSION_RADIUS,
                       workers: int = 1, stream_offset: int = 0) -> SemigroupEstimate:
    """Monte-Carlo ``E[f(F_t(x)); t < xi]`` (killed) or with ``f(Delta)`` on explosion.

    ``f`` acts on extended coordinates of ``model``; ``f_bound`` is checked
    on every evaluated value.  ``t = 0`` returns ``f(x)`` exactly.
    """
    return estimate_semigroup_suite(system, {"f": f}, model, x, t, n_paths, dt, seed, convention,
                                    f_bound, explosion_radius, workers, stream_offset)["f"]


def gaussian_bump(center, width: float = 0.5) -> Callable:
    """``exp(-|e - c|^2 / width^2)`` in extended coordinates; continuous and bounded by 1."""
    c = np.asarray(center, dtype=float)
    return lambda e: np.exp(-np.sum((np.asarray(e) - c) ** 2, axis=-1) / width ** 2)


def default_suite(model, limit) -> dict:
    """Constant, a bump at the limit point and a linear coordinate function."""
    c = np.asarray(limit, dtype=float)
    return {
        "one": lambda e: np.ones(np.shape(e)[:-1]),
        "bump": gaussian_bump(c, 0.5),
        "coord": lambda e: np.asarray(e, dtype=float) @ c / max(float(np.linalg.norm(c)), 1e-300) / 2.0,
    }


@dataclass
class GapSeries:
    radii: np.ndarray
    gaps: np.ndarray
    ci: np.ndarray
    verdict: CstarVerdict
    limit_value: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("radius_or_n,gap,ci\n")
        for r, g, c in zip(self.radii, self.gaps, self.ci):
            buf.write(f"{float(r)!r},{float(g)!r},{float(c)!r}\n")
        return buf.getvalue()


class CstarVerdict(str, enum.Enum):
    CONVERGES = "converges"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


CONVERGES = CstarVerdict.CONVERGES
FAILS = CstarVerdict.FAILS
INCONCLUSIVE = CstarVerdict.INCONCLUSIVE


def classify_gaps(gaps, ci, floor: float = 0.05, tol: float = 1e-2) -> CstarVerdict:
    """Converges: last gap within ``3 ci + tol`` of zero and no significant rise along the way.
    Fails: the last two gaps both exceed ``floor + 3 ci``.  Otherwise inconclusive."""
    g, c = np.asarray(gaps, dtype=float), np.asarray(ci, dtype=float)
    steady = np.all(g[1:] <= g[:-1] + 3 * (c[1:] + c[:-1]) + tol)
    if g[-1] <= 3 * c[-1] + tol and steady:
        return CONVERGES
    if len(g) >= 2 and g[-1] > floor + 3 * c[-1] and g[-2] > floor + 3 * c[-2]:
        return FAILS
    return INCONCLUSIVE


@dataclass
class CstarReport:
    series: dict          # f name -> GapSeries
    t: float
    convention: str
    note: str = "checked for the enumerated test functions and the given t only"

    @property
    def verdict(self) -> CstarVerdict:
        vs = [s.verdict for s in self.series.values()]
        if any(v is FAILS for v in vs):
            return FAILS
        if all(v is CONVERGES for v in vs):
            return CONVERGES
        return INCONCLUSIVE


def check_cstar(system: SdeSystem, model, limit, approach, t: float, n_paths: int, dt: float,
                seed: int, f_suite: Optional[dict] = None, convention: str = KILL,
                floor: float = 0.05, tol: float = 1e-2,
                explosion_radius: float = sde_core.DEFAULT_EXPLOSION_RADIUS,
                workers: int = 1) -> CstarReport:
    """Compare ``P_t f(x_n)`` with the boundary value ``f(limit)`` along ``x_n -> limit``.

    Every approach point reuses the same random streams, so the gaps vary
    smoothly with ``n`` instead of carrying independent noise.
    """
    limit = np.asarray(getattr(limit, "coords", limit), dtype=float)
    approach = np.atleast_2d(np.asarray(approach, dtype=float))
    suite = default_suite(model, limit) if f_suite is None else f_suite
    radii = np.linalg.norm(approach, axis=1)
    names = list(suite)
    fbar = {k: float(np.asarray(suite[k](limit[None, :]))[0]) for k in names}
    gaps = {k: [] for k in names}
    ci = {k: [] for k in names}
    for x in approach:
        # one batch of paths per approach point serves every test function
        ests = estimate_semigroup_suite(system, suite, model, x, t, n_paths, dt, seed,
                                        convention=convention, explosion_radius=explosion_radius,
                                        workers=workers)
        for k in names:
            gaps[k].append(abs(ests[k].value - fbar[k]))
            ci[k].append(ests[k].ci_halfwidth)
    out = {}
    for k in names:
        g, c = np.array(gaps[k]), np.array(ci[k])
        out[k] = GapSeries(radii, g, c, classify_gaps(g, c, floor, tol), fbar[k])
    return CstarReport(out, t, convention)


@dataclass
class C0Report:
    radii: np.ndarray
    p_hat: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    consistent: bool
    threshold: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("radius_or_n,gap,ci\n")
        for r, p, hi in zip(self.radii, self.p_hat, self.ci_upper):
            buf.write(f"{float(r)!r},{float(p)!r},{float(hi - p)!r}\n")
        return buf.getvalue()


def check_c0(system: SdeSystem, K: Ball, t: float, start_radii, n_paths: int, dt: float, seed: int,
             direction=None, threshold: float = 0.05,
             explosion_radius: float = sde_core.DEFAULT_EXPLOSION_RADIUS,
             workers: int = 1) -> C0Report:
    """Estimate ``P{F_s(x) in K for some s <= t}`` for starts ``|x| -> inf``.

    Consistent with vanishing at infinity when the estimates do not rise
    beyond their confidence bands and the last one is below ``threshold``.
    """
    n = K.dim
    u = np.eye(n)[0] if direction is None else np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    radii = np.asarray(start_radii, dtype=float)
    region = Complement(K)
    p, lo, hi = [], [], []
    for r in radii:
        x = r * u
        if not region.contains(x)[0]:
            raise ValueError(f"start {x} lies inside K")
        batch = run_paths(system, x, t, dt, seed, n_paths, stop_set=region,
                          explosion_radius=explosion_radius, workers=workers)
        k = int(batch.exited.sum())
        a, b = clopper_pearson(k, n_paths)
        p.append(k / n_paths)
        lo.append(float(a))
        hi.append(float(b))
    p, lo, hi = map(np.array, (p, lo, hi))
    steady = bool(np.all(lo[1:] <= hi[:-1]))
    return C0Report(radii, p, lo, hi, steady and p[-1] < threshold, threshold)


# --------------------------------------------------------------------------- rotation counterexample


@dataclass
class AngleLaw:
    angles: np.ndarray
    modulus: float
    integration_rel_error: float

    @property
    def angle_variance(self) -> float:
        return float(np.var(self.angles))


def counterexample_angle_law(x0, t: float, n_samples: int, seed: int, cross_check_paths: int = 32,
                             dt: float = 1e-3) -> AngleLaw:
    """Angle and modulus of ``x0 e^{i B_t + t/2}`` for the growing rotation system.

    The angle is ``arg x0 + B_t`` (unwrapped), whose law does not depend on
    ``|x0|``.  A few paths are also integrated numerically and compared with
    the closed form driven by the same increments.
    """
    from .presets import rotation_noise_growing
    x0 = np.asarray(x0, dtype=float).reshape(2)
    base = math.atan2(x0[1], x0[0])
    modulus = float(np.linalg.norm(x0) * math.exp(t / 2))
    if t == 0:
        return AngleLaw(np.full(n_samples, base), float(np.linalg.norm(x0)), 0.0)
    b = RngStream(seed, 0).generator().standard_normal(n_samples) * math.sqrt(t)
    sys = rotation_noise_growing()
    steps = max(1, int(round(t / dt)))
    h = t / steps
    err = 0.0
    for i in range(cross_check_paths):
        dB = sde_core.brownian_increments(RngStream(seed, 1 + i), 1, h, steps)
        x = x0.copy()
        for k in range(steps):
            x = sde_core.step(sys, x, dB[k], h)
        z = complex(*x0) * np.exp(1j * dB.sum() + t / 2)
        err = max(err, abs(complex(*x) - z) / abs(z))
    return AngleLaw(base + b, modulus, err)


# --------------------------------------------------------------------------- point-regular covers


@dataclass
class PointCoverReport:
    passed: bool
    worst_ratio: np.ndarray        # per shell, max over samples of ci_upper / t^2
    shells_checked: int
    delta_verdict: Verdict
    square_sum_verdict: Verdict
    c: float


def _rotate(axis: np.ndarray, angle: float) -> np.ndarray:
    """A unit vector at ``angle`` from ``axis`` (in the plane of axis and the next basis vector)."""
    n = axis.size
    if n == 1:
        return axis.copy()
    e = np.eye(n)[int(np.argmin(np.abs(axis)))]
    perp = e - (e @ axis) * axis
    perp /= np.linalg.norm(perp)
    return math.cos(angle) * axis + math.sin(angle) * perp


def verify_point_cover(system: SdeSystem, cones: Sequence[Cone], deltas, c: float, n_paths: int,
                       dt: float, seed: int, samples: int = 4, t_fractions=(0.25, 0.5, 0.9),
                       explosion_radius: float = sde_core.DEFAULT_EXPLOSION_RADIUS,
                       workers: int = 1) -> PointCoverReport:
    """Check ``P{tau_{A_{n-1}}(x) < t} <= c t^2`` for ``x in A_n \\ A_{n+1}``, ``t < delta_n``.

    ``cones`` must be strictly nested truncated cones around a common axis.
    Samples include the two inner corners of each shell, where exit is fastest.
    """
    if len(cones) < 3:
        raise ValueError("need at least three nested cones")
    for a, b in zip(cones[:-1], cones[1:]):
        if not (b.r_min > a.r_min and b.half_angle < a.half_angle and np.allclose(a.axis, b.axis)):
            raise ValueError("cones must be strictly nested around one axis")
    seq = deltas if isinstance(deltas, DeltaSequence) else DeltaSequence.from_values(deltas)
    sq = DeltaSequence.from_values(seq.values ** 2)
    if len(seq.values) < len(cones):
        raise ValueError("need one delta per cone")
    rng = np.random.default_rng(seed)
    worst = []
    stream = 0
    for n in range(1, len(cones) - 1):
        outer, here, inner = cones[n - 1], cones[n], cones[n + 1]
        pts = [_rotate(here.axis, 0.999 * here.half_angle) * here.r_min * 1.001,
               _rotate(here.axis, 0.0) * here.r_min * 1.001]
        while len(pts) < samples:
            r = here.r_min * (1 + rng.random() * (inner.r_min / here.r_min - 1))
            p = _rotate(here.axis, rng.random() * here.half_angle) * r
            if not inner.contains(p)[0]:
                pts.append(p)
        t_grid = np.asarray(t_fractions, dtype=float) * seq.values[n]
        ratio = 0.0
        for p in pts:
            cdf = estimate_exit_cdf(system, p, outer, t_grid, n_paths, dt, seed,
                                    explosion_radius=explosion_radius, workers=workers,
                                    stream_offset=stream)
            stream += n_paths
            ratio = max(ratio, float(np.max(cdf.ci_upper / t_grid ** 2)))
        worst.append(ratio)
    worst = np.array(worst)
    return PointCoverReport(bool(np.all(worst <= c)), worst, len(worst), seq.divergence_verdict,
                            sq.divergence_verdict, c)
