"""First-exit-time estimation, quadratic tail checks and delta-sequence certificates."""
from __future__ import annotations

import io
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import sde_core
from .sde_core import RngStream, SdeSystem, run_paths, step
from .stats import Verdict, clopper_pearson, doubling_verdict


class InsufficientSequence(ValueError):
    pass


@dataclass
class ExitTimeCdf:
    t_grid: np.ndarray
    p_hat: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n_paths: int
    censored_fraction: float
    exploded_fraction: float = 0.0

    @property
    def survival(self) -> np.ndarray:
        """Dirichlet survival ``P_t^U 1(x0)``; ``1 - survival == p_hat`` by construction."""
        return 1.0 - self.p_hat

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,p_hat,ci_lo,ci_hi\n")
        for row in zip(self.t_grid, self.p_hat, self.ci_lower, self.ci_upper):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def cdf_from_times(times, t_grid, n_paths: Optional[int] = None, exploded: int = 0) -> ExitTimeCdf:
    """Empirical ``P{tau < t}`` with 95% Clopper-Pearson bounds; ``inf`` marks no exit."""
    times = np.asarray(times, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    n = len(times) if n_paths is None else n_paths
    srt = np.sort(times)
    counts = np.searchsorted(srt, t_grid, side="left")
    lo, hi = clopper_pearson(counts, n)
    return ExitTimeCdf(
        t_grid=t_grid, p_hat=counts / n, ci_lower=np.asarray(lo, dtype=float),
        ci_upper=np.asarray(hi, dtype=float), n_paths=n,
        censored_fraction=float(np.mean(~(times <= t_grid.max()))) if n else 0.0,
        exploded_fraction=exploded / n if n else 0.0,
    )


def estimate_exit_cdf(system: SdeSystem, x0, region, t_grid, n_paths: int, dt: float, seed: int,
                      explosion_radius: float = sde_core.DEFAULT_EXPLOSION_RADIUS,
                      workers: int = 1, stream_offset: int = 0) -> ExitTimeCdf:
    """Monte-Carlo first-exit CDF of ``region`` started from ``x0``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) == 0 or np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0:
        raise ValueError("t_grid must be positive and strictly increasing")
    x0 = np.asarray(x0, dtype=float).reshape(system.dim_state)
    if not region.level(x0)[0] < 0:
        raise ValueError("x0 must lie inside the region")
    batch = run_paths(system, x0, float(t_grid[-1]), dt, seed, n_paths, stop_set=region,
                      explosion_radius=explosion_radius, workers=workers,
                      stream_offset=stream_offset)
    times = np.where(batch.exited, batch.event_time, np.inf)
    return cdf_from_times(times, t_grid, exploded=int(batch.exploded.sum()))


def bm_interval_exit_cdf(t, half_width: float = 1.0, terms: int = 50) -> np.ndarray:
    """``P{tau < t}`` for standard 1-D Brownian motion from 0 leaving ``(-a, a)``.

    Method of images: ``P{tau > t} = sum_k (-1)^k [Phi((2k+1)a/sqrt t) - Phi((2k-1)a/sqrt t)]``.
    """
    from scipy.special import ndtr

    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.arange(-terms, terms + 1)[:, None]
    s = np.sqrt(t)[None, :]
    surv = np.sum((-1.0) ** k * (ndtr((2 * k + 1) * half_width / s) - ndtr((2 * k - 1) * half_width / s)), axis=0)
    return 1.0 - surv


@dataclass
class TailReport:
    passed: bool
    max_ratio: float
    violating_t: Optional[float]
    delta: float
    C: float
    checked_t: np.ndarray

    @property
    def smallest_C(self) -> float:
        """Smallest constant consistent with the upper confidence bounds."""
        return self.max_ratio


def check_quadratic_tail(cdf: ExitTimeCdf, delta: float, C: float) -> TailReport:
    """Pass iff ``ci_upper(t) <= C t^2`` at every grid time ``t < delta``."""
    mask = cdf.t_grid < delta
    if not mask.any():
        raise ValueError(f"no grid time below delta={delta}")
    t = cdf.t_grid[mask]
    up = cdf.ci_upper[mask]
    ratio = up / t ** 2
    bad = np.flatnonzero(up > C * t ** 2)
    return TailReport(
        passed=bad.size == 0, max_ratio=float(ratio.max()),
        violating_t=float(t[bad[0]]) if bad.size else None, delta=delta, C=C, checked_t=t,
    )


def hsu_delta0(a: float, cap: float = 1.0) -> float:
    """Largest ``d`` with ``exp(-a/t) <= t^2`` for all ``0 < t < d`` (searched on ``(0, 1]``).

    Equality ``exp(-a/t) = t^2`` means ``a = -2 t ln t``; the left side rises on
    ``(0, 1/e]``, so the smallest root is bracketed there whenever ``a <= 2/e``.
    For larger ``a`` the inequality holds on all of ``(0, 1]`` and ``cap`` is returned.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if a >= 2.0 / math.e:
        return cap
    g = lambda t: -2.0 * t * math.log(t) - a
    lo, hi = 0.0, 1.0 / math.e
    # g(lo+) < 0 <= g(hi); plain bisection down to spacing 1e-16
    while hi - lo > 1e-16 * max(hi, 1e-300) and hi - lo > 1e-300:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return min(hi, cap)


@dataclass
class DeltaSequence:
    values: np.ndarray
    partial_sums: np.ndarray
    divergence_verdict: Verdict
    source: str = "user"

    @classmethod
    def from_values(cls, values, source: str = "user") -> "DeltaSequence":
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or len(v) < 4:
            raise ValueError("need at least 4 terms")
        if np.any(v <= 0) or np.any(np.diff(v) > 0):
            raise ValueError("deltas must be positive and non-increasing")
        ps = np.cumsum(v)
        N = len(v)
        verdict = doubling_verdict(ps[N // 4 - 1], ps[N // 2 - 1], ps[-1])
        return cls(values=v, partial_sums=ps, divergence_verdict=verdict, source=source)

    @property
    def square_sums(self) -> np.ndarray:
        return np.cumsum(self.values ** 2)


def ricci_delta_sequence(K: Callable, c1: float, delta0: float, N: int) -> DeltaSequence:
    """``delta_n = min(c1 / sqrt(K(3n+1)), delta0)``, n = 1..N, with a divergence verdict.

    ``K`` values below 1e-12 count as zero curvature (``delta_n = delta0``).
    """
    if c1 <= 0 or delta0 <= 0:
        raise ValueError("c1 and delta0 must be positive")
    r = 3.0 * np.arange(1, N + 1) + 1.0
    k = np.asarray(K(r), dtype=float) * np.ones_like(r)
    if np.any(k < 0):
        raise ValueError("curvature bound K must be non-negative")
    with np.errstate(divide="ignore"):
        vals = np.where(k < 1e-12, delta0, np.minimum(c1 / np.sqrt(np.maximum(k, 1e-300)), delta0))
    seq = DeltaSequence.from_values(vals, source=f"ricci(c1={c1}, delta0={delta0})")
    return seq


@dataclass
class NonexplosionCertificate:
    bound: float
    p: int
    eps: float
    start_index: int
    t: float
    C: float
    square_sum: float
    verdict: Verdict
    note: str = "divergence of sum(delta) is judged on a finite prefix"

    def bound_for(self, eps: float) -> float:
        """Same certificate arithmetic at another ``eps`` with ``p`` held fixed."""
        return self.C * eps ** 2 * self.square_sum


def nonexplosion_certificate(deltas, C: float, start_index: int, t: float, eps: float
                             ) -> NonexplosionCertificate:
    """Upper bound ``C eps^2 sum_{k <= n+p} delta_k^2`` on ``P{xi(x) < t}`` for ``x`` in ``K_n``.

    ``p`` is the smallest count with ``eps * sum_{i=n+1}^{n+p} delta_i > t``.
    ``deltas`` holds ``delta_1, delta_2, ...``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    seq = deltas if isinstance(deltas, DeltaSequence) else DeltaSequence.from_values(deltas)
    v = seq.values
    n = int(start_index)
    if n < 0 or n >= len(v):
        raise ValueError("start_index outside the sequence")
    run = eps * np.cumsum(v[n:])
    hit = np.flatnonzero(run > t)
    if hit.size == 0:
        raise InsufficientSequence(
            f"eps * sum of {len(v) - n} deltas after index {n} is {run[-1]:.6g} <= t={t}")
    p = int(hit[0]) + 1
    sq = float(np.sum(v[: n + p] ** 2))
    return NonexplosionCertificate(bound=C * eps ** 2 * sq, p=p, eps=eps, start_index=n, t=t, C=C,
                                   square_sum=sq, verdict=seq.divergence_verdict)


def nonexplosion_sweep(deltas, C, start_index, t, eps_values) -> list:
    """Certificates over several ``eps``; sequences that run out are skipped."""
    out = []
    for e in eps_values:
        try:
            out.append(nonexplosion_certificate(deltas, C, start_index, t, e))
        except InsufficientSequence:
            continue
    return out


# --------------------------------------------------------------------------- stopping-time chain


@dataclass
class ChainStats:
    increments: np.ndarray      # (n_paths, k_max): T_k - T_{k-1}, inf when undefined
    exit_times: np.ndarray      # (n_paths, k_max): T_k
    landings: np.ndarray        # (n_paths, k_max): first inner set containing F_{T_k}, -1 if none
    omega_partition_counts: dict
    finite_counts: np.ndarray   # #{T_k < inf} with an assigned landing set
    coverage_violations: int
    exploded: int
    horizon: float

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    def increment_tail(self, k: int, t_grid) -> ExitTimeCdf:
        """``P{T_k - T_{k-1} < t, T_{k-1} < inf}`` over all paths."""
        return cdf_from_times(self.increments[:, k - 1], t_grid)

    def increment_tail_estimates(self, t_grid) -> dict:
        return {k: self.increment_tail(k, t_grid) for k in range(1, self.increments.shape[1] + 1)}

    def to_csv(self, t_grid) -> str:
        buf = io.StringIO()
        buf.write("k,t,p_hat,ci_hi\n")
        for k, cdf in self.increment_tail_estimates(t_grid).items():
            for t, p, hi in zip(cdf.t_grid, cdf.p_hat, cdf.ci_upper):
                buf.write(f"{k},{float(t)!r},{float(p)!r},{float(hi)!r}\n")
        return buf.getvalue()


def _chain_block(system, cover, x0, streams, seed, horizon, dt, k_max, radius):
    B = len(streams)
    m = system.dim_noise
    n_steps, dt_last = sde_core._time_grid(horizon, dt)
    gens = [RngStream(seed, s).generator() for s in streams]
    fam = cover.family
    X = np.repeat(x0[None, :], B, axis=0)
    start = fam.first_inner(x0)
    cur = np.full(B, start)
    cen = np.repeat(fam.center(start)[None, :], B, axis=0)
    rad = np.full(B, fam.outer_radius(start))
    T_prev = np.zeros(B)
    count = np.zeros(B, dtype=np.int64)
    inc = np.full((B, k_max), np.inf)
    T = np.full((B, k_max), np.inf)
    land = np.full((B, k_max), -1, dtype=np.int64)
    active = np.ones(B, dtype=bool)
    gaps = exploded = 0
    chunk = max(1, min(n_steps, sde_core._CHUNK_FLOATS // max(1, B * m)))
    for c0 in range(0, n_steps, chunk):
        c = min(chunk, n_steps - c0)
        Z = np.stack([g.standard_normal((c, m)) for g in gens], axis=1)
        for j in range(c):
            k = c0 + j
            h = dt_last if k == n_steps - 1 else dt
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            x = X[idx]
            xn = step(system, x, Z[j, idx] * math.sqrt(h), h)
            with np.errstate(over="ignore", invalid="ignore"):
                norm = np.linalg.norm(xn, axis=1)
                boom = ~np.isfinite(norm) | (norm >= radius)
                d_old = np.linalg.norm(x - cen[idx], axis=1) - rad[idx]
                d_new = np.linalg.norm(xn - cen[idx], axis=1) - rad[idx]
            X[idx] = xn
            if boom.any():
                exploded += int(boom.sum())
                active[idx[boom]] = False
            for q in np.flatnonzero((d_new >= 0) & ~boom):
                b = idx[q]
                theta = min(max(d_old[q] / (d_old[q] - d_new[q]), 0.0), 1.0)
                tc = k * dt + theta * h
                xc = x[q] + theta * (xn[q] - x[q])
                jj = count[b]
                inc[b, jj] = tc - T_prev[b]
                T_prev[b] = T_prev[b] + inc[b, jj]
                T[b, jj] = T_prev[b]
                new = fam.first_inner(xc)
                if new >= 0 and np.linalg.norm(xn[q] - fam.center(new)) >= fam.outer_radius(new):
                    new = fam.first_inner(xn[q])
                count[b] += 1
                if new < 0:
                    gaps += 1
                    active[b] = False
                    continue
                land[b, jj] = new
                cur[b] = new
                cen[b] = fam.center(new)
                rad[b] = fam.outer_radius(new)
                if count[b] >= k_max:
                    active[b] = False
        if not active.any():
            break
    return inc, T, land, gaps, exploded


def simulate_chain(system: SdeSystem, cover, x0, horizon: float, n_paths: int, dt: float, seed: int,
                   k_max: int = 5, explosion_radius: float = sde_core.DEFAULT_EXPLOSION_RADIUS,
                   workers: int = 1) -> ChainStats:
    """Run the exit/re-entry chain of stopping times ``T_1 < T_2 < ...`` on a weak cover.

    Each path starts in the first inner set containing ``x0``, runs until it
    leaves that set's outer ball, then continues in the first inner set
    containing the (interpolated) exit point, and so on, up to ``k_max`` exits
    or ``horizon``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(system.dim_state)
    if cover.family.first_inner(x0) < 0:
        raise ValueError("x0 lies in no inner set")
    blocks = [(b, min(b + sde_core.BLOCK_SIZE, n_paths)) for b in range(0, n_paths, sde_core.BLOCK_SIZE)]

    def work(span):
        return _chain_block(system, cover, x0, range(span[0], span[1]), seed, horizon, dt, k_max,
                            explosion_radius)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    inc = np.concatenate([p[0] for p in parts])
    T = np.concatenate([p[1] for p in parts])
    land = np.concatenate([p[2] for p in parts])
    omega = Counter()
    for j in range(k_max):
        for s, cnt in zip(*np.unique(land[:, j][land[:, j] >= 0], return_counts=True)):
            omega[(j + 1, int(s))] = int(cnt)
    finite = np.array([int(np.sum(land[:, j] >= 0)) for j in range(k_max)])
    return ChainStats(increments=inc, exit_times=T, landings=land, omega_partition_counts=dict(omega),
                      finite_counts=finite, coverage_violations=sum(p[3] for p in parts),
                      exploded=sum(p[4] for p in parts), horizon=horizon)
