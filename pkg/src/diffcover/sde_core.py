"""Integration of Itô / Stratonovich SDEs ``dx = X(x) dB + A(x) dt`` in local coordinates.

Coefficient evaluators are *batched*: ``drift(x)`` receives an array of shape
``(..., n)`` and returns ``(..., n)``; ``diffusion(x)`` returns ``(..., n, m)``
whose column ``j`` is the vector field ``X^j``.  Every evaluator must act on
rows independently, which is what lets the Monte-Carlo engine below advance
thousands of paths with one call while staying bitwise reproducible.

Randomness comes from counter-based Philox streams keyed by
``(seed, stream_index)``; path ``i`` of an experiment always consumes stream
``i`` so results do not depend on how paths are batched or scheduled.
"""
from __future__ import annotations

import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Convention",
    "RngStream",
    "SdeSystem",
    "EllipticOperator",
    "SmoothMap",
    "Status",
    "Trajectory",
    "PathBatch",
    "NotPositiveSemidefinite",
    "brownian_increments",
    "step",
    "simulate",
    "run_paths",
    "elliptic_to_sde",
    "generator_apply",
    "stratonovich_correction",
    "trajectory_to_csv",
]

DEFAULT_EXPLOSION_RADIUS = 1e6

# paths advanced together; fixed so batching never depends on worker count
BLOCK_SIZE = 4096
# cap on pre-drawn normals per block (float64 count)
_CHUNK_FLOATS = 1 << 22

_MASK64 = (1 << 64) - 1


class NotPositiveSemidefinite(ValueError):
    pass


class Convention(str, enum.Enum):
    ITO = "ito"
    STRATONOVICH = "stratonovich"


@dataclass(frozen=True)
class RngStream:
    """One reproducible Gaussian stream; ``stream_index`` is normally the path index."""

    seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        key = (int(self.seed) & _MASK64) | ((int(self.stream_index) & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SdeSystem:
    dim_state: int
    dim_noise: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    convention: Convention = Convention.ITO
    # applied after every step, e.g. a reflecting clamp for radial processes
    guard: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "sde"

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ValueError("dimensions must be positive")
        object.__setattr__(self, "convention", Convention(self.convention))

    def check_shapes(self, x) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim_state)
        a = np.asarray(self.drift(x))
        s = np.asarray(self.diffusion(x))
        if a.shape != x.shape:
            raise ValueError(f"drift returned shape {a.shape}, expected {x.shape}")
        if s.shape != (x.shape[0], self.dim_state, self.dim_noise):
            raise ValueError(
                f"diffusion returned shape {s.shape}, expected "
                f"{(x.shape[0], self.dim_state, self.dim_noise)}"
            )


@dataclass(frozen=True)
class EllipticOperator:
    """``L = sum a_ij d_i d_j + sum b_i d_i`` with batched ``a(x) -> (..., n, n)``."""

    dim: int
    a: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Status:
    kind: str  # "completed" | "exploded" | "exited"
    time: Optional[float] = None
    set_id: Optional[int] = None

    def __str__(self):
        if self.kind == "completed":
            return "completed"
        if self.kind == "exploded":
            return f"exploded@{self.time!r}"
        return f"exited@{self.time!r}" + ("" if self.set_id is None else f"#{self.set_id}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    status: Status


COMPLETED, EXPLODED, EXITED = 0, 1, 2


@dataclass
class PathBatch:
    """Outcome of many independent paths, indexed by stream number."""

    final: np.ndarray        # last grid state, (N, n)
    status: np.ndarray       # COMPLETED / EXPLODED / EXITED
    event_time: np.ndarray   # explosion or exit time, inf when completed
    t_end: float

    @property
    def n_paths(self) -> int:
        return len(self.status)

    @property
    def exploded(self) -> np.ndarray:
        return self.status == EXPLODED

    @property
    def exited(self) -> np.ndarray:
        return self.status == EXITED


def brownian_increments(rng: RngStream, m: int, dt: float, steps: int) -> np.ndarray:
    """I.i.d. N(0, dt I_m) increments, shape ``(steps, m)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return np.empty((0, m))
    return rng.generator().standard_normal((steps, m)) * math.sqrt(dt)


def _apply(system: SdeSystem, x: np.ndarray, dB: np.ndarray, dt: float):
    return np.einsum("...ij,...j->...i", system.diffusion(x), dB) + system.drift(x) * dt


def step(system: SdeSystem, x, dB, dt: float) -> np.ndarray:
    """One Euler-Maruyama (Itô) or Heun (Stratonovich) step; works on single points or batches."""
    x = np.asarray(x, dtype=float)
    dB = np.asarray(dB, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        if system.convention is Convention.ITO:
            out = x + _apply(system, x, dB, dt)
        else:
            pred = x + _apply(system, x, dB, dt)
            out = x + 0.5 * (_apply(system, x, dB, dt) + _apply(system, pred, dB, dt))
    if system.guard is not None:
        out = system.guard(out)
    return out


def _time_grid(t_end: float, dt: float):
    if not dt > 0 or not t_end > 0:
        raise ValueError("t_end and dt must be positive")
    if dt > t_end * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds t_end={t_end}")
    n = max(1, int(math.ceil(t_end / dt - 1e-9)))
    last = t_end - (n - 1) * dt
    return n, last


def _run_block(system, x0, streams, seed, t_end, dt, stop_set, radius, record=False):
    B, n = x0.shape
    m = system.dim_noise
    n_steps, dt_last = _time_grid(t_end, dt)
    gens = [RngStream(seed, s).generator() for s in streams]
    X = x0.copy()
    status = np.zeros(B, dtype=np.int8)
    event = np.full(B, np.inf)
    active = np.ones(B, dtype=bool)
    lev = None if stop_set is None else stop_set.level(X)
    rec_t, rec_x = ([0.0], [X[0].copy()]) if record else (None, None)
    chunk = max(1, min(n_steps, _CHUNK_FLOATS // max(1, B * m)))
    sq, sq_last = math.sqrt(dt), math.sqrt(dt_last)

    for c0 in range(0, n_steps, chunk):
        c = min(chunk, n_steps - c0)
        Z = np.stack([g.standard_normal((c, m)) for g in gens], axis=1)
        for j in range(c):
            k = c0 + j
            last = k == n_steps - 1
            h = dt_last if last else dt
            t_next = t_end if last else (k + 1) * dt
            full = active.all()
            idx = slice(None) if full else np.flatnonzero(active)
            x = X[idx]
            xn = step(system, x, Z[j, idx] * (sq_last if last else sq), h)
            with np.errstate(over="ignore", invalid="ignore"):
                norm = np.sqrt(np.einsum("bi,bi->b", xn, xn))
            boom = ~np.isfinite(norm) | (norm >= radius)
            done = boom
            if stop_set is not None:
                lev_old = lev[idx]
                with np.errstate(over="ignore", invalid="ignore"):
                    lev_new = stop_set.level(xn)
                out = (lev_new >= 0) & ~boom
                theta = np.zeros_like(lev_new)
                with np.errstate(divide="ignore", invalid="ignore"):
                    np.divide(lev_old, lev_old - lev_new, out=theta, where=out)
                t_cross = k * dt + np.clip(theta, 0.0, 1.0) * h
                pos = np.arange(B)[idx]
                status[pos[out]] = EXITED
                event[pos[out]] = t_cross[out]
                lev[idx] = lev_new
                done = boom | out
            pos = np.arange(B)[idx]
            status[pos[boom]] = EXPLODED
            event[pos[boom]] = t_next
            X[idx] = xn
            active[pos[done]] = False
            if record:
                rec_t.append(t_next)
                rec_x.append(X[0].copy())
            if not active.any():
                break
        if not active.any():
            break
    if record:
        return X, status, event, np.array(rec_t), np.array(rec_x)
    return X, status, event


def simulate(
    system: SdeSystem,
    x0,
    t_end: float,
    dt: float,
    rng: RngStream,
    explosion_radius: float = DEFAULT_EXPLOSION_RADIUS,
    stop_set=None,
) -> Trajectory:
    """Integrate one path, recording every grid state.

    Stops at ``t_end``, at the first grid time with ``|x| >= explosion_radius``
    (or a non-finite state), or on leaving ``stop_set``; the exit time is
    linearly interpolated between the two straddling grid points.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, system.dim_state)
    if not np.linalg.norm(x0) < explosion_radius:
        raise ValueError("explosion_radius must exceed |x0|")
    if stop_set is not None and not stop_set.level(x0)[0] < 0:
        raise ValueError("x0 is not inside stop_set")
    X, status, event, times, states = _run_block(
        system, x0, [rng.stream_index], rng.seed, t_end, dt, stop_set,
        explosion_radius, record=True,
    )
    code = status[0]
    if code == EXPLODED:
        st = Status("exploded", float(event[0]))
    elif code == EXITED:
        st = Status("exited", float(event[0]), getattr(stop_set, "set_id", None))
    else:
        st = Status("completed")
    return Trajectory(times=times, states=states, status=st)


def run_paths(
    system: SdeSystem,
    x0,
    t_end: float,
    dt: float,
    seed: int,
    n_paths: int,
    stop_set=None,
    explosion_radius: float = DEFAULT_EXPLOSION_RADIUS,
    stream_offset: int = 0,
    workers: int = 1,
) -> PathBatch:
    """Monte-Carlo engine: ``n_paths`` paths, path ``i`` driven by stream ``stream_offset + i``.

    ``x0`` is either a single point or an ``(n_paths, n)`` array of starts.
    Only the final grid state and the stopping information are kept.
    """
    n = system.dim_state
    x0 = np.asarray(x0, dtype=float)
    starts = np.broadcast_to(x0.reshape(-1, n), (n_paths, n)) if x0.ndim <= 1 else x0
    if starts.shape != (n_paths, n):
        raise ValueError("x0 must be a point or have one row per path")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    _time_grid(t_end, dt)
    blocks = [(b, min(b + BLOCK_SIZE, n_paths)) for b in range(0, n_paths, BLOCK_SIZE)]

    def work(span):
        lo, hi = span
        streams = range(stream_offset + lo, stream_offset + hi)
        return _run_block(system, np.array(starts[lo:hi]), streams, seed, t_end, dt,
                          stop_set, explosion_radius)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return PathBatch(
        final=np.concatenate([p[0] for p in parts]),
        status=np.concatenate([p[1] for p in parts]),
        event_time=np.concatenate([p[2] for p in parts]),
        t_end=float(t_end),
    )


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    scale = np.max(np.abs(a), axis=(-2, -1), keepdims=True)
    if np.any(np.abs(a - sym) > 1e-12 * np.maximum(scale, 1e-300)):
        raise ValueError("diffusion matrix a(x) is not symmetric")
    w, v = np.linalg.eigh(sym)
    if np.any(w < -1e-10):
        raise NotPositiveSemidefinite(f"a(x) has eigenvalue {w.min():.3e} < -1e-10")
    w = np.clip(w, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)


def elliptic_to_sde(op: EllipticOperator) -> SdeSystem:
    """Itô system whose diffusion is the symmetric PSD square root of ``a``.

    The resulting generator is ``1/2 sum (s s^T)_ij d_ij + b . grad``; to match
    ``L`` itself use ``a -> 2a``.
    """

    def diffusion(x):
        return _psd_sqrt(op.a(x))

    return SdeSystem(op.dim, op.dim, drift=op.b, diffusion=diffusion,
                     convention=Convention.ITO, name="elliptic")


@dataclass(frozen=True)
class SmoothMap:
    """A map ``R^n -> R^k`` with batched first/second derivative evaluators.

    ``jacobian(x) -> (..., k, n)``; ``hessian(x) -> (..., k, n, n)``.
    """

    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def check(self, points, rtol: float = 1e-6) -> None:
        """Compare the derivative evaluators with central differences at ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        for x in pts:
            n = x.size
            h = 1e-6 * (1.0 + np.linalg.norm(x))
            J = np.asarray(self.jacobian(x))
            fd = np.stack([(np.asarray(self.value(x + h * e)) - np.asarray(self.value(x - h * e))) / (2 * h)
                           for e in np.eye(n)], axis=-1)
            if np.max(np.abs(fd - J)) > rtol * (1.0 + np.max(np.abs(J))):
                raise ValueError(f"jacobian inconsistent with value at {x}")
            if self.hessian is None:
                continue
            H = np.asarray(self.hessian(x))
            h2 = 1e-5 * (1.0 + np.linalg.norm(x))
            fd2 = np.stack([(np.asarray(self.jacobian(x + h2 * e)) - np.asarray(self.jacobian(x - h2 * e))) / (2 * h2)
                            for e in np.eye(n)], axis=-1)
            if np.max(np.abs(fd2 - H)) > rtol * (1.0 + np.max(np.abs(H))):
                raise ValueError(f"hessian inconsistent with jacobian at {x}")


def stratonovich_correction(system: SdeSystem, x) -> np.ndarray:
    """``1/2 sum_k (DX^k)(X^k)`` by central differences, step ``1e-5 (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    S = system.diffusion(x)
    h = 1e-5 * (1.0 + np.linalg.norm(x, axis=-1))[..., None]
    out = np.zeros_like(x)
    for k in range(system.dim_noise):
        v = S[..., :, k]
        plus = system.diffusion(x + h * v)[..., :, k]
        minus = system.diffusion(x - h * v)[..., :, k]
        out = out + (plus - minus) / (2 * h)
    return 0.5 * out


def generator_apply(system: SdeSystem, phi: SmoothMap, x) -> np.ndarray:
    """Generator of ``system`` applied to each component of ``phi`` at ``x``.

    Itô: ``1/2 sum_k D^2 phi(X^k, X^k) + D phi(A)``.  Stratonovich adds the
    drift correction ``1/2 sum_k D phi((DX^k) X^k)``.
    """
    if phi.hessian is None:
        raise ValueError("generator_apply needs a second-derivative evaluator")
    x = np.asarray(x, dtype=float)
    S = system.diffusion(x)
    A = system.drift(x)
    J = np.asarray(phi.jacobian(x))
    H = np.asarray(phi.hessian(x))
    if system.convention is Convention.STRATONOVICH:
        A = A + stratonovich_correction(system, x)
    second = 0.5 * np.einsum("...kij,...im,...jm->...k", H, S, S)
    return second + np.einsum("...ki,...i->...k", J, A)


def trajectory_to_csv(traj: Trajectory) -> str:
    """``t,x1,...,xn,status`` with the final status on every row."""
    n = traj.states.shape[1]
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"x{i + 1}" for i in range(n)] + ["status"]) + "\n")
    tag = str(traj.status)
    for t, x in zip(traj.times, traj.states):
        buf.write(",".join([repr(float(t))] + [repr(float(v)) for v in x] + [tag]) + "\n")
    return buf.getvalue()
