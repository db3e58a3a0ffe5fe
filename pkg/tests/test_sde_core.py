import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcover import presets
from diffcover.regions import Ball
from diffcover.sde_core import (
    Convention, EllipticOperator, NotPositiveSemidefinite, RngStream, SdeSystem, SmoothMap,
    brownian_increments, elliptic_to_sde, generator_apply, run_paths, simulate, step,
    stratonovich_correction, trajectory_to_csv,
)


def drift_only(v, convention="ito"):
    v = np.asarray(v, dtype=float)
    return SdeSystem(v.size, 1, drift=lambda x: np.broadcast_to(v, np.shape(x)).copy(),
                     diffusion=lambda x: np.zeros(np.shape(x) + (1,)), convention=convention)


def linear_ode(rate=1.0):
    return SdeSystem(1, 1, drift=lambda x: rate * np.asarray(x), diffusion=lambda x: np.zeros(np.shape(x) + (1,)))


# --------------------------------------------------------------------------- increments


def test_increments_empty():
    assert brownian_increments(RngStream(1, 0), 2, 0.01, 0).shape == (0, 2)


def test_increments_reproducible():
    a = brownian_increments(RngStream(7, 3), 2, 0.01, 500)
    b = brownian_increments(RngStream(7, 3), 2, 0.01, 500)
    assert np.array_equal(a, b)
    c = brownian_increments(RngStream(7, 4), 2, 0.01, 500)
    assert not np.array_equal(a, c)


def test_increments_moments():
    x = brownian_increments(RngStream(11, 0), 1, 0.01, 10 ** 6).ravel()
    assert abs(x.mean()) < 4 * 0.1 / 1e3
    assert abs(x.var() - 0.01) < 0.01 * 0.01


def test_increments_reject_bad_dt():
    with pytest.raises(ValueError):
        brownian_increments(RngStream(0), 1, 0.0, 3)
    with pytest.raises(ValueError):
        brownian_increments(RngStream(0), 1, -1.0, 3)


def test_distinct_streams_uncorrelated():
    a = brownian_increments(RngStream(5, 0), 1, 1.0, 20000).ravel()
    b = brownian_increments(RngStream(5, 1), 1, 1.0, 20000).ravel()
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(20000)


# --------------------------------------------------------------------------- step


@pytest.mark.parametrize("conv", ["ito", "stratonovich"])
def test_step_zero_dynamics(conv):
    sys_ = drift_only([0.0, 0.0], conv)
    x = np.array([1.5, -2.0])
    assert np.array_equal(step(sys_, x, np.array([0.3]), 0.1), x)


@pytest.mark.parametrize("conv", ["ito", "stratonovich"])
def test_step_constant_drift(conv):
    v = np.array([2.0, -1.0])
    x = np.array([0.5, 0.25])
    assert np.allclose(step(drift_only(v, conv), x, np.array([0.7]), 0.125), x + v * 0.125, rtol=0, atol=0)


def test_step_batched_matches_single():
    sys_ = presets.sublinear(0.5)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 2)) * 10
    dB = rng.normal(size=(5, 2)) * 0.1
    batch = step(sys_, X, dB, 0.01)
    for i in range(5):
        assert np.array_equal(batch[i], step(sys_, X[i], dB[i], 0.01))


def _rotation_path(dt, seed, x0=(1.0, 0.0), t=1.0):
    sys_ = presets.rotation_noise_growing()
    n = int(round(t / dt))
    dB = brownian_increments(RngStream(seed, 0), 1, dt, n)
    x = np.array(x0)
    for k in range(n):
        x = step(sys_, x, dB[k], dt)
    exact = complex(*x0) * np.exp(1j * dB.sum() + t / 2)
    return abs(complex(*x) - exact) / abs(exact)


def test_rotation_system_matches_closed_form():
    assert _rotation_path(1e-4, 1) <= 1e-2


def test_rotation_strong_order_one():
    # Heun on commutative noise: error halves with dt (1000 paths, vectorised)
    sys_ = presets.rotation_noise_growing()
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        n = int(round(1 / dt))
        Z = np.stack([brownian_increments(RngStream(3, i), 1, 1e-3, 1000)[:, 0] for i in range(1000)])
        # coarsen the common fine increments so every dt sees the same Brownian paths
        dB = Z.reshape(1000, n, -1).sum(axis=2)
        x = np.tile([1.0, 0.0], (1000, 1))
        for k in range(n):
            x = step(sys_, x, dB[:, k:k + 1], dt)
        exact = np.exp(1j * dB.sum(axis=1) + 0.5)
        errs.append(np.mean(np.abs(x[:, 0] + 1j * x[:, 1] - exact)))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 1.6 <= r1 <= 2.4 and 1.6 <= r2 <= 2.4, errs


# --------------------------------------------------------------------------- simulate


def test_simulate_exponential_flow():
    tr = simulate(linear_ode(), [1.0], 1.0, 1e-4, RngStream(0))
    assert abs(tr.states[-1, 0] - math.e) < 1e-3
    assert tr.times[0] == 0 and len(tr.times) == len(tr.states)
    assert tr.status.kind == "completed"


def test_simulate_euler_richardson_ratio():
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        tr = simulate(linear_ode(), [1.0], 1.0, dt, RngStream(0))
        errs.append(abs(tr.states[-1, 0] - math.e))
    assert 1.7 <= errs[0] / errs[1] <= 2.3
    assert 1.7 <= errs[1] / errs[2] <= 2.3


def test_simulate_quadratic_blowup():
    tr = simulate(presets.quadratic_blowup(0.0), [1.0], 2.0, 1e-4, RngStream(0), explosion_radius=1e6)
    assert tr.status.kind == "exploded"
    assert 0.99 <= tr.status.time <= 1.01
    assert np.linalg.norm(tr.states[-1]) >= 1e6


def test_simulate_zero_system_constant():
    tr = simulate(presets.zero(2), [3.0, 4.0], 1.0, 0.1, RngStream(0))
    assert tr.status.kind == "completed"
    assert np.all(tr.states == [3.0, 4.0])
    assert np.all(np.diff(tr.times) >= 0)


def test_simulate_rejects_dt_above_horizon():
    with pytest.raises(ValueError):
        simulate(presets.zero(1), [0.0], 0.1, 0.2, RngStream(0))


def test_simulate_rejects_small_explosion_radius():
    with pytest.raises(ValueError):
        simulate(presets.zero(1), [5.0], 1.0, 0.1, RngStream(0), explosion_radius=2.0)


def test_simulate_exit_interpolated():
    sys_ = drift_only([2.0, 0.0])
    tr = simulate(sys_, [0.0, 0.0], 2.0, 0.03, RngStream(0), stop_set=Ball([0.0, 0.0], 1.0, set_id=4))
    assert tr.status.kind == "exited" and tr.status.set_id == 4
    assert abs(tr.status.time - 0.5) < 1e-12


def test_trajectory_csv_header():
    tr = simulate(presets.zero(2), [0.0, 0.0], 0.2, 0.1, RngStream(0))
    text = trajectory_to_csv(tr)
    lines = text.strip().split("\n")
    assert lines[0] == "t,x1,x2,status"
    assert len(lines) == 1 + len(tr.times)
    assert lines[-1].endswith(",completed")


# --------------------------------------------------------------------------- run_paths determinism


def test_run_paths_independent_of_workers_and_offsets():
    sys_ = presets.sublinear(0.5)
    n = 9000  # spans three blocks
    a = run_paths(sys_, [10.0, 0.0], 0.05, 1e-3, 42, n, workers=1)
    b = run_paths(sys_, [10.0, 0.0], 0.05, 1e-3, 42, n, workers=4)
    assert np.array_equal(a.final, b.final)
    # path i uses stream i: a sub-run starting at offset 5000 reproduces the tail
    c = run_paths(sys_, [10.0, 0.0], 0.05, 1e-3, 42, 100, stream_offset=5000)
    assert np.array_equal(c.final, a.final[5000:5100])


def test_run_paths_matches_simulate():
    sys_ = presets.bm(2)
    batch = run_paths(sys_, [0.0, 0.0], 0.3, 0.01, 9, 3)
    tr = simulate(sys_, [0.0, 0.0], 0.3, 0.01, RngStream(9, 2))
    assert np.array_equal(batch.final[2], tr.states[-1])


# --------------------------------------------------------------------------- elliptic operators


def _const_op(a, b=None):
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    return EllipticOperator(n, a=lambda x: np.broadcast_to(a, np.shape(x)[:-1] + (n, n)),
                            b=lambda x: np.broadcast_to(b, np.shape(x)).copy())


def test_elliptic_identity_and_diagonal():
    s = elliptic_to_sde(_const_op(np.eye(2))).diffusion(np.zeros((1, 2)))[0]
    assert np.allclose(s, np.eye(2), atol=1e-14)
    s = elliptic_to_sde(_const_op(np.diag([4.0, 9.0]))).diffusion(np.zeros((1, 2)))[0]
    assert np.allclose(s, np.diag([2.0, 3.0]), atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_elliptic_round_trip(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(3, 3))
    a = m @ m.T + 1e-3 * np.eye(3)
    s = elliptic_to_sde(_const_op(a)).diffusion(np.zeros((1, 3)))[0]
    assert np.max(np.abs(s @ s.T - a)) <= 1e-9 * np.max(np.abs(a))
    assert np.max(np.abs(s @ s - a)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


def test_elliptic_rejects_indefinite():
    sys_ = elliptic_to_sde(_const_op(np.diag([1.0, -1e-3])))
    with pytest.raises(NotPositiveSemidefinite):
        sys_.diffusion(np.zeros((1, 2)))


def test_elliptic_clamps_tiny_negative():
    sys_ = elliptic_to_sde(_const_op(np.diag([1.0, -1e-12])))
    s = sys_.diffusion(np.zeros((1, 2)))[0]
    assert np.all(np.isfinite(s))


# --------------------------------------------------------------------------- generator


def _square_norm():
    return SmoothMap(
        value=lambda z: np.sum(np.asarray(z) ** 2, axis=-1, keepdims=True),
        jacobian=lambda z: 2 * np.asarray(z)[..., None, :],
        hessian=lambda z: np.broadcast_to(2 * np.eye(np.shape(z)[-1]), np.shape(z)[:-1] + (1,) + (np.shape(z)[-1],) * 2),
    )


@pytest.mark.parametrize("n", [1, 2, 3])
def test_generator_of_square_norm_under_bm(n):
    phi = _square_norm()
    phi.check(np.random.default_rng(0).normal(size=(4, n)))
    val = generator_apply(presets.bm(n), phi, np.random.default_rng(1).normal(size=(6, n)))
    assert np.allclose(val, n)


def test_generator_linear_map_no_noise():
    M = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
    phi = SmoothMap(lambda z: np.asarray(z) @ M.T, lambda z: np.broadcast_to(M, np.shape(z)[:-1] + M.shape),
                    lambda z: np.zeros(np.shape(z)[:-1] + (3, 2, 2)))
    v = np.array([0.5, -2.0])
    x = np.array([[1.0, 1.0], [-3.0, 2.0]])
    assert np.allclose(generator_apply(drift_only(v), phi, x), np.tile(M @ v, (2, 1)), atol=0)


def test_generator_requires_hessian():
    phi = SmoothMap(lambda z: z, lambda z: np.broadcast_to(np.eye(2), np.shape(z) + (2,)))
    with pytest.raises(ValueError):
        generator_apply(presets.bm(2), phi, np.zeros((1, 2)))


def test_smooth_map_check_catches_wrong_jacobian():
    phi = SmoothMap(lambda z: np.asarray(z) ** 2, lambda z: np.diag(np.asarray(z)))
    with pytest.raises(ValueError):
        phi.check([[1.0, 2.0]])


def test_stratonovich_minus_ito_equals_correction():
    # linear coefficients: X^1(x) = B x, drift = C x
    B = np.array([[0.3, -1.0], [1.0, 0.2]])
    Cm = np.array([[0.1, 0.0], [0.5, -0.4]])
    kw = dict(drift=lambda x: np.asarray(x) @ Cm.T, diffusion=lambda x: (np.asarray(x) @ B.T)[..., None])
    ito = SdeSystem(2, 1, convention="ito", **kw)
    strat = SdeSystem(2, 1, convention="stratonovich", **kw)
    phi = SmoothMap(lambda z: np.stack([np.asarray(z)[..., 0] * np.asarray(z)[..., 1]], -1),
                    lambda z: np.stack([np.asarray(z)[..., 1], np.asarray(z)[..., 0]], -1)[..., None, :],
                    lambda z: np.broadcast_to(np.array([[[0.0, 1.0], [1.0, 0.0]]]), np.shape(z)[:-1] + (1, 2, 2)))
    x = np.random.default_rng(2).normal(size=(5, 2)) * 3
    diff = generator_apply(strat, phi, x) - generator_apply(ito, phi, x)
    # exact correction: 1/2 (DX^1) X^1 = 1/2 B B x
    corr = 0.5 * x @ (B @ B).T
    expected = np.einsum("bki,bi->bk", phi.jacobian(x), corr)
    assert np.max(np.abs(diff - expected)) < 1e-4
    assert np.allclose(stratonovich_correction(strat, x), corr, atol=1e-6)


def test_check_shapes_reports_mismatch():
    bad = SdeSystem(2, 2, drift=lambda x: np.zeros_like(x), diffusion=lambda x: np.zeros(np.shape(x) + (1,)))
    with pytest.raises(ValueError):
        bad.check_shapes(np.zeros((3, 2)))
    presets.sublinear(0.5).check_shapes(np.ones((4, 2)))


def test_convention_is_coerced():
    assert SdeSystem(1, 1, np.zeros_like, lambda x: np.zeros(np.shape(x) + (1,)),
                     convention="stratonovich").convention is Convention.STRATONOVICH
