import math
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from diffcover import exit_times as et
from diffcover import manifolds as mf
from diffcover.stats import Verdict


R = sp.symbols("r", positive=True)


def sym_ratios(expr):
    """(f'/f, f''/f) as numpy callables, differentiated symbolically."""
    return (sp.lambdify(R, sp.simplify(sp.diff(expr, R) / expr), "numpy"),
            sp.lambdify(R, sp.simplify(sp.diff(expr, R, 2) / expr), "numpy"))


SYMBOLIC = [
    (mf.flat(), R),
    (mf.hyperbolic(), sp.sinh(R)),
    (mf.exp_power(2, 1), R * sp.exp(R ** 2 / 2)),
    (mf.exp_power(3, 1), R * sp.exp(R ** 3 / 3)),
    (mf.exp_power(2, 2), R * sp.exp(R ** 2)),
    (mf.power_ricci(6), R * sp.exp(R ** 4 / 4)),
]


@pytest.mark.parametrize("warp,expr", SYMBOLIC, ids=lambda v: getattr(v, "name", str(v)))
def test_warp_derivatives_match_symbolic(warp, expr):
    r = np.linspace(0.05, 3.0, 200)
    dlog, ratio = sym_ratios(expr)
    np.testing.assert_allclose(warp.dlog(r), np.broadcast_to(dlog(r), r.shape), rtol=1e-10)
    np.testing.assert_allclose(warp.ratio(r), np.broadcast_to(ratio(r), r.shape), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(warp.log_f(r), np.log(np.broadcast_to(sp.lambdify(R, expr)(r), r.shape)),
                               rtol=1e-10)


def test_named_curvature_examples():
    r = np.linspace(0.1, 5, 50)
    np.testing.assert_allclose(mf.exp_power(3, 1).ratio(r), r ** 4 + 4 * r)
    np.testing.assert_allclose(mf.exp_power(2, 2).ratio(r), 4 * r ** 2 + 6)


# --------------------------------------------------------------------------- radial process


def test_radial_drift_examples():
    r = np.array([[0.5], [1.0], [4.0]])
    np.testing.assert_allclose(mf.radial_system(mf.RotSymManifold(3, mf.flat())).drift(r), 1 / r)
    np.testing.assert_allclose(mf.radial_system(mf.RotSymManifold(2, mf.hyperbolic())).drift(r),
                               0.5 / np.tanh(r))
    assert np.all(mf.radial_system(mf.RotSymManifold(1, mf.hyperbolic())).drift(r) == 0)


def test_radial_guard_reflects():
    sys_ = mf.radial_system(mf.RotSymManifold(2, mf.flat()), r_min=1e-3)
    out = sys_.guard(np.array([[-0.5], [5e-4], [2.0]]))
    assert np.all(out >= 1e-3) and out[2, 0] == 2.0


def test_radial_domain_error():
    # positive on the construction grid but the log-derivative breaks down beyond r = 60
    w = mf.Warp("broken", log_f=lambda r: np.log(r), dlog=lambda r: 1 / r + np.sqrt(60.0 - r),
                ratio=lambda r: np.zeros_like(r))
    sys_ = mf.radial_system(mf.RotSymManifold(3, w))
    with pytest.raises(mf.ManifoldDomainError):
        sys_.drift(np.array([[70.0]]))


def test_invalid_warps_rejected():
    with pytest.raises(ValueError):
        mf.exp_power(1.5)
    with pytest.raises(ValueError):
        mf.power_ricci(1.0)
    bad_slope = mf.Warp("2r", log_f=lambda r: np.log(2 * r), dlog=lambda r: 1 / r, ratio=np.zeros_like)
    with pytest.raises(ValueError):
        mf.RotSymManifold(2, bad_slope)
    sine = mf.Warp("sin", log_f=lambda r: np.log(np.sin(r)), dlog=lambda r: 1 / np.tan(r),
                   ratio=lambda r: -np.ones_like(r))
    with pytest.raises(ValueError), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mf.RotSymManifold(2, sine)
    with pytest.raises(ValueError):
        mf.RotSymManifold(0, mf.flat())


# --------------------------------------------------------------------------- curvature


def test_curvature_profiles():
    r = np.array([0.5, 1.0, 2.0, 10.0])
    assert np.all(mf.curvature_profile(mf.RotSymManifold(3, mf.flat()))(r) == 0)
    np.testing.assert_allclose(mf.curvature_profile(mf.RotSymManifold(3, mf.hyperbolic()))(r), 2.0)
    np.testing.assert_allclose(mf.curvature_profile(mf.RotSymManifold(2, mf.exp_power(2, 1)))(r), r ** 2 + 3)
    np.testing.assert_allclose(mf.curvature_profile(mf.RotSymManifold(2, mf.power_ricci(6)))(r),
                               r ** 6 + 5 * r ** 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 20), min_size=2, max_size=30))
def test_curvature_profile_is_running_max(rs):
    # ratio with a bump at r = 2: the profile must stay at the bump height afterwards
    w = mf.Warp("bump", log_f=np.log, dlog=lambda r: 1 / r, ratio=lambda r: np.exp(-(np.asarray(r) - 2) ** 2))
    K = mf.curvature_profile(mf.RotSymManifold(2, w))
    r = np.sort(np.asarray(rs))
    k = K(r)
    assert np.all(np.diff(k) >= -1e-15)
    assert np.all(k[r >= 2] == pytest.approx(1.0, abs=1e-5))


def test_assumption_a_verdicts():
    assert mf.assumption_a(lambda r: r ** 2).verdict is Verdict.DIVERGENT
    assert mf.assumption_a(lambda r: r ** 6).verdict is Verdict.CONVERGENT
    assert mf.assumption_a(lambda r: np.zeros_like(r)).verdict is Verdict.DIVERGENT
    rep = mf.assumption_a(lambda r: r ** 2, r_max=1000)
    assert rep.partials[-1] == pytest.approx(math.log(1000), rel=1e-3)


def test_pipeline_consistency():
    # the curvature integral and the induced delta sequence agree on divergence
    for q, expected in ((2, Verdict.DIVERGENT), (6, Verdict.CONVERGENT)):
        prof = mf.curvature_profile(mf.RotSymManifold(2, mf.power_ricci(q)))
        assert mf.assumption_a(prof).verdict is expected
        seq = et.ricci_delta_sequence(prof, 1.0, 1.0, 10 ** 4)
        assert seq.divergence_verdict is expected


# --------------------------------------------------------------------------- volumes


def test_flat_ball_volume():
    man = mf.RotSymManifold(3, mf.flat())
    for Rr in (0.5, 1.0, 3.0):
        assert mf.log_ball_volume(man, Rr) == pytest.approx(math.log(4 / 3 * math.pi * Rr ** 3), abs=1e-5)


def test_hyperbolic_plane_volume_and_comparison_equality():
    man = mf.RotSymManifold(2, mf.hyperbolic())
    vp = mf.volume_profile(man, [1.0, 2.0, 5.0])
    exact = np.log(2 * math.pi * (np.cosh([1.0, 2.0, 5.0]) - 1))
    np.testing.assert_allclose(vp.log_volume, exact, atol=1e-6)
    np.testing.assert_allclose(vp.log_volume, vp.log_comparison, atol=1e-9)
    assert vp.comparison_ok


def test_quadrature_converges():
    man = mf.RotSymManifold(3, mf.exp_power(3, 1))
    a, b = mf.log_ball_volume(man, 3.0, 1e-3), mf.log_ball_volume(man, 3.0, 5e-4)
    assert abs(math.expm1(a - b)) < 1e-3


def test_comparison_bound_holds():
    for w in (mf.exp_power(2, 1), mf.power_ricci(6), mf.flat()):
        vp = mf.volume_profile(mf.RotSymManifold(3, w), [0.5, 1.0, 2.0])
        assert vp.comparison_ok and np.all(vp.log_volume <= vp.log_comparison + 1e-9)


def test_volume_growth_verdicts():
    flat = mf.volume_profile(mf.RotSymManifold(3, mf.flat()), [1.0, 400.0])
    assert flat.grigoryan_verdict is Verdict.DIVERGENT
    fast = mf.volume_profile(mf.RotSymManifold(3, mf.exp_power(3, 1)), [1.0, 2.0], grigoryan_radius=400)
    assert fast.grigoryan_verdict is Verdict.CONVERGENT
    # small balls with Vol < e are left out of the integral and counted
    assert 0 < fast.skipped < 40


def test_volume_growth_warns_when_mostly_skipped():
    with pytest.warns(UserWarning):
        mf.volume_profile(mf.RotSymManifold(3, mf.flat()), [0.5], grigoryan_radius=1.0)


def test_volume_csv():
    vp = mf.volume_profile(mf.RotSymManifold(2, mf.hyperbolic()), [1.0, 2.0])
    assert vp.to_csv().splitlines()[0] == "R,log_volume,log_comparison"


# --------------------------------------------------------------------------- explosion


def test_no_explosion_on_flat_and_hyperbolic():
    for w in (mf.flat(), mf.hyperbolic()):
        res = mf.explosion_experiment(mf.RotSymManifold(3, w), 1.0, 2.0, 2000, 1e-2, 0)
        assert res.n_exploded == 0


def test_fast_growth_explodes():
    res = mf.explosion_experiment(mf.RotSymManifold(3, mf.exp_power(3, 1)), 5.0, 2.0, 2000, 1e-3, 0)
    assert res.fraction >= 0.99 and res.mean_explosion_time < 2.0


def test_explosion_monotone_in_growth():
    # same seed, same noise: a larger outward drift can only explode more
    fr = [mf.explosion_experiment(mf.RotSymManifold(3, mf.exp_power(p, 1)), 1.0, 0.5, 1000, 1e-3, 1).fraction
          for p in (2, 3, 4)]
    assert fr[0] <= fr[1] <= fr[2] and fr[2] > 0
