import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcover import boundary as bd
from diffcover import presets
from diffcover.regions import Ball, Cone


MODELS = [bd.OnePoint(2), bd.OnePoint(3), bd.SphereAtInfinity(2), bd.SphereAtInfinity(3),
          bd.CylinderEnds(), bd.OnePoint(2, "cylinder")]


def random_points(model, n, rng):
    # log-uniform radii so that points near infinity are well represented
    r = 10.0 ** rng.uniform(-3, 12, n)
    if isinstance(model, bd.CylinderEnds) or getattr(model, "manifold", "") == "cylinder":
        return np.stack([r * rng.choice([-1, 1], n), rng.uniform(-math.pi, math.pi, n)], axis=1)
    u = rng.standard_normal((n, model.dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True) * r[:, None]


# --------------------------------------------------------------------------- models


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}{m.dim}{getattr(m, 'manifold', '')}")
def test_metric_axioms(model):
    rng = np.random.default_rng(1)
    a, b, c = (model.embed(random_points(model, 10000, rng)) for _ in range(3))
    dab, dbc, dac = model.distance(a, b), model.distance(b, c), model.distance(a, c)
    assert np.all(dab >= 0)
    assert np.array_equal(dab, model.distance(b, a))
    assert np.all(dac <= dab + dbc + 1e-12)
    assert np.all(model.distance(a, a) == 0)
    # distinct interior points stay distinct after embedding
    assert np.all(dab > 0)


@pytest.mark.parametrize("model", MODELS[:4], ids=lambda m: f"{m.kind}{m.dim}")
def test_distance_to_boundary_decreases_along_rays(model):
    r = np.logspace(0, 12, 60)
    u = np.eye(model.dim)[0]
    e = model.embed(r[:, None] * u)
    d = model.distance(e, model.boundary_projection(u[None, :])[0])
    assert np.all(np.diff(d) < 0)


def test_cylinder_ends_separate():
    m = bd.CylinderEnds()
    plus = m.boundary_projection(np.array([5.0, 0.3]))
    minus = m.boundary_projection(np.array([-5.0, 0.3]))
    assert m.distance(plus, minus) == pytest.approx(2.0)
    far = m.embed(np.array([[1e12, 0.3], [-1e12, 0.3]]))
    assert m.distance(far[0], plus) < 1e-11 and m.distance(far[1], minus) < 1e-11


def test_boundary_point_validation():
    m = bd.SphereAtInfinity(2)
    bd.BoundaryPoint(m, [0.0, 1.0])
    with pytest.raises(ValueError):
        bd.BoundaryPoint(m, [0.0, 0.5])


def test_make_model_rejects_unknown():
    with pytest.raises(ValueError):
        bd.make_model("torus")


def test_embedding_rejects_nonfinite():
    with pytest.raises(ValueError):
        bd.SphereAtInfinity(2).embed(np.array([np.inf, 0.0]))


@pytest.mark.parametrize("model", [bd.SphereAtInfinity(2), bd.SphereAtInfinity(3), bd.CylinderEnds()],
                         ids=["sphere2", "sphere3", "cylinder"])
def test_beta_is_quotient_to_one_point(model):
    rng = np.random.default_rng(2)
    x = random_points(model, 2000, rng)
    x = x[np.linalg.norm(x, axis=1) < 1e6]
    one = bd.one_point_model(model)
    np.testing.assert_allclose(bd.beta(model, model.embed(x)), one.embed(x), atol=1e-9)
    bnd = model.boundary_projection(x[:5])
    assert np.array_equal(bd.beta(model, bnd), np.tile(one.delta, (5, 1)))
    f = bd.gaussian_bump(one.delta, 0.7)
    g = bd.pullback(f, model)
    np.testing.assert_allclose(g(model.embed(x)), f(one.embed(x)), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e8), st.floats(-math.pi, math.pi))
def test_sphere_round_trip(r, phi):
    m = bd.SphereAtInfinity(2)
    x = np.array([r * math.cos(phi), r * math.sin(phi)])
    np.testing.assert_allclose(m.interior_point(m.embed(x)), x, rtol=1e-6)


# --------------------------------------------------------------------------- ball criterion


def test_ball_criterion_on_plane_models():
    seq = [[r, 0.0] for r in (10.0, 1e2, 1e3, 1e4, 1e5)]
    for model in (bd.OnePoint(2), bd.SphereAtInfinity(2)):
        rep = bd.check_ball_convergence(model, seq, 1.0)
        assert rep.holds and rep.values[-1] < 1e-2
        assert np.all(np.diff(rep.values) < 0)


def test_ball_criterion_fails_on_cylinder():
    seq = [[r, 0.0] for r in (10.0, 1e2, 1e3, 1e4, 1e5)]
    rep = bd.check_ball_convergence(bd.CylinderEnds(), seq, 1.0)
    assert not rep.holds and rep.values[-1] > 1.0
    # with the ends collapsed to one point, unit balls do shrink
    assert bd.check_ball_convergence(bd.OnePoint(2, "cylinder"), seq, 1.0).holds


# --------------------------------------------------------------------------- semigroups


def test_semigroup_at_time_zero_is_exact():
    m = bd.SphereAtInfinity(2)
    f = bd.gaussian_bump([0.3, 0.1], 0.5)
    x = np.array([0.7, -0.2])
    est = bd.estimate_semigroup(presets.bm(2), f, m, x, 0.0, 100, 0.01, 0)
    assert est.value == f(m.embed(x[None, :]))[0] and est.ci_halfwidth == 0.0


def test_constant_one_counts_survivors():
    m = bd.OnePoint(1)
    sys_ = presets.quadratic_blowup()
    one = lambda e: np.ones(np.shape(e)[:-1])
    est = bd.estimate_semigroup(sys_, one, m, [0.5], 3.0, 200, 1e-3, 0)
    assert est.exploded_fraction == 1.0 and est.value == 0.0
    est = bd.estimate_semigroup(sys_, one, m, [0.5], 1.0, 200, 1e-3, 0)
    assert est.value == 1.0 - est.exploded_fraction


def test_send_to_delta_uses_boundary_value():
    m = bd.OnePoint(1)
    f = bd.gaussian_bump(m.delta, 0.5)
    est = bd.estimate_semigroup(presets.quadratic_blowup(), f, m, [0.5], 3.0, 50, 1e-3, 0,
                                convention=bd.SEND_TO_DELTA)
    assert est.value == 1.0


def test_send_to_delta_needs_one_point():
    with pytest.raises(ValueError):
        bd.estimate_semigroup(presets.bm(2), lambda e: e[..., 0], bd.SphereAtInfinity(2), [0.0, 0.0],
                              1.0, 10, 0.1, 0, convention=bd.SEND_TO_DELTA)


def test_bound_violation_raises():
    with pytest.raises(bd.ContractViolation):
        bd.estimate_semigroup(presets.bm(2), lambda e: 2 * np.ones(len(e)), bd.SphereAtInfinity(2),
                              [0.0, 0.0], 0.5, 10, 0.1, 0, f_bound=1.0)


def test_bm_gaussian_smoothing_oracle():
    # P_t g(x0) for g(x) = exp(-x^2/w^2) is a Gaussian convolution in closed form
    m = bd.SphereAtInfinity(1)
    w, t, x0 = 0.8, 0.3, 0.4
    g = lambda e: np.exp(-m.interior_point(e)[..., 0] ** 2 / w ** 2)
    est = bd.estimate_semigroup(presets.bm(1), g, m, [x0], t, 40000, 0.05, 7)
    s2 = w * w + 2 * t
    exact = w / math.sqrt(s2) * math.exp(-x0 * x0 / s2)
    assert abs(est.value - exact) <= 3 * est.ci_halfwidth


def test_semigroup_is_deterministic_in_seed():
    m = bd.SphereAtInfinity(2)
    f = bd.gaussian_bump([1.0, 0.0], 0.5)
    a = bd.estimate_semigroup(presets.sublinear(0.5), f, m, [50.0, 0.0], 1.0, 500, 0.01, 3, workers=1)
    b = bd.estimate_semigroup(presets.sublinear(0.5), f, m, [50.0, 0.0], 1.0, 500, 0.01, 3, workers=4)
    assert a.value == b.value


# --------------------------------------------------------------------------- C* and C0


def test_classify_gaps():
    ci = np.full(3, 1e-3)
    assert bd.classify_gaps([0.2, 0.05, 0.001], ci) is bd.CONVERGES
    assert bd.classify_gaps([0.6, 0.6, 0.6], ci) is bd.FAILS
    assert bd.classify_gaps([0.2, 0.1, 0.04], ci) is bd.INCONCLUSIVE
    # a late rise blocks convergence
    assert bd.classify_gaps([0.001, 0.3, 0.005], ci) is not bd.CONVERGES


@pytest.fixture(scope="module")
def sublinear_cstar():
    m = bd.SphereAtInfinity(2)
    approach = np.array([[r, 0.0] for r in (1e2, 1e3, 1e4)])
    return bd.check_cstar(presets.sublinear(0.5), m, m.boundary_projection(approach[-1]), approach,
                          1.0, 10000, 1e-2, 0)


def test_cstar_sublinear_converges(sublinear_cstar):
    assert sublinear_cstar.verdict is bd.CONVERGES
    for s in sublinear_cstar.series.values():
        assert s.gaps[-1] < 1e-2


def test_cstar_rotation_example_fails():
    m = bd.SphereAtInfinity(2)
    approach = np.array([[r, 0.0] for r in (1e2, 1e3, 1e4)])
    rep = bd.check_cstar(presets.rotation_noise_growing(), m, m.boundary_projection(approach[-1]),
                         approach, 1.0, 4000, 1e-2, 0)
    assert rep.verdict is bd.FAILS
    assert rep.series["bump"].gaps[-1] > 0.5


def test_gap_csv_header(sublinear_cstar):
    lines = sublinear_cstar.series["bump"].to_csv().strip().split("\n")
    assert lines[0] == "radius_or_n,gap,ci" and len(lines) == 4


def test_c0_zero_system():
    rep = bd.check_c0(presets.zero(2), Ball([0, 0], 1.0), 1.0, [4, 16, 64], 300, 0.1, 0)
    assert rep.p_hat.tolist() == [0.0, 0.0, 0.0] and rep.consistent


def test_c0_linear_growth():
    rep = bd.check_c0(presets.linear_growth(), Ball([0, 0], 1.0), 0.5, [4, 16, 64], 4000, 1e-3, 0)
    assert rep.consistent and rep.p_hat[-1] == 0.0


def test_c0_cubic_inward_comes_down_from_infinity():
    rep = bd.check_c0(presets.cubic_inward(), Ball([0], 1.0), 1.0, [10, 30, 100], 500, 1e-4, 0)
    assert not rep.consistent and np.all(rep.p_hat > 0.9)


def test_c0_start_inside_rejected():
    with pytest.raises(ValueError):
        bd.check_c0(presets.bm(2), Ball([0, 0], 5.0), 1.0, [1, 10], 10, 0.1, 0)


def test_cstar_and_c0_agree(sublinear_cstar):
    # converging semigroups at infinity leave no mass near a compact set
    assert sublinear_cstar.verdict is bd.CONVERGES
    c0 = bd.check_c0(presets.sublinear(0.5), Ball([0, 0], 1.0), 1.0, [1e2, 1e3, 1e4], 4000, 1e-2, 0)
    assert c0.consistent
    # and the contrapositive: mass that returns from infinity breaks convergence
    m = bd.SphereAtInfinity(1)
    approach = np.array([[10.0], [30.0], [100.0]])
    rep = bd.check_cstar(presets.cubic_inward(), m, m.boundary_projection(approach[-1]), approach,
                         1.0, 500, 1e-4, 0)
    assert rep.verdict is bd.FAILS


# --------------------------------------------------------------------------- rotation counterexample


def test_angle_law_independent_of_modulus():
    laws = [bd.counterexample_angle_law([m, 0.0], 1.0, 20000, 5, cross_check_paths=4) for m in (1.0, 1e6)]
    assert np.array_equal(laws[0].angles, laws[1].angles)
    assert laws[1].modulus == pytest.approx(1e6 * math.exp(0.5))
    assert abs(laws[0].angle_variance - 1.0) < 0.05
    assert laws[0].integration_rel_error < 1e-2


def test_angle_law_at_time_zero():
    law = bd.counterexample_angle_law([0.0, 3.0], 0.0, 10, 0)
    assert np.all(law.angles == math.pi / 2) and law.modulus == 3.0 and law.angle_variance == 0.0


# --------------------------------------------------------------------------- point covers


def nested_cones(n=5):
    return [Cone(np.array([1.0, 0.0]), 10 * 4.0 ** k, math.pi / 4 * (0.5 + 0.5 * 2.0 ** -k))
            for k in range(n)]


def test_point_cover_sublinear_passes():
    rep = bd.verify_point_cover(presets.sublinear(0.5), nested_cones(), [1.0] * 8, 2.0, 2000, 1e-3, 0,
                                t_fractions=(0.5, 0.9))
    assert rep.passed and rep.shells_checked == 3
    assert rep.delta_verdict.value == "divergent"


def test_point_cover_rotation_example_fails():
    rep = bd.verify_point_cover(presets.rotation_noise_growing(), nested_cones(), [1.0] * 8, 2.0,
                                2000, 1e-3, 0, t_fractions=(0.5, 0.9))
    assert not rep.passed and np.all(rep.worst_ratio > 2.0)


def test_point_cover_needs_nesting():
    cones = nested_cones()
    with pytest.raises(ValueError):
        bd.verify_point_cover(presets.bm(2), cones[:2], [1.0] * 8, 2.0, 10, 0.1, 0)
    with pytest.raises(ValueError):
        bd.verify_point_cover(presets.bm(2), [cones[0], cones[2], cones[1]], [1.0] * 8, 2.0, 10, 0.1, 0)
