import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import frozen
from infharm.diffuse import (
    TensorBump,
    d_solution_field_check,
    d_solution_residual,
    default_schedule,
    hessian_samples,
    integral_criterion,
    support_estimate,
)
from infharm.errors import StepError
from infharm.grid import GridMap, build_domain, sample_analytic
from infharm.solutions import Linear, make_solution

TINY = 1e-7 * 2.0 ** -np.arange(7)  # steps of 1e-9 and below at spacing 0.01


@pytest.fixture(scope="module")
def plane():
    return build_domain([(-1, 1), (-1, 1)], 201)


def test_default_schedules(plane):
    u = sample_analytic("quadratic", plane)
    np.testing.assert_array_equal(default_schedule(u), [8, 4, 2, 1, 0.5, 0.25, 0.125])
    np.testing.assert_array_equal(default_schedule(GridMap(plane, u.values)), [8, 4, 2, 1])


def test_quadratic_samples_identity(plane):
    u = sample_analytic("quadratic", plane)
    S = hessian_samples(u, plane.nearest_node([0.3, -0.2]))
    np.testing.assert_allclose(S.samples, np.broadcast_to(np.eye(2), S.samples.shape), atol=1e-12)
    assert not S.at_infinity.any()
    # grid-only: difference quotients of the (exact) discrete gradient of a quadratic
    g = hessian_samples(GridMap(plane, u.values), plane.nearest_node([0.3, -0.2]))
    np.testing.assert_allclose(g.samples, np.broadcast_to(np.eye(2), g.samples.shape), atol=1e-10)


def test_linear_samples_zero(plane):
    u = sample_analytic(Linear(a=[2.0, -1.0]), plane)
    S = hessian_samples(u, plane.nearest_node([0.1, 0.1]))
    assert np.all(S.samples == 0.0)
    G = hessian_samples(GridMap(plane, u.values), plane.nearest_node([0.1, 0.1]))
    assert np.abs(G.samples).max() <= 1e-10


def test_aronsson_axis_flags_infinity(plane):
    u = sample_analytic("aronsson", plane, acknowledge_singular=True)
    node = plane.nearest_node([0.0, 0.5])
    S = hessian_samples(u, node, TINY, blowup=1e6)
    assert np.all(S.steps[:, 0] < frozen.ARONSSON_INF_STEP)
    assert S.at_infinity.all()
    # coarse steps stay finite: the blow-up is a small-step phenomenon
    assert not hessian_samples(u, node, [8, 4, 2], blowup=1e6).at_infinity.any()


def test_schedule_validation(plane):
    u = sample_analytic("quadratic", plane)
    for bad in ([1, 2, 4], [4, 4, 2], [2, 1, 0], []):
        with pytest.raises(StepError):
            hessian_samples(u, 0, bad)
    with pytest.raises(StepError):
        hessian_samples(GridMap(plane, u.values), 0, [4, 2, 0.5])


def test_samples_symmetric_exactly():
    d = build_domain([(0.2, 1.2), (0.1, 1.1)], 41)
    for name in ("exp_sine", "aronsson", "complex_square"):
        for u in (sample_analytic(name, d), GridMap(d, sample_analytic(name, d).values)):
            S = hessian_samples(u, d.nearest_node([0.5, 0.4]))
            assert np.array_equal(S.samples, np.swapaxes(S.samples, -1, -2))
            assert np.all(S.asymmetry >= 0)


# support estimation

@pytest.mark.parametrize("name,point", [("exp_sine", (0.3, 0.4)), ("quadratic", (0.5, -0.5)),
                                        ("harmonic_poly", (0.2, 0.6)),
                                        ("complex_square", (-0.4, 0.3))])
def test_c2_single_atom(plane, name, point):
    u = sample_analytic(name, plane)
    node = plane.nearest_node(point)
    sup = support_estimate(hessian_samples(u, node))
    assert len(sup.atoms) == 1 and sup.weights.tolist() == [1.0] and sup.infinity_weight == 0.0
    exact = u.source.hessian(plane.coordinates(node)[None])[0]
    assert np.sqrt(np.sum((sup.atoms[0] - exact) ** 2)) <= 20 * 0.125 * plane.spacing[0]


def test_linear_single_zero_atom(plane):
    sup = support_estimate(hessian_samples(sample_analytic(Linear(a=[1.0, 1.0]), plane), 5050))
    assert len(sup.atoms) == 1 and not np.any(sup.atoms[0])


def test_aronsson_axis_all_infinity(plane):
    u = sample_analytic("aronsson", plane, acknowledge_singular=True)
    sup = support_estimate(hessian_samples(u, plane.nearest_node([0.0, 0.5]), TINY))
    assert sup.trivial and sup.infinity_weight == 1.0 and sup.weights.size == 0


def test_support_needs_three_steps(plane):
    S = hessian_samples(sample_analytic("quadratic", plane), 5050, [2, 1])
    with pytest.raises(StepError):
        support_estimate(S)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 3), st.floats(0.0, 1.0), st.floats(1e-3, 10.0), st.floats(-0.9, 0.7), st.floats(-0.9, 0.7))
def test_support_weights_and_separation(which, tail_fraction, eps, x, y):
    d = build_domain([(-1, 1), (-1, 1)], 81)
    name = ["aronsson", "exp_sine", "complex_square", "quadratic"][which]
    u = sample_analytic(name, d, acknowledge_singular=True)
    S = hessian_samples(u, d.nearest_node([x, y]), 2.0 * 2.0 ** -np.arange(8), blowup=50.0)
    sup = support_estimate(S, eps, tail_fraction)
    assert abs(sup.weights.sum() + sup.infinity_weight - 1.0) <= 1e-12
    for a in range(len(sup.atoms)):
        for b in range(a):
            assert np.sqrt(np.sum((sup.atoms[a] - sup.atoms[b]) ** 2)) > eps


def test_dirac_compatibility_rate():
    # forward quotients of a C2 gradient: the sample error is first order in the step
    d = build_domain([(-1, 1), (-1, 1)], 201)
    for name in ("exp_sine", "harmonic_poly", "complex_square"):
        u = sample_analytic(name, d)
        node = d.nearest_node([0.3, 0.2])
        exact = u.source.hessian(d.coordinates(node)[None])[0]
        S = hessian_samples(u, node, 8.0 * 2.0 ** -np.arange(7))
        err = np.sqrt(np.sum((S.samples - exact) ** 2, axis=(1, 2, 3)))
        if err.max() <= 1e-9:
            continue  # constant hessian: quotients exact up to roundoff
        rates = np.log2(err[:-1] / err[1:])
        assert np.all(rates > 0.9), (name, rates)
        sup = support_estimate(S)
        assert len(sup.atoms) == 1 and sup.weights[0] == 1.0


# residuals

def test_residual_linear_zero(plane):
    u = sample_analytic(Linear(a=[3.0, -1.0]), plane)
    node = plane.nearest_node([0.2, 0.2])
    sup = support_estimate(hessian_samples(u, node))
    assert d_solution_residual(u, "infinity_full", node, sup) == 0.0


def test_residual_aronsson_off_axis_first_order():
    res = []
    for r in (101, 201, 401):
        d = build_domain([(0.5, 1.5), (0.5, 1.5)], r)
        u = sample_analytic("aronsson", d)
        node = d.nearest_node([1.0, 0.75])
        sup = support_estimate(hessian_samples(u, node))
        res.append(d_solution_residual(u, "infinity_tangential", node, sup))
    assert res[-1] <= 1.0 * 0.125 / 400
    assert res[0] / res[-1] > 3.0


def test_residual_half_square(plane):
    u = sample_analytic("quadratic", plane)
    node = plane.nearest_node([1.0, 0.0]) - 2 * 201  # (0.98, 0): keeps forward steps on the grid
    sup = support_estimate(hessian_samples(u, node))
    x = plane.coordinates(node)
    assert d_solution_residual(u, "infinity_tangential", node, sup) == pytest.approx(x @ x, rel=1e-12)


def test_trivial_support_residual_zero(plane):
    u = sample_analytic("aronsson", plane, acknowledge_singular=True)
    node = plane.nearest_node([0.0, 0.5])
    sup = support_estimate(hessian_samples(u, node, TINY))
    for op in ("infinity_full", "infinity_tangential", "p_laplacian_expanded(3)"):
        assert d_solution_residual(u, op, node, sup) == 0.0


# integral form

def test_integral_disjoint_bump(plane):
    u = sample_analytic("quadratic", plane)
    S = hessian_samples(u, plane.nearest_node([0.5, 0.0]))
    phi = TensorBump(np.full((1, 2, 2), 10.0), 1.0)
    assert np.all(integral_criterion(u, "infinity_tangential", S.node, S, phi) == 0.0)


def test_integral_linear_any_bump(plane):
    u = sample_analytic(Linear(a=[1.0, 2.0]), plane)
    S = hessian_samples(u, 5050)
    for op in ("infinity_full", "p_laplacian_expanded(3)"):
        for phi in (TensorBump(np.zeros((1, 2, 2)), 1.0), TensorBump(np.ones((1, 2, 2)), 5.0, 2.0)):
            assert np.all(integral_criterion(u, op, 5050, S, phi) == 0.0)


def test_integral_half_square(plane):
    u = sample_analytic("quadratic", plane)
    node = plane.nearest_node([0.9, 0.0])
    S = hessian_samples(u, node)
    phi = TensorBump(np.eye(2)[None], 1.0, inner=0.5)
    x = plane.coordinates(node)
    assert integral_criterion(u, "infinity_tangential", node, S, phi)[0] == pytest.approx(x @ x, rel=1e-12)


def test_integral_skips_infinity(plane):
    u = sample_analytic("aronsson", plane, acknowledge_singular=True)
    node = plane.nearest_node([0.0, 0.5])
    S = hessian_samples(u, node, TINY)
    phi = TensorBump(np.zeros((1, 2, 2)), 1e12)
    assert np.all(integral_criterion(u, "infinity_full", node, S, phi) == 0.0)


def test_sup_integral_consistency():
    # on every corpus member with a vanishing residual, bumps near the atom give a vanishing integral
    d = build_domain([(0.5, 1.5), (0.5, 1.5)], 201)
    for name, op in [("aronsson", "infinity_full"), ("harmonic_poly", "p_laplacian_expanded(2)"),
                     ("radial", "p_laplacian_expanded(4)"), ("exp_sine", "p_laplacian_expanded(2)")]:
        u = sample_analytic(name, d)
        node = d.nearest_node([1.0, 0.8])
        S = hessian_samples(u, node)
        sup = support_estimate(S)
        r = d_solution_residual(u, op, node, sup)
        scale = 1 + np.abs(sup.atoms).max() * np.sum(S.gradient**2)
        assert r <= 1e-2 * scale, name
        # the tail averages steps 1, 1/2, 1/4, 1/8 cells while the atom is the finest
        # sample; with first-order sample errors the mean is at most 8 times r
        for X in sup.atoms:
            phi = TensorBump(X, sup.cluster_eps)
            val = np.abs(integral_criterion(u, op, node, S, phi)).max()
            assert val <= 8 * r + 1e-12 * scale, name


# field check

def test_field_linear_passes():
    d = build_domain([(0, 1), (0, 1)], 41)
    fc = d_solution_field_check(sample_analytic(Linear(a=[0.5, 0.5]), d), "infinity_full")
    assert fc.passed and fc.residuals.max() <= 1e-12


def test_field_aronsson_axes_pass(plane):
    u = sample_analytic("aronsson", plane, acknowledge_singular=True)
    fc = d_solution_field_check(u, "infinity_full", schedule=TINY)
    assert fc.passed
    assert np.count_nonzero(fc.trivial) > 0
    pts = plane.coordinates(fc.nodes[fc.trivial])
    assert np.all(np.min(np.abs(pts), axis=1) <= 1e-12)  # trivial nodes lie on the axes


def test_field_half_square_fails(plane):
    u = sample_analytic("quadratic", plane)
    fc = d_solution_field_check(u, "infinity_full")
    assert not fc.passed and fc.exceptional_fraction > 0.9
    x = plane.coordinates(fc.nodes)
    far = np.sum(x**2, axis=1) > 0.01
    np.testing.assert_allclose(fc.residuals[far], np.sum(x[far] ** 2, axis=1), rtol=1e-9)


def test_field_check_matches_pipeline():
    d = build_domain([(-1, 1), (-1, 1)], 41)
    u = sample_analytic("aronsson", d, acknowledge_singular=True)
    sched = 1e-6 * 2.0 ** -np.arange(5)
    fc = d_solution_field_check(u, "infinity_tangential", schedule=sched, keep_supports=True, blowup=1e4)
    for m in range(0, len(fc.nodes), 37):
        node = int(fc.nodes[m])
        sup = support_estimate(hessian_samples(u, node, sched, blowup=1e4))
        assert d_solution_residual(u, "infinity_tangential", node, sup) == pytest.approx(fc.residuals[m], rel=1e-12, abs=1e-15)
        assert sup.infinity_weight == fc.infinity_weight[m]


def test_multiple_schedules_agree_on_solution():
    d = build_domain([(0.5, 1.5), (0.5, 1.5)], 101)
    u = sample_analytic("aronsson", d)
    for shift in (1.0, 0.75, 0.6):
        assert d_solution_field_check(u, "infinity_full", schedule=shift * default_schedule(u)).passed


def test_make_solution_unknown():
    with pytest.raises(KeyError):
        make_solution("no_such_member")
