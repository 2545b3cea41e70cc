import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustroa.poly import Polynomial
from robustroa.sos import DegreeConfig
from robustroa.verify import (CONVERGED, DIVERGED, LEFT_X, TIMEOUT, ConstantPolicy,
                              DomainDegeneracyError, RoaGrid, UndefinedVolumeError, UniformPolicy,
                              check_certificate, counter_uniform, estimate_max_roa, grid_axes,
                              gram_polynomial, reconstruction_residuals, relative_volume_error,
                              sample_certified, simulate, simulate_batch, trajectory_check)
from robustroa.zubov import Certificate, SystemSpec


def _decay_1d():
    x = Polynomial.variable(0, 1)
    return SystemSpec(1, 0, [-x], [x * x], [], x * x, 0.01, 1.01)


def _decay_2d(rate=1.0):
    x, y = Polynomial.variable(0, 2), Polynomial.variable(1, 2)
    r2 = x * x + y * y
    return SystemSpec(2, 0, [-rate * x, -rate * y], [r2], [], r2, 0.01, 1.01)


def _unit_certificate(spec):
    return Certificate(Polynomial.constant(1.0, spec.n), {}, [], 0.0, DegreeConfig(2, 2, 2), {})


def test_rk4_matches_exponential():
    tr = simulate(_decay_1d(), [1.0], T=1.0, dt=0.01, method="rk4")
    assert tr.times[-1] == pytest.approx(1.0)
    assert tr.states[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-6)
    assert tr.states[0, 0] == 1.0


def test_euler_is_first_order():
    tr = simulate(_decay_1d(), [1.0], T=1.0, dt=0.01, method="euler")
    assert tr.states[-1, 0] == pytest.approx(0.99 ** 100, rel=1e-12)


def test_simulate_divergence_flag():
    x = Polynomial.variable(0, 1)
    spec = SystemSpec(1, 0, [x], [x * x], [], x * x, 0.01, 1.01)
    tr = simulate(spec, [0.5], T=50.0)
    assert tr.status == DIVERGED


def test_bad_step_arguments():
    with pytest.raises(ValueError):
        simulate(_decay_1d(), [1.0], dt=0.0)
    with pytest.raises(ValueError):
        simulate(_decay_1d(), [1.0], method="midpoint")


def test_batch_outcomes():
    x = Polynomial.variable(0, 2)
    y = Polynomial.variable(1, 2)
    r2 = x * x + y * y
    # x grows, y decays: starts on the y axis converge, others leave X
    spec = SystemSpec(2, 0, [x, -y], [r2], [], r2, 0.01, 1.01)
    x0 = np.array([[0.0, 0.9], [0.2, 0.0], [0.0, 0.05]])
    res = simulate_batch(spec, x0, np.arange(3), ConstantPolicy(np.zeros(0)), T=50.0)
    assert list(res) == [CONVERGED, LEFT_X, CONVERGED]
    slow = simulate_batch(_decay_2d(0.01), [[0.5, 0.0]], [0], ConstantPolicy(np.zeros(0)), T=1.0)
    assert slow[0] == TIMEOUT


def test_counter_uniform_is_keyed():
    a = counter_uniform(7, np.arange(1000), 3)
    assert np.array_equal(a, counter_uniform(7, np.arange(1000), 3))
    assert not np.array_equal(a, counter_uniform(8, np.arange(1000), 3))
    assert np.all((a >= 0) & (a < 1))
    # order independence: evaluating a subset gives the same numbers
    assert np.array_equal(a[[5, 2]], counter_uniform(7, np.array([5, 2]), 3))
    big = counter_uniform(0, np.arange(200_000))
    assert abs(big.mean() - 0.5) < 0.005


def test_uniform_policy_stays_in_D(perturbed2d):
    pol = UniformPolicy(perturbed2d, 3)
    d = pol.draw(np.arange(5000), 11)
    assert d.shape == (5000, 1)
    assert np.all(100 * d ** 2 <= 1.0)
    assert d.min() < -0.09 and d.max() > 0.09
    assert np.array_equal(d, pol.draw(np.arange(5000), 11))


def test_grid_lookup():
    ax = grid_axes(4)
    np.testing.assert_allclose(ax, [-0.75, -0.25, 0.25, 0.75])
    inside = np.zeros((4, 4), dtype=bool)
    inside[3, 0] = True
    g = RoaGrid([ax, ax], inside)
    assert g.lookup(np.array([[0.9, -0.9], [0.9, 0.9], [1.0, -1.0]])).tolist() == [True, False, True]


def test_linear_roa_is_the_disk():
    spec = _decay_2d()
    g = estimate_max_roa(spec, resolution=40)
    pts = g.points()
    disk = np.sum(pts ** 2, axis=1) < 1.0
    assert np.array_equal(g.inside.ravel(), disk)


def test_volume_error_of_exact_region():
    spec = _decay_2d()
    g = estimate_max_roa(spec, resolution=100)
    x, y = Polynomial.variable(0, 2), Polynomial.variable(1, 2)
    half = Certificate((x * x + y * y).scale(4.0), {}, [], 0.0, DegreeConfig(2, 2, 2), {})
    ve = relative_volume_error(half, spec, g, n_mc=200_000)
    # certified disk of radius 1/2 inside the unit disk misses 3/4 of it
    assert ve.percent == pytest.approx(75.0, abs=4 * ve.stderr + 1.0)
    empty = RoaGrid(g.axes, np.zeros_like(g.inside))
    with pytest.raises(UndefinedVolumeError):
        relative_volume_error(half, spec, empty, n_mc=1000)


def test_ex1_certificate_passes(cert_vdp6, vdp):
    rep = check_certificate(cert_vdp6, vdp, n_samples=20_000, seed=1)
    assert rep.passed, rep.failures()
    assert rep.containment_violations == 0
    assert rep.reconstruction_residual <= 1e-6
    assert set(rep.identity_residuals) == {"i", "ii_1", "iii_1"}
    assert rep.sample_counts["decrease"] == 20_000
    # containment is checked on points drawn from the certified set itself
    assert rep.sample_counts["containment"] == 20_000
    doc = rep.to_dict()
    assert doc["pass"] is True


def test_independent_residuals_match_stored(cert_vdp6, vdp):
    ours = reconstruction_residuals(cert_vdp6, vdp)
    assert max(ours.values()) == pytest.approx(max(cert_vdp6.identity_residuals), abs=1e-9)


def test_corrupted_gram_is_caught(cert_vdp6, vdp):
    bad = copy.deepcopy(cert_vdp6)
    bad.grams[0].matrix[0, 0] += 1e-3
    rep = check_certificate(bad, vdp, n_samples=2000)
    assert not rep.passed
    assert any("reconstruction residual" in f for f in rep.failures())


def test_gram_polynomial_all_pairs():
    Q = np.array([[1.0, 2.0], [2.0, 3.0]])
    p = gram_polynomial([(0,), (1,)], Q, 1)
    assert p.terms == {(0,): 1.0, (1,): 4.0, (2,): 3.0}


def test_unit_u_margins_are_zero_or_better():
    for spec in (_decay_2d(), _decay_1d()):
        rep = check_certificate(_unit_certificate(spec), spec, n_samples=5000)
        assert rep.min_constraint_margins["decrease"] == 0.0
        assert rep.min_constraint_margins["exterior"] == 0.0
        assert rep.min_constraint_margins["constraint"] >= 0.0
        assert rep.sample_counts["containment"] == 0


def test_degenerate_domain():
    spec = _decay_2d()
    spec.alpha = 1.0
    with pytest.raises(DomainDegeneracyError):
        check_certificate(_unit_certificate(spec), spec, n_samples=10)


def test_sample_count_argument(cert_vdp6, vdp):
    with pytest.raises(ValueError):
        check_certificate(cert_vdp6, vdp, n_samples=0)


def test_reports_are_reproducible(cert_pert2, perturbed2d):
    a = check_certificate(cert_pert2, perturbed2d, n_samples=3000, seed=5).to_dict()
    b = check_certificate(cert_pert2, perturbed2d, n_samples=3000, seed=5).to_dict()
    assert a == b


def test_trajectories_from_certified_points(cert_pert2, perturbed2d):
    counts = trajectory_check(cert_pert2, perturbed2d, n_points=50, n_traces=4, seed=2)
    assert counts["total"] == 200
    assert counts[CONVERGED] == 200
    pts = sample_certified(cert_pert2, perturbed2d, 50, seed=2)
    assert np.all(cert_pert2.u.eval_many(pts) < 1.0)


def test_empty_certified_set_has_no_trajectories():
    spec = _decay_2d()
    counts = trajectory_check(_unit_certificate(spec), spec, n_points=5, n_traces=2)
    assert counts["total"] == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 40), st.integers(0, 10_000))
def test_policy_draws_depend_only_on_keys(seed, step):
    from robustroa import systems

    spec = systems.load("seven_dim")
    pol = UniformPolicy(spec, seed)
    ids = np.arange(20)
    full = pol.draw(ids, step)
    part = pol.draw(ids[::-3], step)
    assert np.array_equal(full[::-3], part)
    assert np.all(4 * full ** 2 <= 1.0)
