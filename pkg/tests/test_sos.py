import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustroa.poly import Polynomial, monomial_basis
from robustroa.sos import (ConfigurationError, DegreeConfig, GramVariable, _check_reachable,
                           assemble_program, gram_to_coefficients, lower_to_sdp)


@pytest.fixture(scope="module")
def ex1_k6(vdp):
    return assemble_program(vdp, DegreeConfig(6, 12, 10))


def test_ex1_k6_shape(ex1_k6):
    prog = ex1_k6
    assert len(prog.identities) == 3
    assert len(prog.u_basis) == 28
    sizes = {g.name: len(g.basis) for g in prog.gram_vars}
    # multipliers of degree 12 in two variables have bases of size C(8, 2)
    assert sizes["s1"] == sizes["s3"] == 28
    # the free-standing term must cover s1 * h, i.e. degree 14
    assert sizes["s0"] == 36
    assert sizes["s5_1"] == sizes["s6_1"] == 21
    assert all(len(m) == 2 for g in prog.gram_vars for m in g.basis)


def test_ex2_has_perturbation_multiplier(perturbed2d):
    prog = assemble_program(perturbed2d, DegreeConfig(4, 6, 4))
    names = [g.name for g in prog.gram_vars if g.identity == 0]
    assert names.count("s2_1") == 1
    # identity (i) lives in (x, d), the others in x only
    for g in prog.gram_vars:
        uses_d = any(m[2] for m in g.basis)
        assert uses_d == (g.identity == 0 and len(g.basis) > 1)


def test_rows_are_distinct_identity_monomials(ex1_k6):
    low = lower_to_sdp(ex1_k6)
    expect = set()
    for t, ident in enumerate(ex1_k6.identities):
        monos = set(m for m, _ in ident.lhs_const.items())
        for p in ident.lhs_u:
            monos.update(m for m, _ in p.items())
        for gi in ident.grams:
            g = ex1_k6.gram_vars[gi]
            for a in g.basis:
                for b in g.basis:
                    for phi, _ in g.factor.items():
                        monos.add(tuple(x + y + z for x, y, z in zip(a, b, phi)))
        expect.update((t, m) for m in monos)
    assert set(low.row_keys) == expect
    assert low.problem.m == len(expect)
    assert low.problem.free_dim == 28


def test_objective_is_ball_difference(ex1_k6):
    l = ex1_k6.objective.as_dict()
    assert l[(0, 0)] == pytest.approx(np.pi * 1.0, rel=1e-12)
    assert l[(2, 0)] == pytest.approx(np.pi / 4 * (1.01 ** 2 - 0.01 ** 2), rel=1e-12)
    assert l[(1, 1)] == 0.0


def test_default_degrees(vdp):
    cfg = DegreeConfig.default(vdp, 6)
    # deg f = 3, deg q = 2, deg h = 2
    assert cfg == DegreeConfig(6, 8, 6)


def test_odd_degree_rejected():
    with pytest.raises(ConfigurationError):
        DegreeConfig(4, 7, 4)
    with pytest.raises(ConfigurationError):
        DegreeConfig(0, 4, 4)


def test_degree_deficit_reported(ex1_k6):
    # the free-standing term always grows to cover the lhs, so a deficit
    # only appears when an identity loses its multipliers
    prog = copy.deepcopy(ex1_k6)
    prog.identities[1].grams.clear()
    with pytest.raises(ConfigurationError, match="degree deficit in identity ii_1"):
        _check_reachable(prog)


def test_negative_multiplier_dropped(vdp):
    prog = assemble_program(vdp, DegreeConfig(2, 2, 0))
    names = {g.name for g in prog.gram_vars}
    # s5 = 0 - deg h is negative here
    assert "s0" in names
    assert "s4_1" in names


def test_gram_polynomial_matches_quadratic_form():
    basis = monomial_basis(2, 2)
    g = GramVariable("s", basis, Polynomial.constant(1.0, 2), 0)
    rng = np.random.default_rng(4)
    A = rng.standard_normal((6, 6))
    Q = A @ A.T
    p = g.polynomial(Q)
    for v in rng.uniform(-1, 1, (10, 2)):
        z = np.array([v[0] ** a * v[1] ** b for a, b in basis])
        assert p.eval(v) == pytest.approx(z @ Q @ z, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 3), st.integers(0, 2 ** 31))
def test_gram_round_trip(n, half, seed):
    basis = monomial_basis(n, half)
    g = GramVariable("s", basis, Polynomial.constant(1.0, n), 0)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((len(basis), len(basis)))
    Q = A @ A.T
    coeffs = gram_to_coefficients(g)
    p = Polynomial({m: sum(w * Q[a, b] for a, b, w in form) for m, form in coeffs.items()}, n)
    for v in rng.uniform(-1, 1, (10, n)):
        z = np.array([np.prod(v ** np.array(m)) for m in basis])
        assert p.eval(v) == pytest.approx(z @ Q @ z, rel=1e-9, abs=1e-12)


def test_trivial_assignment_satisfies_ii(vdp):
    # u = 1 makes identity (ii) hold with every multiplier zero
    prog = assemble_program(vdp, DegreeConfig(2, 4, 2))
    coeffs = np.zeros(len(prog.u_basis))
    coeffs[0] = 1.0
    grams = [np.zeros((len(g.basis), len(g.basis))) for g in prog.gram_vars]
    res = prog.residuals(coeffs, grams)
    assert res[1] == 0.0
