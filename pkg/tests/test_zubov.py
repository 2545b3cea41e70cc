import json

import numpy as np
import pytest

from robustroa import systems
from robustroa.poly import Polynomial
from robustroa.sdp import Status
from robustroa.sos import DegreeConfig
from robustroa.zubov import (Certificate, SpecError, SynthesisFailure, SystemSpec, contains,
                             contains_many, hard_violations, load_spec, spec_hash, synthesize,
                             validate)

# frozen from this solver; Clarabel gives 2.7975116 on the same program
EX1_K6_OBJECTIVE = 2.7975104


def _x(i, n):
    return Polynomial.variable(i, n)


def _linear_spec(alpha=0.25):
    x, y = _x(0, 2), _x(1, 2)
    r2 = x * x + y * y
    return SystemSpec(2, 0, [-x, -y], [r2], [], r2, alpha, 1.01)


def test_bundled_specs_are_valid():
    for name in systems.NAMES:
        spec = systems.load(name)
        assert hard_violations(spec) == []
        soft = [v for v in validate(spec) if not v.hard]
        assert [v.code for v in soft] == ["stability"]


def test_bundled_shapes():
    vdp, p2, p7 = (systems.load(n) for n in systems.NAMES)
    assert (vdp.n, vdp.m, vdp.R, vdp.alpha) == (2, 0, 1.01, 0.01)
    assert (p2.n, p2.m) == (2, 1)
    assert p2.perturb_ball_radius_sq() == pytest.approx(0.01)
    assert (p7.n, p7.m) == (7, 1)
    assert p7.perturb_ball_radius_sq() == pytest.approx(0.25)


def test_even_delta_rejected(vdp):
    spec = SystemSpec(**{**vdp.__dict__, "delta": 2})
    assert "δ must be odd" in [v.message for v in hard_violations(spec)]
    with pytest.raises(SpecError, match="odd"):
        synthesize(spec, DegreeConfig(2, 4, 2))


def test_f_at_origin_must_vanish(vdp):
    f = list(vdp.f)
    f[0] = f[0] + 0.1
    spec = SystemSpec(**{**vdp.__dict__, "f": f})
    assert "f0" in [v.code for v in hard_violations(spec)]


def test_X_must_sit_inside_ball(vdp):
    spec = SystemSpec(**{**vdp.__dict__, "R": 0.9})
    assert "X_in_B" in [v.code for v in hard_violations(spec)]


def test_seed_must_sit_inside_X(vdp):
    spec = SystemSpec(**{**vdp.__dict__, "alpha": 2.0})
    assert "seed_in_X" in [v.code for v in hard_violations(spec)]


def test_missing_perturbation_ball(perturbed2d):
    d = _x(2, 3)
    spec = SystemSpec(**{**perturbed2d.__dict__, "D_polys": [d * d * d * d * 1e4]})
    assert "D_ball" in [v.code for v in hard_violations(spec)]
    fixed = spec.with_perturb_ball(0.01)
    assert fixed.perturb_ball_radius_sq() == pytest.approx(0.01)
    assert hard_violations(fixed) == []


def test_spec_json_round_trip(perturbed2d):
    doc = json.loads(json.dumps(perturbed2d.to_dict()))
    back = SystemSpec.from_dict(doc)
    assert back.f == perturbed2d.f
    assert back.D_polys == perturbed2d.D_polys
    assert back.q == perturbed2d.q


def test_spec_errors():
    with pytest.raises(SpecError):
        SystemSpec.from_dict({"state_vars": ["x"]})
    doc = systems.load("vdp").to_dict()
    doc["dynamics"][0][0]["e"] = [1, 0, 0]
    with pytest.raises(SpecError):
        SystemSpec.from_dict(doc)
    doc = systems.load("vdp").to_dict()
    doc["delta"] = 1.5
    with pytest.raises(SpecError, match="delta"):
        SystemSpec.from_dict(doc)


def test_load_spec_hash(tmp_path):
    src = systems.path("vdp")
    spec, digest = load_spec(src)
    assert digest == spec_hash(src.read_bytes())
    assert spec.state_names == ["x", "y"]


def test_ex1_k6_certificate(cert_vdp6):
    cert = cert_vdp6
    assert cert.status == Status.OPTIMAL.value
    assert cert.objective_value == pytest.approx(EX1_K6_OBJECTIVE, rel=1e-6)
    assert max(cert.identity_residuals) <= 1e-6
    assert cert.min_gram_eigenvalue() >= -1e-6
    assert cert.u.nvars == 2
    assert set(cert.multipliers) >= {"s0", "s1", "s3", "s4_1", "s5_1", "s6_1", "s7_1", "s8_1",
                                      "s9_1", "s10_1_1"}


def test_objective_is_moment_inner_product(cert_vdp6, vdp):
    from robustroa.moments import ball_seed, objective_vector

    mv = objective_vector([m for m, _ in cert_vdp6.u.items()], vdp.R, ball_seed(2, vdp.alpha))
    val = mv.dot([c for _, c in cert_vdp6.u.items()])
    assert val == pytest.approx(cert_vdp6.objective_value, rel=1e-6)


def test_contains_origin_not_boundary(cert_vdp6, vdp):
    assert contains(cert_vdp6, vdp, [0.0, 0.0])
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    ring = np.stack([np.cos(t), np.sin(t)], axis=1)
    assert not contains_many(cert_vdp6, vdp, ring).any()
    # outside the ball nothing is certified
    assert not contains(cert_vdp6, vdp, [1.2, 0.0])
    with pytest.raises(ValueError):
        contains(cert_vdp6, vdp, [0.0])


def test_seed_inside_certified_set(cert_vdp6, cert_pert2, vdp, perturbed2d):
    rng = np.random.default_rng(0)
    for cert, spec in ((cert_vdp6, vdp), (cert_pert2, perturbed2d)):
        d = rng.standard_normal((10_000, 2))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = d * np.sqrt(0.99 * spec.alpha * rng.random(10_000))[:, None]
        assert cert.u.eval_many(pts).max() < 1.0


def test_certificate_dict_round_trip(cert_vdp6, vdp):
    doc = json.loads(json.dumps(cert_vdp6.to_dict()))
    back = Certificate.from_dict(doc, vdp.n, vdp.nvars)
    assert back.u == cert_vdp6.u
    assert back.objective_value == cert_vdp6.objective_value
    assert back.degree_config == cert_vdp6.degree_config
    for a, b in zip(back.grams, cert_vdp6.grams):
        np.testing.assert_array_equal(a.matrix, b.matrix)


def test_linear_system_certificate():
    spec = _linear_spec()
    cert = synthesize(spec, DegreeConfig(2, 2, 2))
    # u = q / alpha is a feasible witness on the seed, so the seed is certified
    r = np.sqrt(0.99 * spec.alpha)
    t = np.linspace(0, 2 * np.pi, 64)
    assert contains_many(cert, spec, np.stack([r * np.cos(t), r * np.sin(t)], axis=1)).all()


def test_unstable_system_certifies_nothing():
    # u = 1 is always feasible, so an unstable system yields an empty certified set
    x, y = _x(0, 2), _x(1, 2)
    r2 = x * x + y * y
    spec = SystemSpec(2, 0, [x, y], [r2], [], r2, 0.25, 1.01)
    cert = synthesize(spec, DegreeConfig(2, 2, 2))
    pts = np.random.default_rng(0).uniform(-1, 1, (10_000, 2))
    assert not contains_many(cert, spec, pts).any()


def test_not_optimal_fails_closed(vdp):
    with pytest.raises(SynthesisFailure) as exc:
        synthesize(vdp, DegreeConfig(6, 12, 10), max_iter=3)
    assert exc.value.status is Status.ITERATION_LIMIT


def test_objective_non_increasing_in_degree(vdp):
    low = synthesize(vdp, DegreeConfig(4, 8, 6)).objective_value
    high = synthesize(vdp, DegreeConfig(6, 12, 10)).objective_value
    assert high <= low + 1e-5
