"""Joint Gibbs systems on the interpolation path and their identities."""

import math

import numpy as np
import pytest

from cascadelab.interpolation import (
    build_coupled_system,
    build_system,
    coupled_n_sequence,
    derivative_check,
    error_term_check,
    gibbs_overlap_mass,
    phi_t,
)
from cascadelab.mixture import RSBParams, make_mixture, sk_mixture
from cascadelab.recursion import QuadratureSpec, phi0
from cascadelab.sk_model import exact_free_energy
from cascadelab.stats import Exact, identity_check

LOG2COSH_HALF = math.log(2.0 * math.cosh(0.5))
QUAD = QuadratureSpec(nodes_per_level=40)

RSB1 = RSBParams.from_interior((0.5,), (0.4,))
RSB2 = RSBParams.from_interior((0.4, 0.8), (0.3, 0.6))


def test_system_construction_invariants():
    system = build_system(3, 0.5, sk_mixture(0.6), RSB2, 20, 0.3, seed=123)
    assert system.gamma.shape == (8, 400)
    assert system.normalization_error() < 1e-10
    assert system.leaf_masses().shape == (20, 20)
    assert system.leaf_masses().sum() == pytest.approx(1.0, abs=1e-10)
    assert system.phi_value() == pytest.approx(system.log_norm / 3.0, rel=1e-12)
    assert np.all(system.gamma >= 0.0)


def test_degenerate_mixture_phi_is_log2cosh():
    mix = make_mixture([(2, 0.0)])
    est = phi_t(2, 0.37, mix, RSB1, 100, 0.5, 50, seed=91)
    rec = identity_check("phi_degenerate", est, Exact(LOG2COSH_HALF))
    assert rec.passed, (est.mean, est.std_error, est.allowance)


def test_degenerate_mixture_phi_ignores_t():
    # with no couplings the interpolation time never enters the weights
    mix = make_mixture([(2, 0.0)])
    a = phi_t(2, 0.2, mix, RSB1, 60, 0.5, 30, seed=92)
    b = phi_t(2, 0.8, mix, RSB1, 60, 0.5, 30, seed=92)
    assert a.mean == b.mean
    assert a.std_error == b.std_error


def test_phi_endpoint_t0_matches_quadrature():
    mix = sk_mixture(0.5)
    est = phi_t(3, 0.0, mix, RSB1, 60, 0.3, 300, seed=93)
    ref = phi0(RSB1, mix, 0.3, QUAD)
    rec = identity_check("phi_t0", est, Exact(ref.phi0))
    assert rec.passed, (est.mean, est.std_error, est.allowance, ref.phi0)


def test_phi_endpoint_t1_matches_enumeration():
    mix = sk_mixture(0.5)
    est = phi_t(3, 1.0, mix, RSB1, 60, 0.3, 300, seed=94)
    fe = exact_free_energy(3, mix, 0.3, 300, seed=95)
    rec = identity_check("phi_t1", est, fe.estimate)
    assert rec.passed, (est.mean, fe.mean, est.allowance)


def test_phi_rejects_endpoint_exponent():
    endpoint = RSBParams.from_interior((1.0,), (0.4,))
    with pytest.raises(ValueError, match="m_k"):
        phi_t(2, 0.5, sk_mixture(0.5), endpoint, 50, 0.0, 10, seed=1)


def test_joint_budget_guards():
    with pytest.raises(ValueError, match="N outside"):
        build_system(9, 0.5, sk_mixture(0.5), RSB1, 20, 0.0, seed=1)
    with pytest.raises(ValueError, match="leaf count"):
        build_system(2, 0.5, sk_mixture(0.5), RSB2, 150, 0.0, seed=1)
    with pytest.raises(ValueError, match="outside \\[0, 1\\]"):
        build_system(2, 1.2, sk_mixture(0.5), RSB1, 20, 0.0, seed=1)


def test_derivative_identity_small():
    report = derivative_check(3, 0.5, sk_mixture(0.5), RSB1, 30, 0.3, 150, seed=7)
    assert report.record.passed, report.record
    # the dropped term is an average of a pointwise nonnegative function
    assert report.delta_term.mean >= -3.0 * report.delta_term.std_error
    # dropping it can only raise the derivative: bound side >= full formula
    bound_side = report.constant_term + report.theta_term.mean
    assert bound_side >= report.formula.mean - 3.0 * report.delta_term.std_error
    assert report.constant_term == pytest.approx(-0.125 / 2.0, rel=1e-12)


def test_derivative_rejects_edge_times():
    with pytest.raises(ValueError, match="outside"):
        derivative_check(2, 0.01, sk_mixture(0.5), RSB1, 20, 0.0, 10, seed=1)


def test_overlap_masses_match_exponent_jumps():
    mix = sk_mixture(0.5)
    rsb = RSBParams.from_interior((0.4, 0.95), (0.3, 0.6))
    expected = {1: 0.4, 2: 0.55, 3: 0.05}
    for r, target in expected.items():
        est = gibbs_overlap_mass(3, 0.9, r, mix, rsb, 80, 0.3, 200, seed=50 + r)
        rec = identity_check(f"gibbs_mass_r{r}", est, Exact(target))
        assert rec.passed, (r, est.mean, est.std_error, est.allowance, target)


def test_overlap_mass_time_invariance():
    mix = sk_mixture(0.5)
    lo = gibbs_overlap_mass(3, 0.2, 1, mix, RSB1, 80, 0.3, 200, seed=58)
    hi = gibbs_overlap_mass(3, 0.8, 1, mix, RSB1, 80, 0.3, 200, seed=59)
    rec = identity_check("mass_t_invariance", lo, hi)
    assert rec.passed, (lo.mean, hi.mean)


def test_overlap_mass_rejects_bad_level():
    with pytest.raises(ValueError, match="r outside"):
        gibbs_overlap_mass(2, 0.5, 3, sk_mixture(0.5), RSB1, 50, 0.0, 10, seed=1)


def test_coupled_exponent_sequence():
    assert coupled_n_sequence(RSB2, 1).m_interior == (0.4, 0.8)
    assert coupled_n_sequence(RSB2, 2).m_interior == (0.2, 0.8)
    assert coupled_n_sequence(RSB2, 2).q_interior == RSB2.q_interior
    with pytest.raises(ValueError, match="r outside"):
        coupled_n_sequence(RSB2, 3)


def test_coupled_system_guards():
    with pytest.raises(ValueError, match="N outside"):
        build_coupled_system(5, 0.5, 1, sk_mixture(0.5), RSB1, 30, 0.0, seed=1)
    with pytest.raises(ValueError, match="outside \\[0, 1\\]"):
        build_coupled_system(2, 1.2, 1, sk_mixture(0.5), RSB1, 30, 0.0, seed=1)


def test_coupled_system_normalized():
    system = build_coupled_system(2, 0.5, 1, sk_mixture(0.6), RSB1, 40, 0.3, seed=17)
    assert system.gamma.shape == (4, 4, 40)
    assert system.normalization_error() < 1e-10


def test_error_term_factorization_small():
    report = error_term_check(2, 0.5, 1, sk_mixture(0.5), RSB1, 40, 0.3, 120, seed=71)
    assert report.record.passed, report.record
    gap = RSB1.m[1] - RSB1.m[0]
    assert report.rhs.mean == pytest.approx(gap * report.coupled_average.mean, rel=1e-12)
    assert report.record.extras["exponent_gap"] == pytest.approx(gap)


def test_error_term_rejects_bad_level():
    with pytest.raises(ValueError, match="r outside"):
        error_term_check(2, 0.5, 2, sk_mixture(0.5), RSB1, 40, 0.3, 10, seed=1)
