"""Point process: pair sum, mark invariance, and the moment identities."""

import math

import numpy as np
import pytest

from cascadelab.pd_process import (
    MarkSpec,
    _tilted_marks,
    corollary_moments,
    estimate_pair_sum,
    sample_pd,
    verify_invariance,
)
from cascadelab.seeding import derive_rng
from cascadelab.stats import identity_check

# Frozen oracles, computed independently of the implementation:
#   median of u_1 at m = 0.5: first arrival Gamma_1 ~ Exp(1), so
#   u_1 = (m Gamma_1)^(-1/m) has median (m ln 2)^(-1/m) = 8.3254586576...
U1_MEDIAN_M05 = (0.5 * math.log(2.0)) ** (-2.0)
#   two-point X in {1, 2} equiprobable, m = 0.5: the size-biased law
#   X^m / E X^m picks X = 2 with probability sqrt(2)/(1 + sqrt(2))
TILTED_TWO_FREQ = math.sqrt(2.0) / (1.0 + math.sqrt(2.0))


def test_weights_normalized():
    real = sample_pd(0.5, 100, 3)
    assert real.w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(real.u) <= 0)
    assert real.tail_bound > 0


def test_u1_median_closed_form():
    assert U1_MEDIAN_M05 == pytest.approx(8.32547592, abs=1e-7)
    n = 10_000
    above = 0
    for rep in range(n):
        real = sample_pd(0.5, 10, (101, rep))
        above += real.u[0] > U1_MEDIAN_M05
    # the exceedance count is Binomial(n, 1/2) when the median is right
    assert abs(above - n / 2) <= 3.0 * math.sqrt(n / 4.0)


def test_pair_sum_m03():
    est = estimate_pair_sum(0.3, 10_000, 1500, 7)
    rec = identity_check("pair_sum_m03", est, 0.7)
    assert rec.passed, (est.mean, est.std_error, est.allowance)


def test_pair_sum_m07_needs_tail():
    # heavier truncation: the declared tail allowance must cover it
    est = estimate_pair_sum(0.7, 100_000, 800, 7)
    rec = identity_check("pair_sum_m07", est, 0.3)
    assert rec.passed, (est.mean, est.std_error, est.allowance)


def test_pair_sum_truncation_monotone():
    # same seed: the first n points coincide, so doubling n_max moves the
    # estimate by less than the declared tail allowance
    small = estimate_pair_sum(0.5, 2000, 300, 11)
    large = estimate_pair_sum(0.5, 4000, 300, 11)
    assert abs(small.mean - large.mean) <= small.allowance


def test_pair_sum_input_validation():
    with pytest.raises(ValueError):
        estimate_pair_sum(1.0, 1000, 200, 0)
    with pytest.raises(ValueError):
        estimate_pair_sum(0.5, 1000, 50, 0)


def test_invariance_constant_marks_exact():
    # X constant: both sides are the same function of the same points,
    # so the paired estimates agree realization for realization
    spec = MarkSpec("constant", cx=2.5, cy=0.7)
    for statistic in ("pair_sum", "mean_mark", "max_weight"):
        marked, tilted = verify_invariance(0.5, spec, statistic, 200, 2000, 13)
        assert marked.mean == pytest.approx(tilted.mean, abs=1e-14)


def test_invariance_lognormal_pair_sum():
    spec = MarkSpec("lognormal", sigma_x=0.5, sigma_y=0.5, rho=0.3)
    marked, tilted = verify_invariance(0.5, spec, "pair_sum", 1200, 20_000, 17)
    rec = identity_check("invariance", marked, tilted)
    assert rec.passed, (marked.mean, tilted.mean, rec.tolerance)


def test_invariance_rejects_unknown_statistic():
    with pytest.raises(ValueError):
        verify_invariance(0.5, MarkSpec("constant"), "kurtosis", 200, 1000, 0)


def test_invariance_deterministic():
    spec = MarkSpec("two_point")
    a = verify_invariance(0.4, spec, "max_weight", 150, 1000, 19)
    b = verify_invariance(0.4, spec, "max_weight", 150, 1000, 19)
    assert a[0].mean == b[0].mean and a[1].mean == b[1].mean


def test_tilted_two_point_frequency():
    spec = MarkSpec("two_point", xs=(1.0, 2.0), ys=(0.0, 0.0), p=0.5)
    rng = derive_rng(23, 99)
    n = 40_000
    _, x, _ = _tilted_marks(spec, 0.5, rng, n)
    freq = float((x == 2.0).mean())
    se = math.sqrt(TILTED_TWO_FREQ * (1.0 - TILTED_TWO_FREQ) / n)
    assert abs(freq - TILTED_TWO_FREQ) <= 3.0 * se


def test_corollary_unit_marks():
    # X = Y = 1: the three identities reduce to 1, 1 - m, m
    spec = MarkSpec("constant", cx=1.0, cy=1.0)
    out = corollary_moments(0.5, spec, 1000, 20_000, 29)
    names = [name for name, _, _ in out]
    assert names == ["ratio_mean", "diagonal_square", "off_diagonal"]
    targets = {"ratio_mean": 1.0, "diagonal_square": 0.5, "off_diagonal": 0.5}
    for name, lhs, rhs in out:
        # right sides are exact for constant marks
        assert rhs.mean == pytest.approx(targets[name], abs=1e-12)
        rec = identity_check(name, lhs, rhs)
        assert rec.passed, (name, lhs.mean, rhs.mean)


def test_corollary_scaled_marks():
    # X = 2, Y = 1, m = 0.5: first identity is 1/2 on both sides
    spec = MarkSpec("constant", cx=2.0, cy=1.0)
    out = corollary_moments(0.5, spec, 1000, 20_000, 31)
    name, lhs, rhs = out[0]
    assert rhs.mean == pytest.approx(0.5, abs=1e-12)
    assert identity_check(name, lhs, rhs).passed


def test_corollary_two_point_marks():
    # X in {1, 2}, Y = X: all three identities at 3 combined SE
    spec = MarkSpec("two_point", xs=(1.0, 2.0), ys=(1.0, 2.0), p=0.5)
    out = corollary_moments(0.5, spec, 1500, 20_000, 37)
    for name, lhs, rhs in out:
        rec = identity_check(name, lhs, rhs)
        assert rec.passed, (name, lhs.mean, rhs.mean, rec.tolerance)


def test_corollary_rejects_small_marks():
    spec = MarkSpec("lognormal", shift=0.0)
    with pytest.raises(ValueError, match="X >= 1"):
        corollary_moments(0.5, spec, 1000, 1000, 0)


def test_corollary_rejects_few_replicas():
    with pytest.raises(ValueError):
        corollary_moments(0.5, MarkSpec("constant"), 500, 1000, 0)
