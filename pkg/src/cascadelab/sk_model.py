"""Finite-size mixed p-spin Hamiltonians and exact free energies.

The Hamiltonian is the Gaussian field on the hypercube with covariance

    E H(sigma1) H(sigma2) = N xi(R_{1,2}),

realized by collapsing the p-spin sums onto the monomial basis: every
index tuple (i_1..i_p) contributes to the monomial sigma_S where S is the
set of sites appearing an odd number of times, so H = sum_S A_S sigma_S
with independent A_S ~ N(0, var_S).  Self-interactions (repeated indices)
are kept, which is exactly what makes the covariance N xi(R) without 1/N
corrections.  Free energies are exact per disorder draw: the 2^N-term
log-sum is enumerated, and randomness enters only through the disorder.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .mixture import MixtureFunction
from .seeding import MODULE_SK, derive_rng, run_replicas
from .stats import CheckRecord, Estimate

MAX_SITES = 14
MAX_POWER = 4


def _check_size(N: int, mix: MixtureFunction) -> None:
    if not 1 <= N <= MAX_SITES:
        raise ValueError(f"N = {N} outside 1..{MAX_SITES}")
    if mix.max_power > MAX_POWER:
        raise ValueError(
            f"mixture power {mix.max_power} exceeds the enumeration limit {MAX_POWER}"
        )


@lru_cache(maxsize=None)
def _tuple_counts(N: int, p: int):
    """Number of index p-tuples over N sites whose odd-count set is each mask."""
    counts: dict[int, int] = {}
    for tup in itertools.product(range(N), repeat=p):
        mask = 0
        for i in tup:
            mask ^= 1 << i
        counts[mask] = counts.get(mask, 0) + 1
    return counts


def monomial_variances(N: int, mix: MixtureFunction) -> dict:
    """Variance of the Gaussian coefficient of each monomial sigma_S.

    Keys are site-set bitmasks (bit i set means site i is in S); mask 0 is
    the spin-independent term produced by fully paired indices.  Summing
    var_S * sigma_S(s1) * sigma_S(s2) over S gives N xi(R) exactly.
    """
    _check_size(N, mix)
    out: dict[int, float] = {}
    for p, beta in mix.coefficients:
        if beta == 0.0:
            continue
        scale = beta**2 * N ** (-(p - 1))
        for mask, count in _tuple_counts(N, p).items():
            out[mask] = out.get(mask, 0.0) + scale * count
    return out


def monomial_signs(N: int, masks) -> np.ndarray:
    """Matrix of sigma_S values, one row per spin configuration.

    Row s encodes sigma_i = 1 - 2 * bit_i(s); column j is the product of
    the sigma_i over the sites of masks[j].
    """
    bits = (np.arange(2**N)[:, None] >> np.arange(N)[None, :]) & 1
    cols = []
    for mask in masks:
        sites = [i for i in range(N) if (mask >> i) & 1]
        parity = bits[:, sites].sum(axis=1) % 2 if sites else np.zeros(2**N, int)
        cols.append(1.0 - 2.0 * parity)
    return np.stack(cols, axis=1) if cols else np.zeros((2**N, 0))


def spin_sums(N: int) -> np.ndarray:
    """sum_i sigma_i for every configuration, in the same row order."""
    bits = (np.arange(2**N)[:, None] >> np.arange(N)[None, :]) & 1
    return (N - 2 * bits.sum(axis=1)).astype(float)


def spin_matrix(N: int) -> np.ndarray:
    """All configurations as +-1 rows, shape (2^N, N)."""
    bits = (np.arange(2**N)[:, None] >> np.arange(N)[None, :]) & 1
    return (1 - 2 * bits).astype(float)


@dataclass
class HamiltonianTable:
    """One disorder realization: 2^N Hamiltonian values and coefficients."""

    N: int
    mixture: MixtureFunction
    masks: tuple
    coefficients: np.ndarray
    values: np.ndarray


def sample_hamiltonian(N: int, mixture: MixtureFunction, seed) -> HamiltonianTable:
    """Draw one disorder realization as a table over all 2^N configurations."""
    _check_size(N, mixture)
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed, MODULE_SK)
    variances = monomial_variances(N, mixture)
    masks = tuple(sorted(variances))
    stds = np.sqrt([variances[m] for m in masks])
    coefficients = rng.standard_normal(len(masks)) * stds
    values = monomial_signs(N, masks) @ coefficients
    return HamiltonianTable(
        N=N, mixture=mixture, masks=masks, coefficients=coefficients, values=values
    )


def covariance_exact(N: int, mix: MixtureFunction, sigma1, sigma2) -> float:
    """E H(sigma1) H(sigma2) computed from the monomial variances."""
    sigma1 = np.asarray(sigma1)
    sigma2 = np.asarray(sigma2)
    total = 0.0
    for mask, var in monomial_variances(N, mix).items():
        sites = [i for i in range(N) if (mask >> i) & 1]
        total += var * float(np.prod(sigma1[sites]) * np.prod(sigma2[sites]))
    return total


def _covariance_chunk(args, master, start, stop):
    N, mixture, sigma1, sigma2 = args
    variances = monomial_variances(N, mixture)
    masks = tuple(sorted(variances))
    stds = np.sqrt([variances[m] for m in masks])
    signs = monomial_signs(N, masks)
    idx1 = _config_index(sigma1)
    idx2 = _config_index(sigma2)
    out = np.empty(stop - start)
    for rep in range(start, stop):
        rng = derive_rng(master, MODULE_SK, rep)
        coef = rng.standard_normal(len(masks)) * stds
        out[rep - start] = float((signs[idx1] @ coef) * (signs[idx2] @ coef))
    return out


def _config_index(sigma) -> int:
    return int(sum((1 << i) for i, s in enumerate(sigma) if s < 0))


def hamiltonian_covariance(
    N: int, mix: MixtureFunction, sigma1, sigma2, replicas: int, seed: int
) -> Estimate:
    """Monte Carlo estimate of E H(sigma1) H(sigma2) / N over disorder."""
    _check_size(N, mix)
    vals = run_replicas(
        _covariance_chunk, (N, mix, tuple(sigma1), tuple(sigma2)), seed, replicas
    )
    return Estimate.from_values(vals / N)


@dataclass
class FreeEnergyEstimate:
    """Disorder average of the exact per-site log-partition."""

    N: int
    estimate: Estimate

    @property
    def mean(self) -> float:
        return self.estimate.mean

    @property
    def std_error(self) -> float:
        return self.estimate.std_error


def log_partition(table: HamiltonianTable, h: float) -> float:
    """log sum_sigma exp(H(sigma) + h sum_i sigma_i), exact."""
    return float(logsumexp(table.values + h * spin_sums(table.N)))


def _free_energy_chunk(args, master, start, stop):
    N, mixture, h = args
    shift = h * spin_sums(N)
    out = np.empty(stop - start)
    for rep in range(start, stop):
        rng = derive_rng(master, MODULE_SK, rep)
        table = sample_hamiltonian(N, mixture, rng)
        out[rep - start] = float(logsumexp(table.values + shift)) / N
    return out


def exact_free_energy(
    N: int, mixture: MixtureFunction, h: float, disorder_replicas: int, seed: int
) -> FreeEnergyEstimate:
    """F_N = N^{-1} E log Z_N, exact inner enumeration, MC over disorder."""
    _check_size(N, mixture)
    if disorder_replicas < 200:
        raise ValueError("disorder_replicas must be >= 200")
    vals = run_replicas(_free_energy_chunk, (N, mixture, h), seed, disorder_replicas)
    return FreeEnergyEstimate(N=N, estimate=Estimate.from_values(vals))


def verify_bound(
    N: int,
    mixture: MixtureFunction,
    h: float,
    disorder_replicas: int,
    quad,
    seed: int,
    rsb=None,
    optimize_k: int | None = None,
) -> CheckRecord:
    """Check F_hat_N <= B + 3 SE against a supplied or optimized bound.

    The inequality is one-sided: the finite-N free energy sits below the
    bound up to statistical error, with no credit for how far below.
    """
    from .recursion import guerra_bound, optimize_bound

    if (rsb is None) == (optimize_k is None):
        raise ValueError("supply exactly one of rsb or optimize_k")
    if rsb is not None:
        bound = guerra_bound(rsb, mixture, h, quad)
        extras = {"k": rsb.k, "mode": "fixed"}
    else:
        opt = optimize_bound(mixture, h, optimize_k, quad)
        bound = opt.value
        extras = {
            "k": optimize_k,
            "mode": "optimized",
            "params_m": list(opt.params.m),
            "params_q": list(opt.params.q),
        }
    fe = exact_free_energy(N, mixture, h, disorder_replicas, seed)
    tolerance = 3.0 * fe.std_error
    margin = bound - fe.mean
    extras["margin"] = margin
    return CheckRecord(
        name="free_energy_bound",
        lhs=fe.mean,
        lhs_se=fe.std_error,
        rhs=bound,
        rhs_se=0.0,
        tolerance=tolerance,
        passed=bool(fe.mean - bound <= tolerance),
        extras=extras,
    )
