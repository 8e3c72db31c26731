"""Interpolating Gibbs systems joining a spin Hamiltonian to cascade fields.

phi(t) = (1/N) E log sum_{sigma,alpha} w_alpha exp(sqrt(t) H(sigma) +
sqrt(1-t) s^alpha.sigma + h sum_i sigma_i) moves between the cascade
recursion value at t=0 and the finite-size free energy at t=1.  For one
disorder draw the joint measure over (sigma, leaf) is enumerated exactly,
so statistical error comes only from disorder replicas and systematic
error only from cascade truncation, which is corrected and budgeted the
same way the plain cascade estimators do it.

The derivative identity is different: it holds verbatim for the realized
truncated system (its proof is Gaussian integration by parts at fixed
weights, and truncation changes neither the field covariances nor the
Hamiltonian law), so the formula side is evaluated raw, without any
truncation correction, and the only systematic term in that check is the
finite-difference step.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .cascade import (
    Cascade,
    CascadeFields,
    _seed_tuple,
    _stream,
    attach_fields,
    build_cascade,
    prefix_concentrations,
    prefix_cross,
)
from .mixture import MixtureFunction, RSBParams, delta_array, theta
from .seeding import (
    MODULE_COUPLED,
    MODULE_FIELDS,
    MODULE_INTERP,
    MODULE_SK,
    run_replicas,
)
from .sk_model import (
    HamiltonianTable,
    monomial_signs,
    monomial_variances,
    sample_hamiltonian,
    spin_matrix,
    spin_sums,
)
from .stats import CheckRecord, Estimate, identity_check

MAX_JOINT_SITES = 8
MAX_JOINT_LEAVES = 10**4
MAX_JOINT_STATES = 2_500_000
MAX_COUPLED_SITES = 4
MAX_COUPLED_RSB = 2
NORMALIZATION_TOL = 1e-10

# Relative-accuracy envelope for the estimated truncation losses once the
# leaf masses are tilted by the Gibbs factor; the plain-cascade envelope
# plus the measured dispersion of the per-leaf tilt.
TAIL_ACCURACY = 0.10

DERIVATIVE_STEP = 0.02
# Central differences carry a phi'''(t) delta^2 / 6 bias; the third
# derivative stays O(1) at desk-scale couplings, so this is generous.
DERIVATIVE_CURVATURE = 5.0

_OP_PHI = 1
_OP_DERIVATIVE = 2
_OP_MASS = 3
_OP_ERROR_PLAIN = 4
_OP_ERROR_COUPLED = 5


def _check_joint_budget(N: int, rsb: RSBParams, b: int, t: float) -> None:
    if not 1 <= N <= MAX_JOINT_SITES:
        raise ValueError(f"N outside 1..{MAX_JOINT_SITES}")
    if b ** rsb.k > MAX_JOINT_LEAVES:
        raise ValueError(f"leaf count {b ** rsb.k} exceeds {MAX_JOINT_LEAVES}")
    if 2**N * b ** rsb.k > MAX_JOINT_STATES:
        raise ValueError("joint enumeration exceeds the state budget")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t = {t} outside [0, 1]")


def _monomial_data(table: HamiltonianTable):
    """Sign matrix and variance vector aligned with the table's masks."""
    var = monomial_variances(table.N, table.mixture)
    return monomial_signs(table.N, table.masks), np.array(
        [var[m] for m in table.masks]
    )


def _corrected_combo(terms, eps, margin):
    """Value and error budget of sum_j c_j S_j (1 - eps_{l_j})^2.

    ``terms`` holds (level, coefficient, raw level sum) triples.  The
    budget is a two-sided sensitivity sweep: every level loss moved to
    the edge of its margin at once, which dominates the per-level slope
    terms with their signs taken unfavorably.
    """

    def value(e):
        return sum(c * s * (1.0 - e[l]) ** 2 for l, c, s in terms)

    v = value(eps)
    hi = value(np.clip(eps + margin, 0.0, 1.0))
    lo = value(np.clip(eps - margin, 0.0, 1.0))
    return float(v), float(max(abs(hi - v), abs(lo - v)))


@dataclass
class GibbsSystem:
    """Exact joint measure over (sigma, leaf) at interpolation time t."""

    N: int
    t: float
    h: float
    mixture: MixtureFunction
    table: HamiltonianTable
    cascade: Cascade
    fields: CascadeFields
    gamma: np.ndarray  # (2^N, b^k), normalized
    log_norm: float

    @property
    def rsb(self) -> RSBParams:
        return self.cascade.rsb

    @property
    def leaf_count(self) -> int:
        return self.cascade.leaf_count

    def normalization_error(self) -> float:
        return abs(float(self.gamma.sum()) - 1.0)

    def leaf_masses(self) -> np.ndarray:
        """sigma-marginal of Gamma, shaped as the leaf tree (b,)*k."""
        b = self.cascade.b
        return self.gamma.sum(axis=0).reshape((b,) * self.rsb.k)

    def phi_value(self) -> float:
        return self.log_norm / self.N

    def _tilt_statistics(self):
        """Mean per-leaf Gibbs tilt and its sampling error.

        f is normalized so the weighted mean is 1; rho estimates the
        expected tilt of an unseen leaf.  Leaves under one root block
        share tree columns, so the error is taken across the b nearly
        independent level-1 subtree means, not across raw leaves.
        """
        f = self.gamma.sum(axis=0) / self.cascade.leaf_weights_flat()
        blocks = f.reshape(self.cascade.b, -1).mean(axis=1)
        rho = float(f.mean())
        se = float(blocks.std(ddof=1) / np.sqrt(blocks.size))
        return rho, se

    def phi_allowance(self) -> float:
        """Truncation budget for the log-partition value.

        Normalizing the kept weights and dropping the missing tilted
        mass shift the log in opposite directions and cancel exactly
        when the mean tilt rho is 1; the residual log((1-eps)/(1-eps_f))
        is swept over the uncertainty of both the loss estimate and rho.
        """
        eps = float(self.cascade.cumulative_losses()[-1])
        rho, se = self._tilt_statistics()

        def shift(e, p):
            e_f = e * p / (1.0 - e + e * p)
            return np.log((1.0 - e) / (1.0 - e_f))

        center = shift(eps, rho)
        worst = max(
            abs(shift(e, p) - center)
            for e in (eps * (1.0 - TAIL_ACCURACY), min(eps * (1.0 + TAIL_ACCURACY), 0.999))
            for p in (max(rho - 3.0 * se, 1e-12), rho + 3.0 * se)
        )
        return (abs(center) + worst) / self.N

    def loss_profile(self):
        """Tilted cumulative losses and their accuracy margins, l = 0..k.

        The sigma-marginal weights each leaf by its Gibbs factor, so the
        missing mass carries the mean tilt rho of an unseen leaf; the
        margin adds the sampling dispersion of rho to the loss envelope.
        """
        eps = self.cascade.cumulative_losses()
        rho, se = self._tilt_statistics()
        spread = 3.0 * se / rho if rho > 0 else 0.0
        eps_f = eps * rho / (1.0 - eps + eps * rho)
        deep = 1.0 - (1.0 - eps_f[-1]) / (1.0 - eps_f)
        margin = eps_f * (TAIL_ACCURACY + spread) + TAIL_ACCURACY * deep
        margin[0] = 0.0
        return eps_f, margin

    def wedge_mass(self, r: int):
        """Corrected Gamma x Gamma wedge-class mass with its budget."""
        k = self.rsb.k
        if not 1 <= r <= k + 1:
            raise ValueError(f"r outside 1..{k + 1}")
        c = prefix_concentrations(self.leaf_masses())
        eps_f, margin = self.loss_profile()
        if r == k + 1:
            terms = [(k, 1.0, c[k])]
        else:
            terms = [(r - 1, 1.0, c[r - 1]), (r, -1.0, c[r])]
        return _corrected_combo(terms, eps_f, margin)


def build_system(
    N: int,
    t: float,
    mixture: MixtureFunction,
    rsb: RSBParams,
    b: int,
    h: float,
    seed,
) -> GibbsSystem:
    """Enumerate Gamma{(sigma, alpha)} for one disorder realization."""
    _check_joint_budget(N, rsb, b, t)
    base = _seed_tuple(seed)
    cascade = build_cascade(rsb, b, base)
    fields = attach_fields(cascade, mixture, rsb, N, base)
    table = sample_hamiltonian(N, mixture, _stream(base, MODULE_SK))

    spins = spin_matrix(N)
    expo = (
        np.sqrt(t) * table.values[:, None]
        + np.sqrt(1.0 - t) * (spins @ fields.all_fields().T)
        + h * spin_sums(N)[:, None]
        + np.log(cascade.leaf_weights_flat())[None, :]
    )
    log_norm = float(logsumexp(expo))
    gamma = np.exp(expo - log_norm)
    system = GibbsSystem(
        N=N,
        t=t,
        h=h,
        mixture=mixture,
        table=table,
        cascade=cascade,
        fields=fields,
        gamma=gamma,
        log_norm=log_norm,
    )
    if system.normalization_error() > NORMALIZATION_TOL:
        raise AssertionError("joint weights failed to normalize")
    return system


def _phi_chunk(args, master, start, stop):
    N, t, mixture, rsb, b, h = args
    out = np.empty((stop - start, 2))
    for rep in range(start, stop):
        system = build_system(
            N, t, mixture, rsb, b, h, (master, MODULE_INTERP, _OP_PHI, rep)
        )
        out[rep - start, 0] = system.phi_value()
        out[rep - start, 1] = system.phi_allowance()
    return out


def phi_t(
    N: int,
    t: float,
    mixture: MixtureFunction,
    rsb: RSBParams,
    b: int,
    h: float,
    disorder_replicas: int,
    seed: int,
) -> Estimate:
    """Monte Carlo over disorder of the exact inner log-sum."""
    _check_joint_budget(N, rsb, b, t)
    rsb.requires_simulable()
    vals = run_replicas(_phi_chunk, (N, t, mixture, rsb, b, h), seed, disorder_replicas)
    return Estimate.from_values(vals[:, 0], allowance=float(vals[:, 1].mean()))


def _pair_terms(system: GibbsSystem):
    """Exact <theta(q_wedge)> and <Delta(R, q_wedge)> under Gamma x Gamma.

    Independence of the two draws factorizes every pair average into
    per-leaf moments: xi(R(sigma, tau)) = (1/N) sum_S var_S sigma_S
    tau_S exactly (it is the Hamiltonian covariance), and the wedge
    indicator becomes a difference of prefix cross sums.
    """
    mix, rsb, N = system.mixture, system.rsb, system.N
    b, k = system.cascade.b, system.rsb.k
    q = rsb.q

    c = prefix_concentrations(system.leaf_masses())
    theta_avg = sum(
        (c[r - 1] - c[r]) * theta(mix, q[r]) for r in range(1, k + 1)
    ) + c[k] * theta(mix, 1.0)

    signs, var_vec = _monomial_data(system.table)
    g = signs.T @ system.gamma.sum(axis=1)
    xi_avg = float(var_vec @ g**2) / N

    moments = system.gamma.T @ spin_matrix(N)
    r_xi = 0.0
    for i in range(N):
        d = prefix_cross(moments[:, i].reshape((b,) * k), moments[:, i].reshape((b,) * k))
        r_xi += sum(
            (d[r - 1] - d[r]) * float(mix.xi_prime(q[r])) for r in range(1, k + 1)
        ) + d[k] * float(mix.xi_prime(1.0))
    r_xi /= N

    return theta_avg, xi_avg - r_xi + theta_avg


@dataclass
class DerivativeReport:
    """Numeric phi'(t) against the three-term formula, per-term detail."""

    t: float
    delta: float
    numeric: Estimate
    formula: Estimate
    theta_term: Estimate
    delta_term: Estimate
    constant_term: float
    record: CheckRecord


def _derivative_chunk(args, master, start, stop):
    N, t, step, mixture, rsb, b, h = args
    out = np.empty((stop - start, 3))
    for rep in range(start, stop):
        base = (master, MODULE_INTERP, _OP_DERIVATIVE, rep)
        # Common random numbers: the same base tuple reproduces the same
        # cascade, fields and Hamiltonian at all three times.
        lo = build_system(N, t - step, mixture, rsb, b, h, base)
        hi = build_system(N, t + step, mixture, rsb, b, h, base)
        mid = build_system(N, t, mixture, rsb, b, h, base)
        out[rep - start, 0] = (hi.log_norm - lo.log_norm) / (2.0 * step * N)
        out[rep - start, 1:] = _pair_terms(mid)
    return out


def derivative_check(
    N: int,
    t: float,
    mixture: MixtureFunction,
    rsb: RSBParams,
    b: int,
    h: float,
    replicas: int,
    seed: int,
    step: float = DERIVATIVE_STEP,
) -> DerivativeReport:
    """Central difference of phi against the exact Gibbs-average formula."""
    if not step < t < 1.0 - step:
        raise ValueError(f"t = {t} outside [{step}, {1.0 - step}]")
    _check_joint_budget(N, rsb, b, t)
    rsb.requires_simulable()
    vals = run_replicas(
        _derivative_chunk, (N, t, step, mixture, rsb, b, h), seed, replicas
    )
    constant = -0.5 * theta(mixture, 1.0)
    numeric = Estimate.from_values(vals[:, 0])
    theta_term = Estimate.from_values(0.5 * vals[:, 1])
    delta_term = Estimate.from_values(0.5 * vals[:, 2])
    formula = Estimate.from_values(constant + 0.5 * vals[:, 1] - 0.5 * vals[:, 2])
    diffs = vals[:, 0] - (constant + 0.5 * vals[:, 1] - 0.5 * vals[:, 2])
    record = identity_check(
        "derivative_identity",
        numeric,
        formula,
        allowance=DERIVATIVE_CURVATURE * step**2,
        extras={
            "t": t,
            "step": step,
            "paired_diff_mean": float(diffs.mean()),
            "paired_diff_se": float(diffs.std(ddof=1) / np.sqrt(len(diffs))),
        },
    )
    return DerivativeReport(
        t=t,
        delta=step,
        numeric=numeric,
        formula=formula,
        theta_term=theta_term,
        delta_term=delta_term,
        constant_term=constant,
        record=record,
    )


def _mass_chunk(args, master, start, stop):
    N, t, r, mixture, rsb, b, h = args
    out = np.empty((stop - start, 2))
    for rep in range(start, stop):
        system = build_system(
            N, t, mixture, rsb, b, h, (master, MODULE_INTERP, _OP_MASS, rep)
        )
        out[rep - start] = system.wedge_mass(r)
    return out


def gibbs_overlap_mass(
    N: int,
    t: float,
    r: int,
    mixture: MixtureFunction,
    rsb: RSBParams,
    b: int,
    h: float,
    replicas: int,
    seed: int,
) -> Estimate:
    """Estimates Gamma x Gamma {wedge = r}; target m_r - m_{r-1}."""
    _check_joint_budget(N, rsb, b, t)
    rsb.requires_simulable()
    if not 1 <= r <= rsb.k + 1:
        raise ValueError(f"r outside 1..{rsb.k + 1}")
    vals = run_replicas(
        _mass_chunk, (N, t, r, mixture, rsb, b, h), seed, replicas
    )
    return Estimate.from_values(vals[:, 0], allowance=float(vals[:, 1].mean()))


def _restricted_delta(system: GibbsSystem, r: int):
    """Corrected <Delta(R, q_wedge) I(wedge = r)> with its budget.

    On the event wedge = r the comparison point is q_r, so the average
    splits into monomial, site and mass pieces, each a difference of
    prefix cross sums at levels r-1 and r; all three get the same
    truncation correction as the overlap masses.
    """
    mix, rsb, N = system.mixture, system.rsb, system.N
    b, k = system.cascade.b, system.rsb.k
    q_r = rsb.q[r]
    terms = []

    signs, var_vec = _monomial_data(system.table)
    monomial_moments = system.gamma.T @ signs
    for j in range(len(var_vec)):
        x = monomial_moments[:, j].reshape((b,) * k)
        d = prefix_cross(x, x)
        terms.append((r - 1, var_vec[j] / N, d[r - 1]))
        terms.append((r, -var_vec[j] / N, d[r]))

    xp = float(mix.xi_prime(q_r))
    site_moments = system.gamma.T @ spin_matrix(N)
    for i in range(N):
        x = site_moments[:, i].reshape((b,) * k)
        d = prefix_cross(x, x)
        terms.append((r - 1, -xp / N, d[r - 1]))
        terms.append((r, xp / N, d[r]))

    th = theta(mix, q_r)
    c = prefix_concentrations(system.leaf_masses())
    terms.append((r - 1, th, c[r - 1]))
    terms.append((r, -th, c[r]))

    eps_f, margin = system.loss_profile()
    return _corrected_combo(terms, eps_f, margin)


@dataclass
class CoupledGibbsSystem:
    """Exact measure over (sigma^1, sigma^2, leaf) with halved exponents.

    The cascade weights use n_l = m_l / 2 below level r and m_l at and
    above it; the two field copies share their tree columns strictly
    below level r (their node streams are reused) and are independent
    from level r upward.
    """

    N: int
    t: float
    r: int
    h: float
    mixture: MixtureFunction
    table: HamiltonianTable
    cascade: Cascade
    gamma: np.ndarray  # (2^N, 2^N, b^k), normalized
    log_norm: float

    def normalization_error(self) -> float:
        return abs(float(self.gamma.sum()) - 1.0)

    def delta_average(self):
        """<Delta(R_{1,2}, q_r)>_r with a missing-mass budget.

        A plain Gibbs mean has no concentration to correct; the bias
        from missing leaves is the tilted missing fraction times how far
        an unseen leaf's conditional mean sits from the reported value,
        estimated by the unweighted leaf average.
        """
        rsb = self.cascade.rsb
        spins = spin_matrix(self.N)
        overlaps = (spins @ spins.T) / self.N
        dvals = delta_array(self.mixture, overlaps, float(rsb.q[self.r]))
        value = float((self.gamma * dvals[:, :, None]).sum())

        a = self.gamma.sum(axis=(0, 1))
        w = self.cascade.leaf_weights_flat()
        f = a / w
        rho = float(f.mean())
        eps = float(self.cascade.cumulative_losses()[-1])
        eps_f = eps * rho / (1.0 - eps + eps * rho)
        leaf_means = (self.gamma * dvals[:, :, None]).sum(axis=(0, 1)) / a
        blocks = leaf_means.reshape(self.cascade.b, -1).mean(axis=1)
        allowance = eps_f * (
            abs(float(leaf_means.mean()) - value)
            + 3.0 * float(blocks.std(ddof=1) / np.sqrt(blocks.size))
        )
        return value, allowance


def coupled_n_sequence(rsb: RSBParams, r: int) -> RSBParams:
    """Same q ladder, exponents halved strictly below level r."""
    if not 1 <= r <= rsb.k:
        raise ValueError(f"r outside 1..{rsb.k}")
    interior = tuple(
        m / 2.0 if level < r else m
        for level, m in enumerate(rsb.m_interior, start=1)
    )
    return RSBParams.from_interior(interior, rsb.q_interior)


def build_coupled_system(
    N: int,
    t: float,
    r: int,
    mixture: MixtureFunction,
    rsb: RSBParams,
    b: int,
    h: float,
    seed,
) -> CoupledGibbsSystem:
    """Enumerate Gamma_r over spin pairs and leaves for one disorder draw."""
    if not 1 <= N <= MAX_COUPLED_SITES:
        raise ValueError(f"N outside 1..{MAX_COUPLED_SITES}")
    if rsb.k > MAX_COUPLED_RSB:
        raise ValueError(f"k = {rsb.k} exceeds {MAX_COUPLED_RSB}")
    if 4**N * b ** rsb.k > MAX_JOINT_STATES:
        raise ValueError("coupled enumeration exceeds the state budget")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t = {t} outside [0, 1]")

    base = _seed_tuple(seed)
    coupled_rsb = coupled_n_sequence(rsb, r)
    cascade = build_cascade(coupled_rsb, b, base)
    table = sample_hamiltonian(N, mixture, _stream(base, MODULE_SK))

    k, leaf_count = rsb.k, b ** rsb.k
    stds = np.sqrt(np.maximum(rsb.variances(mixture), 0.0))
    root = stds[0] * _stream(base, MODULE_FIELDS, 0, 0).standard_normal(N)
    fields = [np.tile(root, (leaf_count, 1)), np.tile(root, (leaf_count, 1))]
    for level in range(1, k + 1):
        repeats = b ** (k - level)
        for copy in (0, 1):
            module = MODULE_FIELDS if copy == 0 or level < r else MODULE_COUPLED
            rows = np.vstack(
                [
                    stds[level]
                    * _stream(base, module, level, j).standard_normal((b, N))
                    for j in range(b ** (level - 1))
                ]
            )
            fields[copy] += np.repeat(rows, repeats, axis=0)

    spins = spin_matrix(N)
    single = np.sqrt(t) * table.values + h * spin_sums(N)
    tilt1 = np.sqrt(1.0 - t) * (spins @ fields[0].T)
    tilt2 = np.sqrt(1.0 - t) * (spins @ fields[1].T)
    expo = (
        single[:, None, None]
        + single[None, :, None]
        + tilt1[:, None, :]
        + tilt2[None, :, :]
        + np.log(cascade.leaf_weights_flat())[None, None, :]
    )
    log_norm = float(logsumexp(expo))
    gamma = np.exp(expo - log_norm)
    system = CoupledGibbsSystem(
        N=N,
        t=t,
        r=r,
        h=h,
        mixture=mixture,
        table=table,
        cascade=cascade,
        gamma=gamma,
        log_norm=log_norm,
    )
    if system.normalization_error() > NORMALIZATION_TOL:
        raise AssertionError("coupled weights failed to normalize")
    return system


def _error_plain_chunk(args, master, start, stop):
    N, t, r, mixture, rsb, b, h = args
    out = np.empty((stop - start, 2))
    for rep in range(start, stop):
        system = build_system(
            N, t, mixture, rsb, b, h, (master, MODULE_INTERP, _OP_ERROR_PLAIN, rep)
        )
        out[rep - start] = _restricted_delta(system, r)
    return out


def _error_coupled_chunk(args, master, start, stop):
    N, t, r, mixture, rsb, b, h = args
    gap = rsb.m[r] - rsb.m[r - 1]
    out = np.empty((stop - start, 2))
    for rep in range(start, stop):
        system = build_coupled_system(
            N, t, r, mixture, rsb, b, h,
            (master, MODULE_INTERP, _OP_ERROR_COUPLED, rep),
        )
        value, allowance = system.delta_average()
        out[rep - start] = (gap * value, gap * allowance)
    return out


@dataclass
class ErrorTermReport:
    """Both sides of the error-term factorization, plus the raw coupled mean."""

    r: int
    t: float
    lhs: Estimate
    rhs: Estimate
    coupled_average: Estimate
    record: CheckRecord


def error_term_check(
    N: int,
    t: float,
    r: int,
    mixture: MixtureFunction,
    rsb: RSBParams,
    b: int,
    h: float,
    replicas: int,
    seed: int,
) -> ErrorTermReport:
    """Wedge-restricted Delta under Gamma x Gamma vs the coupled system."""
    _check_joint_budget(N, rsb, b, t)
    if not 1 <= N <= MAX_COUPLED_SITES:
        raise ValueError(f"N outside 1..{MAX_COUPLED_SITES}")
    if not 1 <= r <= rsb.k:
        raise ValueError(f"r outside 1..{rsb.k}")
    rsb.requires_simulable()
    gap = rsb.m[r] - rsb.m[r - 1]
    plain = run_replicas(
        _error_plain_chunk, (N, t, r, mixture, rsb, b, h), seed, replicas
    )
    coupled = run_replicas(
        _error_coupled_chunk, (N, t, r, mixture, rsb, b, h), seed, replicas
    )
    lhs = Estimate.from_values(plain[:, 0], allowance=float(plain[:, 1].mean()))
    rhs = Estimate.from_values(coupled[:, 0], allowance=float(coupled[:, 1].mean()))
    coupled_average = Estimate.from_values(
        coupled[:, 0] / gap, allowance=float(coupled[:, 1].mean()) / gap
    )
    record = identity_check(
        f"error_term_r{r}",
        lhs,
        rhs,
        extras={"t": t, "r": r, "exponent_gap": gap},
    )
    return ErrorTermReport(
        r=r, t=t, lhs=lhs, rhs=rhs, coupled_average=coupled_average, record=record
    )
