"""One-level Poisson-Dirichlet point processes and mark invariance checks.

A realization keeps the n_max largest points of a Poisson process with
intensity x^(-1-m) dx on (0, inf), obtained from unit-rate arrival times
G_1 < G_2 < ... as u_n = (m G_n)^(-1/m), which is automatically
decreasing.  The expected mass below the smallest kept point,
conditionally on its value u_b, is

    T = u_b^(1-m) / (1-m)

(integral of x against the intensity over (0, u_b)); the reported
tail_bound is the relative version T / (S + T).  All truncation
allowances in this module derive from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import MODULE_PD, derive_rng, run_replicas
from .stats import Estimate

_STATISTICS = ("pair_sum", "max_weight", "mean_mark")
_TILT_POOL = 4096


@dataclass(frozen=True)
class PDRealization:
    m: float
    u: np.ndarray
    w: np.ndarray
    tail_bound: float


@dataclass(frozen=True)
class MarkSpec:
    """A named family of i.i.d. mark pairs (X_n, Y_n) with X > 0.

    families:
      constant:  X = cx, Y = cy.
      lognormal: X = shift + exp(sigma_x G), Y = exp(sigma_y (rho G +
                 sqrt(1 - rho^2) G')), with G, G' independent standard
                 normals; rho correlates Y with X.
      two_point: (X, Y) = (xs[0], ys[0]) with probability p, else
                 (xs[1], ys[1]).
    """

    family: str
    cx: float = 1.0
    cy: float = 1.0
    sigma_x: float = 0.5
    sigma_y: float = 0.5
    rho: float = 0.5
    shift: float = 0.0
    xs: tuple = (1.0, 2.0)
    ys: tuple = (1.0, 1.0)
    p: float = 0.5

    def __post_init__(self):
        if self.family not in ("constant", "lognormal", "two_point"):
            raise ValueError(f"unknown mark family {self.family!r}")
        if self.family == "constant" and self.cx <= 0:
            raise ValueError("constant X mark must be positive")
        if self.family == "lognormal" and self.shift < 0:
            raise ValueError("lognormal shift must be nonnegative")
        if self.family == "two_point" and min(self.xs) <= 0:
            raise ValueError("two_point X values must be positive")

    def sample(self, rng: np.random.Generator, size: int):
        if self.family == "constant":
            return (np.full(size, self.cx), np.full(size, self.cy))
        if self.family == "lognormal":
            g = rng.standard_normal(size)
            g2 = rng.standard_normal(size)
            x = self.shift + np.exp(self.sigma_x * g)
            y = np.exp(
                self.sigma_y * (self.rho * g + np.sqrt(1 - self.rho**2) * g2)
            )
            return x, y
        pick = rng.random(size) < self.p
        x = np.where(pick, self.xs[0], self.xs[1])
        y = np.where(pick, self.ys[0], self.ys[1])
        return x, y

    def min_x(self) -> float:
        if self.family == "constant":
            return self.cx
        if self.family == "lognormal":
            return self.shift
        return min(self.xs)

    def exact_scale(self, m: float):
        """(E X^m)^(1/m) in closed form where the family admits one."""
        if self.family == "constant":
            return self.cx
        if self.family == "two_point":
            ex = self.p * self.xs[0] ** m + (1 - self.p) * self.xs[1] ** m
            return ex ** (1.0 / m)
        return None


def sample_pd(m: float, n_max: int, seed) -> PDRealization:
    """Draw the n_max largest points of the PD(m, 0) source process."""
    if not 0.0 < m < 1.0:
        raise ValueError(f"m must lie in (0, 1), got {m}")
    if n_max < 10:
        raise ValueError("n_max must be at least 10")
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed, MODULE_PD)
    u = _sample_points(rng, m, n_max)
    s = u.sum()
    t = _tail_mass(u[-1], m)
    return PDRealization(m=m, u=u, w=u / s, tail_bound=t / (s + t))


def _sample_points(rng: np.random.Generator, m: float, n_max: int) -> np.ndarray:
    gamma = np.cumsum(rng.standard_exponential(n_max))
    return (m * gamma) ** (-1.0 / m)


def _tail_mass(u_last: float, m: float) -> float:
    return u_last ** (1.0 - m) / (1.0 - m)


def _pair_sum_chunk(args, master, start, stop):
    m, n_max = args
    out = np.empty((stop - start, 2))
    for i, rep in enumerate(range(start, stop)):
        rng = derive_rng(master, MODULE_PD, rep)
        u = _sample_points(rng, m, n_max)
        s = u.sum()
        q = float((u * u).sum() / (s * s))
        t = _tail_mass(u[-1], m)
        eps = t / (s + t)
        # Bracket for the untruncated pair sum: the full denominator is at
        # least s and the truncated numerator is a lower bound, so the full
        # statistic lies in [q (1 - eps)^2, q + small]; the half-width
        # q (2 eps - eps^2) is the declared allowance.
        out[i] = (q, q * eps * (2.0 - eps))
    return out


def estimate_pair_sum(m: float, n_max: int, replicas: int, seed: int) -> Estimate:
    """Monte Carlo estimate of E sum_n w_n^2 (target 1 - m)."""
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    if not 0.0 < m < 1.0:
        raise ValueError(f"m must lie in (0, 1), got {m}")
    vals = run_replicas(_pair_sum_chunk, (m, n_max), seed, replicas)
    return Estimate.from_values(vals[:, 0], allowance=float(vals[:, 1].mean()))


def _statistic(name: str, u: np.ndarray, y: np.ndarray) -> float:
    s = u.sum()
    if name == "pair_sum":
        return float((u * u).sum() / (s * s))
    if name == "max_weight":
        return float(u.max() / s)
    if name == "mean_mark":
        return float((u * y).sum() / s)
    raise ValueError(f"statistic {name!r} not in menu {_STATISTICS}")


def _tilted_marks(spec: MarkSpec, m: float, rng: np.random.Generator, size: int):
    """Draw marks from the law reweighted by X^m / E X^m, plus the scale.

    Direct Monte Carlo: resample a fresh pool of (X, Y) pairs with
    probabilities proportional to X^m.  Families with a closed-form scale
    use it so degenerate cases reproduce exactly.
    """
    pool_x, pool_y = spec.sample(rng, _TILT_POOL)
    wts = pool_x**m
    wts /= wts.sum()
    idx = rng.choice(_TILT_POOL, size=size, p=wts)
    c = spec.exact_scale(m)
    if c is None:
        c = float((pool_x**m).mean() ** (1.0 / m))
    return c, pool_x[idx], pool_y[idx]


def _invariance_chunk(args, master, start, stop):
    m, n_max, statistic, spec = args
    out = np.empty((stop - start, 2))
    for i, rep in enumerate(range(start, stop)):
        rng_u = derive_rng(master, MODULE_PD, rep, 0)
        rng_m = derive_rng(master, MODULE_PD, rep, 1)
        rng_t = derive_rng(master, MODULE_PD, rep, 2)
        u = _sample_points(rng_u, m, n_max)
        x, y = spec.sample(rng_m, n_max)
        # side (a): the marked-and-multiplied process (u X, Y)
        out[i, 0] = _statistic(statistic, u * x, y)
        # side (b): the same points scaled by (E X^m)^(1/m), marks tilted
        c, _, y_t = _tilted_marks(spec, m, rng_t, n_max)
        out[i, 1] = _statistic(statistic, c * u, y_t)
    return out


def verify_invariance(
    m: float,
    mark_spec: MarkSpec,
    statistic: str,
    replicas: int,
    n_max: int,
    seed: int,
):
    """Compare a menu statistic on the marked process vs the tilted one.

    Returns (marked Estimate, tilted Estimate).  Both sides share the
    underlying points per replica, which only tightens the comparison.
    """
    if statistic not in _STATISTICS:
        raise ValueError(f"statistic {statistic!r} not in menu {_STATISTICS}")
    vals = run_replicas(
        _invariance_chunk, (m, n_max, statistic, mark_spec), seed, replicas
    )
    return Estimate.from_values(vals[:, 0]), Estimate.from_values(vals[:, 1])


def _corollary_chunk(args, master, start, stop):
    m, n_max, spec = args
    out = np.empty((stop - start, 4))
    for i, rep in enumerate(range(start, stop)):
        rng_u = derive_rng(master, MODULE_PD, rep, 0)
        rng_m = derive_rng(master, MODULE_PD, rep, 1)
        u = _sample_points(rng_u, m, n_max)
        x, y = spec.sample(rng_m, n_max)
        ux = u * x
        uy = u * y
        dx = ux.sum()
        l1 = uy.sum() / dx
        l2 = (uy * uy).sum() / (dx * dx)
        l3 = (uy.sum() ** 2 - (uy * uy).sum()) / (dx * dx)
        s = u.sum()
        t = _tail_mass(u[-1], m)
        out[i] = (l1, l2, l3, t / (s + t))
    return out


def _mark_moment_chunk(args, master, start, stop):
    m, spec, batch = args
    out = np.empty((stop - start, 3))
    for i, rep in enumerate(range(start, stop)):
        rng = derive_rng(master, MODULE_PD, 1 << 20, rep)
        x, y = spec.sample(rng, batch)
        exm = (x**m).mean()
        r1 = (x ** (m - 1) * y).mean() / exm
        r2 = (1.0 - m) * (x ** (m - 2) * y * y).mean() / exm
        out[i] = (r1, r2, m * r1 * r1)
    return out


def corollary_moments(
    m: float, mark_spec: MarkSpec, replicas: int, n_max: int, seed: int
):
    """The three ratio identities, point-process side vs plain mark side.

    Returns a list of (name, lhs Estimate, rhs Estimate).  The right sides
    are estimated by direct Monte Carlo over the mark law in independent
    batches, so the comparison never reuses point-process randomness.
    """
    if replicas < 1000:
        raise ValueError("replicas must be >= 1000")
    if mark_spec.min_x() < 1.0:
        raise ValueError("this identity family requires marks with X >= 1")
    lhs = run_replicas(_corollary_chunk, (m, n_max, mark_spec), seed, replicas)
    n_batches = max(200, replicas // 10)
    rhs = run_replicas(
        _mark_moment_chunk, (m, mark_spec, 4096), seed, n_batches
    )
    eps = lhs[:, 3]
    names = ("ratio_mean", "diagonal_square", "off_diagonal")
    results = []
    for j, name in enumerate(names):
        stat = lhs[:, j]
        # total-variation style bracket: relative tail eps moves a
        # normalized ratio statistic by at most ~2 eps times its scale
        allowance = float(np.mean(2.0 * eps * (np.abs(stat) + 1.0)))
        results.append(
            (
                name,
                Estimate.from_values(stat, allowance=allowance),
                Estimate.from_values(rhs[:, j]),
            )
        )
    return results
