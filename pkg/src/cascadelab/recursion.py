"""The backward smoothing recursion and everything computed from it.

One operator drives this module:

    (S_{m,v} g)(x) = (1/m) log E exp(m g(x + z)),   z ~ N(0, v),

with the m = 0 limit a plain expectation and m = 1 a log-mean-exp.
Applying it level by level from g(x) = log 2 cosh(x + h) gives the
decoupled per-site value phi(0); combining phi(0) with the theta terms
gives the k-step upper bound on the free energy; differentiating the
same chain gives the change-of-density weights W_l whose products define
the tilted two-replica averages, evaluated here by tensor-product
Gauss-Hermite quadrature.

All quadrature is deterministic; Monte Carlo never enters this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize

from .functionals import PairFunctional, PathFunctional, replica_pair_value
from .mixture import (
    MixtureFunction,
    RSBParams,
    check_field_compatible,
    theta,
)

TENSOR_BUDGET = 10**7
GRID_DX = 0.02
GRID_PAD = 6.0


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Hermite configuration shared by all quadrature paths."""

    nodes_per_level: int = 40
    convergence_check: bool = True

    def __post_init__(self):
        if self.nodes_per_level < 8:
            raise ValueError("nodes_per_level must be >= 8")


def gauss_hermite(n: int):
    """Nodes and weights for E f(z), z standard normal (weights sum to 1)."""
    t, w = np.polynomial.hermite.hermgauss(n)
    return t * math.sqrt(2.0), w / math.sqrt(math.pi)


def log2cosh(x):
    """log(2 cosh(x)) without overflow."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax))


class TabulatedFunction:
    """A function tabulated on a uniform grid.

    Inside the grid: cubic spline.  Outside: linear continuation with the
    boundary slope, which is exact in the tails for the level functions
    of the recursion (they approach slope +-1 linear asymptotes).
    """

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = x
        self.y = y
        self._spline = CubicSpline(x, y)
        d = self._spline.derivative()
        self._lo, self._hi = x[0], x[-1]
        self._slope_lo = float(d(self._lo))
        self._slope_hi = float(d(self._hi))
        self._y_lo = float(y[0])
        self._y_hi = float(y[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = self._spline(np.clip(x, self._lo, self._hi))
        above = x > self._hi
        below = x < self._lo
        out = np.where(above, self._y_hi + self._slope_hi * (x - self._hi), inside)
        out = np.where(below, self._y_lo + self._slope_lo * (x - self._lo), out)
        return out if out.ndim else float(out)


@dataclass
class RecursionResult:
    phi0: float
    level_functions: list
    variances: np.ndarray
    converged: bool
    nodes: int
    doubling_diff: float


def smoothing_step(
    g, m: float, variance: float, quad: QuadratureSpec
) -> TabulatedFunction:
    """Apply S_{m, variance} to a tabulated function on its own grid."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"smoothing exponent m = {m} outside [0, 1]")
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if variance == 0.0:
        return TabulatedFunction(g.x, np.array(g.y, copy=True))
    z, w = gauss_hermite(quad.nodes_per_level)
    vals = g(g.x[:, None] + math.sqrt(variance) * z[None, :])
    if m == 0.0:
        y = vals @ w
    else:
        a = m * vals
        amax = a.max(axis=1)
        y = amax + np.log(np.exp(a - amax[:, None]) @ w)
        y /= m
    return TabulatedFunction(g.x, y)


def _grid_for(rsb: RSBParams, mix: MixtureFunction, h: float, nodes: int):
    v = np.maximum(rsb.variances(mix), 0.0)
    z, _ = gauss_hermite(nodes)
    tmax = float(np.abs(z).max())
    reach = float(np.sqrt(v).sum()) * tmax
    half = abs(h) + reach + GRID_PAD
    n = 2 * int(math.ceil(half / GRID_DX)) + 1
    return np.linspace(-half, half, n), v


def _phi0_once(rsb: RSBParams, mix: MixtureFunction, h: float, nodes: int):
    quad = QuadratureSpec(nodes_per_level=nodes, convergence_check=False)
    x, v = _grid_for(rsb, mix, h, nodes)
    g = TabulatedFunction(x, log2cosh(x + h))
    funcs = [g]
    for level in range(rsb.k, 0, -1):
        g = smoothing_step(g, rsb.m[level], float(v[level]), quad)
        funcs.append(g)
    if v[0] == 0.0:
        val = float(g(0.0))
    else:
        z, w = gauss_hermite(nodes)
        val = float(g(math.sqrt(float(v[0])) * z) @ w)
    return val, funcs, v


def phi0(
    rsb: RSBParams, mix: MixtureFunction, h: float, quad: QuadratureSpec
) -> RecursionResult:
    """Per-site value of the recursion root at the decoupled endpoint.

    Starts from log 2 cosh(x + h), smooths through levels k down to 1
    with variances xi'(q_{l+1}) - xi'(q_l), and closes with a plain
    Gaussian expectation of variance xi'(q_1).  m_k = 1 is legal here.
    """
    val, funcs, v = _phi0_once(rsb, mix, h, quad.nodes_per_level)
    diff = 0.0
    converged = True
    if quad.convergence_check:
        val2, _, _ = _phi0_once(rsb, mix, h, 2 * quad.nodes_per_level)
        diff = abs(val2 - val)
        converged = diff < 1e-7
    return RecursionResult(
        phi0=val,
        level_functions=funcs,
        variances=v,
        converged=converged,
        nodes=quad.nodes_per_level,
        doubling_diff=diff,
    )


def guerra_bound(
    rsb: RSBParams, mix: MixtureFunction, h: float, quad: QuadratureSpec
) -> float:
    """The k-step upper bound on the free energy.

    B(m, q) = phi(0) - theta(1)/2 + (1/2) sum_r (m_r - m_{r-1}) theta(q_r),
    the value obtained by integrating the interpolation derivative over t
    and dropping its nonpositive error term.  Defined at the m_k = 1
    endpoint, which the quadrature handles analytically.
    """
    if rsb.m[-1] != 1.0:
        raise ValueError("the bound is defined at the m_k = 1 endpoint")
    res = phi0(rsb, mix, h, quad)
    b = res.phi0 - 0.5 * theta(mix, 1.0)
    for r in range(1, rsb.k + 1):
        b += 0.5 * (rsb.m[r] - rsb.m[r - 1]) * theta(mix, rsb.q[r])
    return float(b)


# ---------------------------------------------------------------------------
# bound optimization
# ---------------------------------------------------------------------------


@dataclass
class BoundOptimum:
    params: RSBParams
    value: float
    converged: bool
    evaluations: int
    restart_values: list = field(default_factory=list)


def _sigmoid(y):
    return 1.0 / (1.0 + np.exp(-y))


def _logit(p):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))


def _vector_to_params(y: np.ndarray, k: int) -> RSBParams:
    """Map an unconstrained vector to strictly ordered (m, q) with m_k = 1."""
    m_int = np.sort(_sigmoid(y[: k - 1])) if k > 1 else np.empty(0)
    q_int = np.sort(_sigmoid(y[k - 1 :]))
    m_int = _enforce_gaps(m_int, 0.0, 1.0)
    q_int = _enforce_gaps(q_int, 0.0, 1.0)
    m = (0.0,) + tuple(m_int) + (1.0,)
    q = (0.0,) + tuple(q_int) + (1.0,)
    return RSBParams(k=k, m=m, q=q)


def _enforce_gaps(vals: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Nudge a sorted vector into the open interval with minimal gaps."""
    gap = 1e-9
    out = np.array(vals, dtype=float)
    for i in range(len(out)):
        floor = lo + gap if i == 0 else out[i - 1] + gap
        out[i] = max(out[i], floor)
    ceil = hi - gap
    for i in range(len(out) - 1, -1, -1):
        out[i] = min(out[i], ceil)
        ceil = out[i] - gap
    return out


def _params_to_vector(params: RSBParams) -> np.ndarray:
    parts = []
    if params.k > 1:
        parts.append(_logit(np.asarray(params.m_interior[:-1])))
    parts.append(_logit(np.asarray(params.q_interior)))
    return np.concatenate(parts) if parts else np.empty(0)


def _restart_points(mix, h, k, quad):
    """Five deterministic starts, including the (k-1)-step optimum embedded."""
    starts = []
    spread_q = [(i + 1) / (k + 1) for i in range(k)]
    spread_m = [(j + 1) / k for j in range(k - 1)]
    starts.append((spread_m, spread_q))
    starts.append(([0.3 * (j + 1) / k for j in range(k - 1)], [0.04 * (i + 1) for i in range(k)]))
    starts.append(
        ([0.5 + 0.4 * (j + 1) / k for j in range(k - 1)], [0.5 + 0.45 * (i + 1) / k for i in range(k)])
    )
    starts.append(
        ([0.2 + 0.6 * (j + 1) / k for j in range(k - 1)], [0.08 + 0.75 * i / max(k - 1, 1) for i in range(k)])
    )
    if k > 1:
        sub = optimize_bound(mix, h, k - 1, quad, _embedding_level=True)
        q_sub = list(sub.params.q_interior)
        q_emb = q_sub + [min(q_sub[-1] + 1e-4, 1.0 - 1e-6)]
        m_emb = [0.5 * (j + 1) / k for j in range(k - 1)]
        starts.append((m_emb, q_emb))
    else:
        starts.append(([], [0.5]))
    return starts


def optimize_bound(
    mix: MixtureFunction,
    h: float,
    k: int,
    quad: QuadratureSpec,
    max_iterations: int | None = None,
    _embedding_level: bool = False,
) -> BoundOptimum:
    """Minimize the bound over strictly ordered (m, q) at fixed k.

    Derivative-free simplex search on a sorted-logistic reparameterization
    (m_k pinned at 1), restarted from five deterministic initial points.
    Results are reproducible for a fixed configuration.
    """
    if k > 3:
        raise ValueError("optimization supports k <= 3")
    inner = QuadratureSpec(
        nodes_per_level=quad.nodes_per_level, convergence_check=False
    )
    evals = 0

    def objective(y):
        nonlocal evals
        evals += 1
        return guerra_bound(_vector_to_params(np.asarray(y), k), mix, h, inner)

    dim = 2 * k - 1
    maxiter = max_iterations or 250 * dim
    best_y = None
    best_val = math.inf
    restart_values = []
    all_success = True
    for m_start, q_start in _restart_points(mix, h, k, inner):
        y0 = np.concatenate(
            [
                _logit(np.asarray(m_start)) if m_start else np.empty(0),
                _logit(np.asarray(q_start)),
            ]
        )
        res = minimize(
            objective,
            y0,
            method="Nelder-Mead",
            options={
                "xatol": 1e-7,
                "fatol": 1e-11,
                "maxiter": maxiter,
                "adaptive": True,
            },
        )
        all_success = all_success and bool(res.success)
        restart_values.append(float(res.fun))
        if res.fun < best_val:
            best_val = float(res.fun)
            best_y = np.array(res.x)
    params = _vector_to_params(best_y, k)
    if not _embedding_level and quad.convergence_check:
        final = phi0(params, mix, h, quad)
        conv = final.converged and all_success
    else:
        conv = all_success
    return BoundOptimum(
        params=params,
        value=best_val,
        converged=conv,
        evaluations=evals,
        restart_values=restart_values,
    )


# ---------------------------------------------------------------------------
# tensor quadrature over per-level scalar marks (cascade reference side)
# ---------------------------------------------------------------------------


def _axis_shape(ndim: int, axis: int, n: int):
    shape = [1] * ndim
    shape[axis] = n
    return shape


def _weighted_sum(arr, axes, weights, ndim):
    out = arr
    for ax in axes:
        out = (out * weights.reshape(_axis_shape(ndim, ax, weights.size))).sum(
            axis=ax, keepdims=True
        )
    return out


def _lse_contract(arr, m, axes, weights, ndim):
    """(1/m) log sum w exp(m arr) over the given axes, keeping dims."""
    a = m * arr
    amax = a.max(axis=tuple(axes), keepdims=True)
    s = _weighted_sum(np.exp(a - amax), axes, weights, ndim)
    return (amax + np.log(s)) / m


def mark_chain_root(
    x_fn: PathFunctional, rsb: RSBParams, tau, quad: QuadratureSpec
) -> float:
    """Root value X_0 of the recursion applied to a path functional.

    tau[l] is the standard deviation of the level-(l+1) node mark.  The
    functional is evaluated on a full tensor grid and contracted level by
    level with exponents m_k .. m_1, the independent reference for the
    cascade's log-partition identity.
    """
    k = rsb.k
    n = quad.nodes_per_level
    if n**k > TENSOR_BUDGET:
        raise ValueError("tensor grid exceeds the quadrature budget")
    z, w = gauss_hermite(n)
    marks = [
        (tau[ell] * z).reshape(_axis_shape(k, ell, n)) for ell in range(k)
    ]
    x = np.asarray(x_fn(marks), dtype=float)
    x = np.broadcast_to(x, (n,) * k).copy()
    for level in range(k, 0, -1):
        x = _lse_contract(x, rsb.m[level], [level - 1], w, k)
    return float(x.squeeze())


def _mark_chain_weights(x, rsb, w, ndim, level_axes):
    """Chain the X_l with keepdims and return the W_l arrays, l = 1..k."""
    xs = {rsb.k: x}
    for level in range(rsb.k, 0, -1):
        xs[level - 1] = _lse_contract(
            xs[level], rsb.m[level], level_axes[level], w, ndim
        )
    return [
        np.exp(rsb.m[level] * (xs[level] - xs[level - 1]))
        for level in range(1, rsb.k + 1)
    ]


def mark_chain_tilted(
    x_fn: PathFunctional,
    y_fn: PathFunctional,
    rsb: RSBParams,
    tau,
    quad: QuadratureSpec,
) -> float:
    """E prod_l W_l Y along one path, by full tensor contraction."""
    k = rsb.k
    n = quad.nodes_per_level
    if n**k > TENSOR_BUDGET:
        raise ValueError("tensor grid exceeds the quadrature budget")
    z, w = gauss_hermite(n)
    marks = [
        (tau[ell] * z).reshape(_axis_shape(k, ell, n)) for ell in range(k)
    ]
    x = np.broadcast_to(np.asarray(x_fn(marks), dtype=float), (n,) * k).copy()
    level_axes = {level: [level - 1] for level in range(1, k + 1)}
    ws = _mark_chain_weights(x, rsb, w, k, level_axes)
    integrand = np.asarray(y_fn(marks), dtype=float)
    for wl in ws:
        integrand = integrand * wl
    return float(_weighted_sum(integrand, list(range(k)), w, k).squeeze())


def mark_chain_restricted(
    x_fn: PathFunctional,
    y_pair: PairFunctional,
    rsb: RSBParams,
    tau,
    r: int,
    quad: QuadratureSpec,
) -> float:
    """The fixed-pair reference M_r for two paths splitting at level r.

    Levels below r share one mark axis; levels r..k carry independent
    axes per path.  Returns E prod_{l<r} W_l prod_{l>=r} W_l^a W_l^b Y.
    """
    k = rsb.k
    if not 1 <= r <= k:
        raise ValueError(f"r = {r} outside 1..{k}")
    n = quad.nodes_per_level
    ndim = (r - 1) + 2 * (k - r + 1)
    if n**ndim > TENSOR_BUDGET:
        raise ValueError("tensor grid exceeds the quadrature budget")
    z, w = gauss_hermite(n)

    def axis_of(level, copy):
        # levels 1..r-1 shared, then copy-a block, then copy-b block
        if level < r:
            return level - 1
        base = (r - 1) + (0 if copy == 0 else k - r + 1)
        return base + (level - r)

    marks_a = [
        (tau[ell] * z).reshape(_axis_shape(ndim, axis_of(ell + 1, 0), n))
        for ell in range(k)
    ]
    marks_b = [
        (tau[ell] * z).reshape(_axis_shape(ndim, axis_of(ell + 1, 1), n))
        for ell in range(k)
    ]
    xa = np.broadcast_to(np.asarray(x_fn(marks_a), float), (n,) * ndim).copy()
    xb = np.broadcast_to(np.asarray(x_fn(marks_b), float), (n,) * ndim).copy()
    axes_a = {level: [axis_of(level, 0)] for level in range(1, k + 1)}
    axes_b = {level: [axis_of(level, 1)] for level in range(1, k + 1)}
    ws_a = _mark_chain_weights(xa, rsb, w, ndim, axes_a)
    ws_b = _mark_chain_weights(xb, rsb, w, ndim, axes_b)
    integrand = y_pair.combine(
        np.asarray(y_pair.base(marks_a), float),
        np.asarray(y_pair.base(marks_b), float),
    )
    for level in range(1, k + 1):
        integrand = integrand * ws_a[level - 1]
        if level >= r:
            integrand = integrand * ws_b[level - 1]
    return float(_weighted_sum(integrand, list(range(ndim)), w, ndim).squeeze())


# ---------------------------------------------------------------------------
# tilted two-replica averages by quadrature
# ---------------------------------------------------------------------------


@dataclass
class MuQuadResult:
    """Both definitions of the tilted average and their agreement."""

    value: float
    value_v_form: float
    chain_max_diff: float
    dims: int
    nodes: int


def mu_r_quadrature(
    N: int,
    k: int,
    r: int,
    mix: MixtureFunction,
    rsb: RSBParams,
    h: float,
    t: float,
    f: str,
    quad: QuadratureSpec,
) -> MuQuadResult:
    """mu_r(f) for the coupled replica pair, by tensor quadrature.

    Two Gaussian column sets share columns 0..r-1 and are independent at
    columns r..k; the disorder part of the Hamiltonian is enumerated
    exactly over its monomial-basis Gaussian coefficients.  Computes the
    product-of-W form, the V-chain form with halved exponents below r,
    and their pointwise agreement.
    """
    from .sk_model import monomial_signs, monomial_variances

    if not 1 <= N <= 2:
        raise ValueError("the coupled quadrature supports N in {1, 2}")
    if not 1 <= k <= 2 or k != rsb.k:
        raise ValueError("k must match the parameter sequences and be <= 2")
    if not 1 <= r <= k:
        raise ValueError(f"r = {r} outside 1..{k}")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    check_field_compatible(mix)
    v = np.maximum(rsb.variances(mix), 0.0)
    n = quad.nodes_per_level
    z, w = gauss_hermite(n)

    # Axis registry: one axis per active Gaussian. Columns 0..r-1 are
    # shared between the copies; columns r..k appear once per copy. The
    # sigma-independent (empty-set) monomial shifts both copies' chains
    # equally and cancels from every W and Gibbs ratio, so it is dropped.
    axes = []
    for col in range(0, k + 1):
        if v[col] <= 0.0:
            continue
        copies = (None,) if col < r else (0, 1)
        for copy in copies:
            for site in range(N):
                axes.append(("z", col, site, copy))
    variances = monomial_variances(N, mix)
    masks = sorted(mask for mask in variances if mask != 0)
    for mask in masks:
        axes.append(("H", mask, None, None))
    ndim = len(axes)
    if ndim == 0:
        raise ValueError("degenerate configuration: no active randomness")
    if n**ndim > TENSOR_BUDGET:
        raise ValueError(
            f"tensor grid {n}^{ndim} exceeds the {TENSOR_BUDGET:.0e} budget"
        )

    def grid(idx, scale):
        return (scale * z).reshape(_axis_shape(ndim, idx, n))

    z_axes = {}  # (col, site, copy or None) -> axis index
    h_axes = {}
    for idx, (kind, a, b, c) in enumerate(axes):
        if kind == "z":
            z_axes[(a, b, c)] = idx
        else:
            h_axes[a] = idx

    sigmas = [
        np.array([1 - 2 * ((s >> i) & 1) for i in range(N)]) for s in range(2**N)
    ]
    signs = monomial_signs(N, masks)

    def field_sum(site, copy):
        total = 0.0
        for col in range(0, k + 1):
            if v[col] <= 0.0:
                continue
            key = (col, site, None if col < r else copy)
            total = total + grid(z_axes[key], math.sqrt(float(v[col])))
        return total

    def exponent(sigma, copy, s_idx):
        # Terms with zero coefficient are skipped so the array keeps
        # singleton axes there (the contraction handles them by weight
        # normalization), which matters at the t = 0 and t = 1 endpoints.
        e = np.full((1,) * ndim, h * float(sigma.sum()))
        if t < 1.0:
            for site in range(N):
                e = e + (
                    math.sqrt(1.0 - t) * float(sigma[site]) * field_sum(site, copy)
                )
        if t > 0.0:
            for j, mask in enumerate(masks):
                e = e + (
                    math.sqrt(t)
                    * math.sqrt(variances[mask])
                    * float(signs[s_idx, j])
                    * grid(h_axes[mask], 1.0)
                )
        return e

    # Arrays stay in broadcast shape: each copy's exponent has singleton
    # axes along the other copy's private columns, so per-sigma storage is
    # far below the full tensor size.
    exps = {}
    xk = {}
    for copy in (0, 1):
        acc = None
        per_sigma = []
        for s_idx, sigma in enumerate(sigmas):
            e = np.asarray(exponent(sigma, copy, s_idx), dtype=float)
            per_sigma.append(e)
            acc = e if acc is None else np.logaddexp(acc, e)
        exps[copy] = per_sigma
        xk[copy] = acc

    def level_axes(copy):
        out = {}
        for level in range(1, k + 1):
            ax = []
            for site in range(N):
                key = (level, site, None if level < r else copy)
                if key in z_axes:
                    ax.append(z_axes[key])
            out[level] = ax
        return out

    ws = {}
    xs = {}
    for copy in (0, 1):
        ax_map = level_axes(copy)
        chain = {k: xk[copy]}
        for level in range(k, 0, -1):
            if ax_map[level]:
                chain[level - 1] = _lse_contract(
                    chain[level], rsb.m[level], ax_map[level], w, ndim
                )
            else:
                chain[level - 1] = chain[level]
        xs[copy] = chain
        ws[copy] = {
            level: np.exp(rsb.m[level] * (chain[level] - chain[level - 1]))
            for level in range(1, k + 1)
        }

    # Gibbs average of f over the product measure of the two copies
    fbar = 0.0
    for i1, s1 in enumerate(sigmas):
        p1 = np.exp(exps[0][i1] - xk[0])
        for i2, s2 in enumerate(sigmas):
            fv = replica_pair_value(f, s1, s2, mix, float(rsb.q[r]))
            if fv == 0.0:
                continue
            fbar = fbar + fv * p1 * np.exp(exps[1][i2] - xk[1])

    integrand = np.asarray(fbar, dtype=float) + 0.0
    for level in range(1, k + 1):
        integrand = integrand * ws[0][level]
        if level >= r:
            integrand = integrand * ws[1][level]
    mu_w = float(_weighted_sum(integrand, list(range(ndim)), w, ndim).squeeze())

    # V-chain with exponents n_l = m_l / 2 below the split level
    y = {k: xk[0] + xk[1]}
    n_seq = {
        level: (rsb.m[level] / 2.0 if level < r else rsb.m[level])
        for level in range(1, k + 1)
    }
    ax0 = level_axes(0)
    ax1 = level_axes(1)
    for level in range(k, 0, -1):
        joint = sorted(set(ax0[level]) | set(ax1[level]))
        if joint:
            y[level - 1] = _lse_contract(y[level], n_seq[level], joint, w, ndim)
        else:
            y[level - 1] = y[level]
    max_diff = 0.0
    integrand_v = np.asarray(fbar, dtype=float) + 0.0
    for level in range(1, k + 1):
        vl = np.exp(n_seq[level] * (y[level] - y[level - 1]))
        ref = ws[0][level] * ws[1][level] if level >= r else ws[0][level]
        max_diff = max(max_diff, float(np.abs(vl - ref).max()))
        integrand_v = integrand_v * vl
    mu_v = float(_weighted_sum(integrand_v, list(range(ndim)), w, ndim).squeeze())

    return MuQuadResult(
        value=mu_w,
        value_v_form=mu_v,
        chain_max_diff=max_diff,
        dims=ndim,
        nodes=n,
    )
