"""Truncated hierarchical Poisson cascades and their identity estimators.

A cascade is a depth-k tree: every node carries the b largest points of
an independent PD(m_l, 0) source process, leaf weights are the products
of the points along the path, normalized over all b^k leaves.  On top of
that live per-node Gaussian marks (scalar, variance chosen per level)
and per-node Gaussian field columns (R^N, variance xi'(q_{l+1}) -
xi'(q_l)), giving leaf fields with covariance xi'(q_{wedge}).

Every estimator here is Monte Carlo over independent cascade replicas,
with per-node streams derived from (seed, operation, replica, level,
parent), so results are independent of traversal order and worker
count.  Truncation allowances are computed per realization from the
conditional mean of the mass below each node's smallest kept point and
attached to the estimates; see the per-operation notes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .functionals import PairFunctional, PathFunctional
from .mixture import MixtureFunction, RSBParams, check_field_compatible
from .pd_process import _sample_points, _tail_mass
from .recursion import (
    QuadratureSpec,
    mark_chain_restricted,
    mark_chain_root,
    mark_chain_tilted,
)
from .seeding import (
    MODULE_CASCADE,
    MODULE_FIELDS,
    MODULE_MARKS,
    run_replicas,
)
from .stats import Estimate

MAX_LEAVES = 10**6

# Envelope on the relative accuracy of the estimated truncation losses,
# used when budgeting systematic error for corrected pair-mass estimates.
# Aggregated loss estimates track refinement experiments at the percent
# level; 0.10 leaves an order of magnitude of headroom.
TAIL_ACCURACY = 0.10

# Operation ids, baked into every derived stream.
_OP_OVERLAP = 1
_OP_LOGPART = 2
_OP_TILT = 3
_OP_INVARIANCE = 4
_OP_FIELDCOV = 5

INVARIANCE_STATISTICS = ("max_weight", "pair_sum")


def _seed_tuple(seed) -> tuple:
    return (seed,) if isinstance(seed, int) else tuple(seed)


def _stream(base: tuple, module: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(base[0], spawn_key=tuple(base[1:]) + (module,) + key)
    )


def wedge(alpha, beta, k: int) -> int:
    """First level at which two leaf paths differ; k+1 when equal."""
    for level, (a, b) in enumerate(zip(alpha, beta), start=1):
        if a != b:
            return level
    return k + 1


@dataclass(frozen=True)
class TreeIndex:
    """A leaf path (n_1, ..., n_k), 1-indexed coordinates."""

    path: tuple

    def prefix(self, level: int) -> tuple:
        return self.path[:level]

    def wedge(self, other: "TreeIndex") -> int:
        return wedge(self.path, other.path, len(self.path))


def subtree_sums(values: np.ndarray, level: int) -> np.ndarray:
    """Sum a (b,)*k leaf array over all coordinates past ``level``."""
    k = values.ndim
    if level == k:
        return values
    return values.sum(axis=tuple(range(level, k)))


def prefix_concentrations(values: np.ndarray) -> list:
    """C_l = sum over depth-l prefixes of (subtree sum)^2, l = 0..k."""
    return [float((subtree_sums(values, l) ** 2).sum()) for l in range(values.ndim + 1)]


def prefix_cross(fa: np.ndarray, fb: np.ndarray) -> list:
    """D_l = sum over depth-l prefixes of (subtree sum of fa)(of fb)."""
    return [
        float((subtree_sums(fa, l) * subtree_sums(fb, l)).sum())
        for l in range(fa.ndim + 1)
    ]


@dataclass
class Cascade:
    """One truncated cascade realization with tail-mass bookkeeping."""

    rsb: RSBParams
    b: int
    levels: list          # levels[l-1]: u values, shape (b,)*l
    node_sums: list       # kept-mass per node block, shape (b,)*(l-1)
    node_tails: list      # conditional mean mass below the kept points
    v: np.ndarray         # leaf products, shape (b,)*k
    w: np.ndarray         # normalized leaf weights

    @property
    def k(self) -> int:
        return self.rsb.k

    @property
    def leaf_count(self) -> int:
        return self.b**self.k

    def leaf_weights_flat(self) -> np.ndarray:
        return self.w.reshape(-1)

    def level_losses(self) -> np.ndarray:
        """Estimated relative mass lost to truncation, per level.

        Weighted over nodes by their prefix product times corrected kept
        mass; subtrees below kept and missing points have equal
        conditional mean mass per unit weight, so no subtree factor.
        """
        out = np.empty(self.k)
        prefix = np.ones(())
        for level in range(1, self.k + 1):
            s = self.node_sums[level - 1]
            t = self.node_tails[level - 1]
            eps = t / (s + t)
            weights = np.asarray(prefix) * (s + t)
            out[level - 1] = float((weights * eps).sum() / weights.sum())
            prefix = np.asarray(prefix)[..., None] * self.levels[level - 1]
        return out

    def cumulative_losses(self) -> np.ndarray:
        """eps_{<=l} = 1 - prod_{l' <= l} (1 - eps_{l'}), l = 0..k."""
        losses = self.level_losses()
        return 1.0 - np.cumprod(np.concatenate([[1.0], 1.0 - losses]))

    def corrected_concentrations(self) -> np.ndarray:
        """Prefix concentrations rescaled to the untruncated cascade.

        C_l computed from kept weights inflates by exactly
        1/(1 - eps_{<=l})^2 relative to the full cascade restricted to
        kept prefixes: extending the cascade leaves the kept numerators
        unchanged and only grows the normalization.  Multiplying by
        (1 - eps_{<=l})^2 undoes that, leaving only pairs that involve
        a missing prefix (orders of magnitude smaller) plus the error
        of the loss estimate itself.  Index l runs 0..k; entry 0 is
        exactly 1, so partitions built from these still telescope to 1.
        """
        c = np.asarray(prefix_concentrations(self.w))
        eps = self.cumulative_losses()
        return c * (1.0 - eps) ** 2

    def overlap_mass_value(self, r: int) -> float:
        """Estimated pair mass at wedge depth r for the full cascade."""
        c = self.corrected_concentrations()
        if r == self.k + 1:
            return float(c[self.k])
        return float(c[r - 1] - c[r])

    def _concentration_allowances(self) -> np.ndarray:
        """Systematic-error budget for each corrected concentration.

        Two contributions, both scaled by TAIL_ACCURACY, a conservative
        envelope on the relative error of the estimated losses (the
        conditional tail means concentrate at the percent level once
        summed over a level): the derivative of the (1-eps)^2 rescaling
        with respect to eps, and second-order effects from losses below
        level l landing unevenly across the level-l prefixes.  Pair
        terms that involve a missing prefix are bounded by the largest
        missing weight times eps and sit far below this envelope.
        """
        c = np.asarray(prefix_concentrations(self.w))
        eps = self.cumulative_losses()
        deep = 1.0 - (1.0 - eps[self.k]) / (1.0 - eps)
        slope = 2.0 * c * (1.0 - eps) * (TAIL_ACCURACY * eps)
        uneven = c * (1.0 - eps) ** 2 * (TAIL_ACCURACY * deep)
        out = slope + uneven
        out[0] = 0.0  # C_0 is identically 1 for any truncation
        return out

    def overlap_mass_allowance(self, r: int) -> float:
        """Bound on the systematic error of ``overlap_mass_value``."""
        a = self._concentration_allowances()
        if r == self.k + 1:
            return float(a[self.k])
        return float(a[r - 1] + a[r])

    def validate(self) -> None:
        for level in range(1, self.k + 1):
            u = self.levels[level - 1]
            if not np.all(np.diff(u, axis=-1) < 0):
                raise AssertionError(f"level {level} sibling block not decreasing")
        if abs(float(self.w.sum()) - 1.0) > 1e-12:
            raise AssertionError("leaf weights do not normalize")

    def to_snapshot(self, max_leaves: int = 10**4) -> dict:
        if self.leaf_count > max_leaves:
            raise ValueError(f"snapshot limited to {max_leaves} leaves")
        paths = [
            tuple(int(d) + 1 for d in np.unravel_index(i, (self.b,) * self.k))
            for i in range(self.leaf_count)
        ]
        return {
            "k": self.k,
            "b": self.b,
            "m": list(self.rsb.m),
            "q": list(self.rsb.q),
            "paths": [list(p) for p in paths],
            "v": [float(x) for x in self.v.reshape(-1)],
            "w": [float(x) for x in self.w.reshape(-1)],
        }


def build_cascade(rsb: RSBParams, b: int, seed) -> Cascade:
    """Sample one cascade; deterministic in (rsb, b, seed).

    Each node's children block comes from the stream (seed, cascade
    module, level, parent index) through the same inverse-Levy sampler
    as the flat PD process, so the k=1 cascade is bit-identical to a
    single PD draw from the matching stream.
    """
    rsb.requires_simulable()
    if b < 2:
        raise ValueError("branching b must be at least 2")
    if b**rsb.k > MAX_LEAVES:
        raise ValueError(f"leaf count {b**rsb.k} exceeds {MAX_LEAVES}")
    base = _seed_tuple(seed)
    levels, sums, tails = [], [], []
    for level in range(1, rsb.k + 1):
        m = rsb.m[level]
        parents = b ** (level - 1)
        block = np.empty((parents, b))
        for j in range(parents):
            rng = _stream(base, MODULE_CASCADE, level, j)
            block[j] = _sample_points(rng, m, b)
        shape = (b,) * level
        levels.append(block.reshape(shape))
        sums.append(block.sum(axis=1).reshape(shape[:-1]))
        tails.append(_tail_mass(block[:, -1], m).reshape(shape[:-1]))
    v = np.ones((1,) * rsb.k)
    for level, u in enumerate(levels, start=1):
        v = v * u.reshape((b,) * level + (1,) * (rsb.k - level))
    return Cascade(
        rsb=rsb,
        b=b,
        levels=levels,
        node_sums=sums,
        node_tails=tails,
        v=v,
        w=v / v.sum(),
    )


# ---------------------------------------------------------------------------
# overlap masses
# ---------------------------------------------------------------------------


def _overlap_chunk(args, master, start, stop):
    rsb, b, r = args
    out = np.empty((stop - start, 2))
    for rep in range(start, stop):
        casc = build_cascade(rsb, b, (master, _OP_OVERLAP, rep))
        out[rep - start, 0] = casc.overlap_mass_value(r)
        out[rep - start, 1] = casc.overlap_mass_allowance(r)
    return out


def overlap_mass(
    rsb: RSBParams, b: int, r: int, replicas: int, seed: int
) -> Estimate:
    """E of the pair mass at wedge level r (r = k+1 is the diagonal).

    The value is the truncated-cascade statistic, so the r = 1..k+1
    estimates sum to one exactly per realization; the attached allowance
    bounds the distance to the untruncated target m_r - m_{r-1}.
    """
    if not 1 <= r <= rsb.k + 1:
        raise ValueError(f"r = {r} outside 1..{rsb.k + 1}")
    vals = run_replicas(_overlap_chunk, (rsb, b, r), seed, replicas)
    return Estimate.from_values(vals[:, 0], allowance=float(vals[:, 1].mean()))


# ---------------------------------------------------------------------------
# marks and menu functionals on leaves
# ---------------------------------------------------------------------------


def sample_marks(b: int, k: int, taus, base: tuple, module: int = MODULE_MARKS):
    """Per-node scalar Gaussian marks, taus[l-1] the level-l deviation.

    Drawn in per-parent blocks from (seed, module, level, parent), so a
    node's mark is a function of the seed and its path alone.
    """
    marks = []
    for level in range(1, k + 1):
        parents = b ** (level - 1)
        block = np.empty((parents, b))
        for j in range(parents):
            block[j] = _stream(base, module, level, j).standard_normal(b)
        marks.append(taus[level - 1] * block.reshape((b,) * level))
    return marks


def leaf_functional(x_fn: PathFunctional, marks, b: int, k: int) -> np.ndarray:
    """Evaluate a path functional on every leaf, shape (b,)*k."""
    arrs = [
        marks[level - 1].reshape((b,) * level + (1,) * (k - level))
        for level in range(1, k + 1)
    ]
    return np.broadcast_to(np.asarray(x_fn(arrs), dtype=float), (b,) * k)


# ---------------------------------------------------------------------------
# log-partition identity
# ---------------------------------------------------------------------------


def _logpart_chunk(args, master, start, stop):
    rsb, b, x_fn, taus = args
    out = np.empty((stop - start, 2))
    for rep in range(start, stop):
        base = (master, _OP_LOGPART, rep)
        casc = build_cascade(rsb, b, base)
        marks = sample_marks(b, rsb.k, taus, base)
        x = leaf_functional(x_fn, marks, b, rsb.k)
        logw = np.log(casc.w)
        a = logw + x
        amax = a.max()
        out[rep - start, 0] = float(amax + np.log(np.exp(a - amax).sum()))
        # Allowance: relative missing mass, scaled up when the kept
        # leaves show that exp(X) correlates with the weights (rho is
        # the unweighted-to-weighted mean ratio of exp X).
        eps = casc.cumulative_losses()[-1]
        ex = np.exp(x - x.max())
        rho = float(ex.mean() / (casc.w * ex).sum())
        out[rep - start, 1] = eps * (1.0 + abs(rho - 1.0))
    return out


def log_partition_identity(
    rsb: RSBParams,
    b: int,
    x_fn: PathFunctional,
    taus,
    replicas: int,
    seed: int,
    quad: QuadratureSpec,
):
    """MC estimate of E log sum w_alpha exp X_alpha, and its quadrature root.

    The reference is the recursion chain value X_0 computed by tensor
    quadrature, an independent method; the two agree for the ideal
    cascade, and the estimate carries a truncation allowance.
    """
    vals = run_replicas(_logpart_chunk, (rsb, b, x_fn, tuple(taus)), seed, replicas)
    est = Estimate.from_values(vals[:, 0], allowance=float(vals[:, 1].mean()))
    reference = mark_chain_root(x_fn, rsb, tuple(taus), quad)
    return est, reference


# ---------------------------------------------------------------------------
# tilted averages (unrestricted and fixed-wedge)
# ---------------------------------------------------------------------------


def _pair_value_bound(y: PairFunctional, base_abs_max: float) -> float:
    if y.form == "pair_product":
        return base_abs_max**2
    return 2.0 * base_abs_max


def _tilt_chunk(args, master, start, stop):
    rsb, b, x_fn, y_fn, taus, restricted_r = args
    out = np.empty((stop - start, 2))
    for rep in range(start, stop):
        base = (master, _OP_TILT, rep)
        casc = build_cascade(rsb, b, base)
        marks = sample_marks(b, rsb.k, taus, base)
        x = leaf_functional(x_fn, marks, b, rsb.k)
        a = np.log(casc.w) + x
        a -= a.max()
        p = np.exp(a)
        p /= p.sum()
        eps = casc.cumulative_losses()[-1]
        if restricted_r is None:
            y = leaf_functional(y_fn, marks, b, rsb.k)
            stat = float((p * y).sum())
            scale = float(np.abs(y).max())
        else:
            yb = leaf_functional(y_fn.base, marks, b, rsb.k)
            if y_fn.form == "pair_product":
                d = prefix_cross(p * yb, p * yb)
                stat = d[restricted_r - 1] - d[restricted_r]
            else:
                d = prefix_cross(p * yb, p)
                stat = 2.0 * (d[restricted_r - 1] - d[restricted_r])
            scale = _pair_value_bound(y_fn, float(np.abs(yb).max()))
        out[rep - start, 0] = stat
        out[rep - start, 1] = eps * (2.0 - eps) * (abs(stat) + scale)
    return out


def tilted_average(
    rsb: RSBParams,
    b: int,
    x_fn: PathFunctional,
    y_fn,
    taus,
    replicas: int,
    seed: int,
    quad: QuadratureSpec,
    restricted_r: int | None = None,
):
    """Exponentially tilted leaf average against its quadrature reference.

    Unrestricted: E[sum_alpha p_alpha Y_alpha], p proportional to
    v exp(X); reference E prod_l W_l Y.  Restricted at r: the pair sum
    over wedge r of p_alpha p_beta Y_{alpha,beta}; reference
    (m_r - m_{r-1}) M_r with M_r the fixed-pair chain value.
    """
    if restricted_r is None:
        if not isinstance(y_fn, PathFunctional):
            raise TypeError("unrestricted averages take a single-path functional")
        reference = mark_chain_tilted(x_fn, y_fn, rsb, tuple(taus), quad)
    else:
        if not isinstance(y_fn, PairFunctional):
            raise TypeError("restricted averages need a two-path functional")
        if not 1 <= restricted_r <= rsb.k:
            raise ValueError(f"restricted_r = {restricted_r} outside 1..{rsb.k}")
        m_jump = rsb.m[restricted_r] - rsb.m[restricted_r - 1]
        reference = m_jump * mark_chain_restricted(
            x_fn, y_fn, rsb, tuple(taus), restricted_r, quad
        )
    vals = run_replicas(
        _tilt_chunk, (rsb, b, x_fn, y_fn, tuple(taus), restricted_r), seed, replicas
    )
    est = Estimate.from_values(vals[:, 0], allowance=float(vals[:, 1].mean()))
    return est, reference


# ---------------------------------------------------------------------------
# weight-tilt invariance (the testable form of the reweighting lemma)
# ---------------------------------------------------------------------------


def _weight_statistic(name: str, p: np.ndarray) -> float:
    if name == "max_weight":
        return float(p.max())
    if name == "pair_sum":
        return float((p * p).sum())
    raise ValueError(f"unknown statistic {name!r}")


def _invariance_chunk(args, master, start, stop):
    rsb, b, x_fn, taus, statistic = args
    out = np.empty((stop - start, 4))
    for rep in range(start, stop):
        tilt_base = (master, _OP_INVARIANCE, rep, 0)
        casc = build_cascade(rsb, b, tilt_base)
        marks = sample_marks(b, rsb.k, taus, tilt_base)
        x = leaf_functional(x_fn, marks, b, rsb.k)
        a = np.log(casc.w) + x
        a -= a.max()
        p = np.exp(a)
        p /= p.sum()
        plain = build_cascade(rsb, b, (master, _OP_INVARIANCE, rep, 1))
        s_tilt = _weight_statistic(statistic, p)
        s_plain = _weight_statistic(statistic, plain.w)
        e_tilt = casc.cumulative_losses()[-1]
        e_plain = plain.cumulative_losses()[-1]
        out[rep - start] = (
            s_tilt,
            e_tilt * (2.0 - e_tilt) * s_tilt,
            s_plain,
            e_plain * (2.0 - e_plain) * s_plain,
        )
    return out


def weight_tilt_invariance(
    rsb: RSBParams,
    b: int,
    x_fn: PathFunctional,
    taus,
    statistic: str,
    replicas: int,
    seed: int,
):
    """Distributional match of tilted and plain normalized weights.

    The reweighting lemma says (v_alpha exp(X_alpha - X_0)) is another
    copy of (v_alpha); after normalization the statistics of the two
    weight vectors must agree.  Returns (tilted, plain) estimates of the
    chosen menu statistic from independent replicas.
    """
    if statistic not in INVARIANCE_STATISTICS:
        raise ValueError(f"statistic must be one of {INVARIANCE_STATISTICS}")
    vals = run_replicas(
        _invariance_chunk, (rsb, b, x_fn, tuple(taus), statistic), seed, replicas
    )
    tilted = Estimate.from_values(vals[:, 0], allowance=float(vals[:, 1].mean()))
    plain = Estimate.from_values(vals[:, 2], allowance=float(vals[:, 3].mean()))
    return tilted, plain


# ---------------------------------------------------------------------------
# Gaussian field columns along the tree
# ---------------------------------------------------------------------------


@dataclass
class CascadeFields:
    """Per-node field columns, reconstructed lazily from path streams."""

    cascade: Cascade
    mixture: MixtureFunction
    N: int
    base: tuple
    column_stds: np.ndarray
    _dense: np.ndarray | None = field(default=None, repr=False)

    def root_column(self) -> np.ndarray:
        rng = _stream(self.base, MODULE_FIELDS, 0, 0)
        return self.column_stds[0] * rng.standard_normal(self.N)

    def level_block(self, level: int, parent: int) -> np.ndarray:
        """Columns of all b children of one parent, shape (b, N)."""
        rng = _stream(self.base, MODULE_FIELDS, level, parent)
        out = rng.standard_normal((self.cascade.b, self.N))
        return self.column_stds[level] * out

    def field_for_leaf(self, path) -> np.ndarray:
        """s^alpha for one 0-indexed path, summing columns along it."""
        b = self.cascade.b
        total = self.root_column()
        parent = 0
        for level, digit in enumerate(path, start=1):
            total = total + self.level_block(level, parent)[digit]
            parent = parent * b + digit
        return total

    def all_fields(self) -> np.ndarray:
        """Leaf-by-site field matrix, shape (b^k, N), row-major leaf order."""
        if self._dense is not None:
            return self._dense
        b, k = self.cascade.b, self.cascade.k
        total = np.tile(self.root_column(), (b**k, 1))
        for level in range(1, k + 1):
            rows = np.vstack(
                [self.level_block(level, j) for j in range(b ** (level - 1))]
            )
            total += np.repeat(rows, b ** (k - level), axis=0)
        self._dense = total
        return total


def attach_fields(
    cascade: Cascade, mixture: MixtureFunction, rsb: RSBParams, N: int, seed
) -> CascadeFields:
    """Gaussian columns z along the tree; leaf sums have cov xi'(q_wedge)."""
    if rsb is not cascade.rsb and (rsb.m != cascade.rsb.m or rsb.q != cascade.rsb.q):
        raise ValueError("rsb does not match the cascade's parameters")
    if not 1 <= N <= 20:
        raise ValueError("N outside 1..20")
    check_field_compatible(mixture)
    stds = np.sqrt(np.maximum(rsb.variances(mixture), 0.0))
    return CascadeFields(
        cascade=cascade,
        mixture=mixture,
        N=N,
        base=_seed_tuple(seed),
        column_stds=stds,
    )


def _fieldcov_chunk(args, master, start, stop):
    rsb, mixture, N, b, alpha, beta, i, j = args
    stds = np.sqrt(np.maximum(rsb.variances(mixture), 0.0))
    k = rsb.k
    out = np.empty(stop - start)
    for rep in range(start, stop):
        base = (master, _OP_FIELDCOV, rep)
        # Blocks are cached per replica so the two paths reuse identical
        # draws wherever they share a prefix, exactly as a full build would.
        blocks: dict = {}

        def column(level, parent, digit):
            key = (level, parent)
            if key not in blocks:
                rng = _stream(base, MODULE_FIELDS, level, parent)
                blocks[key] = stds[level] * rng.standard_normal((b, N))
            return blocks[key][digit]

        root = stds[0] * _stream(base, MODULE_FIELDS, 0, 0).standard_normal(N)
        fields = []
        for path in (alpha, beta):
            total = root.copy()
            parent = 0
            for level, digit in enumerate(path, start=1):
                total = total + column(level, parent, digit)
                parent = parent * b + digit
            fields.append(total)
        out[rep - start] = fields[0][i] * fields[1][j]
    return out


def field_covariance(
    rsb: RSBParams,
    mixture: MixtureFunction,
    N: int,
    b: int,
    alpha,
    beta,
    i: int,
    j: int,
    replicas: int,
    seed: int,
) -> Estimate:
    """MC estimate of E s_i^alpha s_j^beta over field disorder.

    Paths are 0-indexed digit tuples; the target is xi'(q_{wedge}) for
    i = j and zero otherwise.
    """
    alpha, beta = tuple(alpha), tuple(beta)
    if len(alpha) != rsb.k or len(beta) != rsb.k:
        raise ValueError("paths must have length k")
    if any(not 0 <= d < b for d in alpha + beta):
        raise ValueError("path digits outside 0..b-1")
    vals = run_replicas(
        _fieldcov_chunk, (rsb, mixture, N, b, alpha, beta, i, j), seed, replicas
    )
    return Estimate.from_values(vals)
