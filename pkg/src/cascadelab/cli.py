"""Command line front end: run one verification command, emit one report.

Configuration comes from an optional ``key = value`` file plus flag
overrides; flags win.  Every run produces a single JSON report with a
fixed envelope (config echo, config hash, seed, version, records), and
optionally a CSV series for grid-valued output.  Reports are serialized
with sorted keys, so two runs of the same command with the same seed are
byte-identical apart from the ``generated_at`` field, regardless of the
worker count.

Exit status: 0 when every check passed, 1 when at least one failed, 2
when the configuration was rejected (nothing is written in that case).
"""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from .cascade import (
    log_partition_identity,
    overlap_mass,
    tilted_average,
    weight_tilt_invariance,
)
from .functionals import PairFunctional, PathFunctional
from .interpolation import (
    derivative_check,
    error_term_check,
    gibbs_overlap_mass,
    phi_t,
)
from .mixture import RSBParams, make_mixture, sk_mixture
from .pd_process import (
    MarkSpec,
    corollary_moments,
    estimate_pair_sum,
    verify_invariance,
)
from .recursion import (
    QuadratureSpec,
    guerra_bound,
    mu_r_quadrature,
    optimize_bound,
    phi0,
)
from .sk_model import exact_free_energy, verify_bound
from .stats import Exact, identity_check

SCHEMA_VERSION = 1

COMMANDS = (
    "pd",
    "cascade",
    "bound",
    "optimize",
    "sk-exact",
    "interpolate",
    "verify-all",
)

INTERPOLATE_CHECKS = ("phi", "derivative", "overlap", "error-term")
PRESETS = ("desk", "smoke")


class ConfigError(Exception):
    """A rejected configuration; maps to exit status 2."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

# One flat key space shared by the config file and the flag overrides.
# Unknown keys are rejected rather than ignored, so a typo cannot
# silently fall back to a default.
_DEFAULTS = {
    "mixture": [[2, 1.0]],
    "m": [0.5],
    "q": [0.5],
    "N": 6,
    "b": 100,
    "n_max": 100000,
    "replicas": 1000,
    "nodes": 40,
    "t": 0.5,
    "t_grid": [0.0, 0.25, 0.5, 0.75, 1.0],
    "r": None,
    "h": 0.0,
    "k": None,
    "step": 0.02,
    "seed": 1729,
    "tolerance": 3.0,
    "mark_family": "two_point",
    "statistic": "pair_sum",
    "check": "phi",
    "preset": "desk",
    "scan_q1": None,
    "json_out": None,
    "csv_out": None,
}

_INT_KEYS = ("N", "b", "n_max", "replicas", "nodes", "seed")
_FLOAT_KEYS = ("t", "h", "step", "tolerance")
_STR_KEYS = ("mark_family", "statistic", "check", "preset")
_PATH_KEYS = ("json_out", "csv_out")


def _as_float_list(value, key: str) -> list:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if isinstance(value, (list, tuple)) and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return [float(v) for v in value]
    raise ConfigError(f"{key} must be a number or a list of numbers, got {value!r}")


def _validated(key: str, value):
    """Coerce one config value to its canonical type or raise ConfigError."""
    if key not in _DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        floor = 0 if key == "seed" else 1
        if value < floor:
            raise ConfigError(f"{key} must be >= {floor}, got {value}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if key in _PATH_KEYS:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a path string, got {value!r}")
        return value
    if key in ("m", "q", "t_grid"):
        return _as_float_list(value, key)
    if key == "mixture":
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError("mixture must be a nonempty list of [p, beta] pairs")
        pairs = []
        for item in value:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ConfigError(f"mixture entries must be [p, beta] pairs, got {item!r}")
            pairs.append([item[0], float(item[1])])
        return pairs
    if key == "r":
        if value is None:
            return None
        if isinstance(value, int) and not isinstance(value, bool):
            return [value]
        if isinstance(value, (list, tuple)) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            return list(value)
        raise ConfigError(f"r must be an integer or a list of integers, got {value!r}")
    if key == "k":
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"k must be an integer, got {value!r}")
        return value
    if key == "scan_q1":
        if value is None:
            return None
        if (
            not isinstance(value, (list, tuple))
            or len(value) != 3
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
        ):
            raise ConfigError("scan_q1 must be [start, stop, count]")
        start, stop, count = float(value[0]), float(value[1]), int(value[2])
        if not (0.0 < start < stop < 1.0):
            raise ConfigError("scan_q1 must satisfy 0 < start < stop < 1")
        if count < 2:
            raise ConfigError("scan_q1 needs at least 2 grid points")
        return [start, stop, count]
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; values are Python literals.

    Blank lines and ``#`` comments are allowed.  Unknown and duplicate
    keys are errors.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rhs = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            out[key] = ast.literal_eval(rhs.strip())
        except (ValueError, SyntaxError):
            raise ConfigError(
                f"line {lineno}: value for {key!r} is not a Python literal: {rhs.strip()!r}"
            ) from None
    return out


def serialize_config(values: dict) -> str:
    """Write a full config back to file syntax, fixed key order.

    ``parse_config_text(serialize_config(v))`` recovers ``v`` exactly.
    """
    return "".join(f"{key} = {values[key]!r}\n" for key in _DEFAULTS)


def config_hash(values: dict) -> str:
    """Digest of the computation-relevant config.

    Output destinations are excluded: two runs that compute the same
    thing share a hash no matter where their reports are written.
    """
    relevant = dict(values, json_out=None, csv_out=None)
    digest = hashlib.sha256(serialize_config(relevant).encode("utf-8"))
    return digest.hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    """One resolved run: command, parameters, and which keys were set."""

    command: str
    explicit: frozenset = frozenset()
    mixture: list = field(default_factory=lambda: list(_DEFAULTS["mixture"]))
    m: list = field(default_factory=lambda: list(_DEFAULTS["m"]))
    q: list = field(default_factory=lambda: list(_DEFAULTS["q"]))
    N: int = _DEFAULTS["N"]
    b: int = _DEFAULTS["b"]
    n_max: int = _DEFAULTS["n_max"]
    replicas: int = _DEFAULTS["replicas"]
    nodes: int = _DEFAULTS["nodes"]
    t: float = _DEFAULTS["t"]
    t_grid: list = field(default_factory=lambda: list(_DEFAULTS["t_grid"]))
    r: list | None = None
    h: float = _DEFAULTS["h"]
    k: int | None = None
    step: float = _DEFAULTS["step"]
    seed: int = _DEFAULTS["seed"]
    tolerance: float = _DEFAULTS["tolerance"]
    mark_family: str = _DEFAULTS["mark_family"]
    statistic: str = _DEFAULTS["statistic"]
    check: str = _DEFAULTS["check"]
    preset: str = _DEFAULTS["preset"]
    scan_q1: list | None = None
    json_out: str | None = None
    csv_out: str | None = None

    def values_dict(self) -> dict:
        return {key: getattr(self, key) for key in _DEFAULTS}

    def mixture_fn(self):
        return make_mixture([tuple(pair) for pair in self.mixture])

    def rsb_params(self) -> RSBParams:
        return RSBParams.from_interior(tuple(self.m), tuple(self.q))

    def quad(self, convergence_check: bool = True) -> QuadratureSpec:
        return QuadratureSpec(
            nodes_per_level=self.nodes, convergence_check=convergence_check
        )

    def r_values(self, max_r: int) -> list:
        if self.r is None:
            return list(range(1, max_r + 1))
        for r in self.r:
            if not 1 <= r <= max_r:
                raise ConfigError(f"r = {r} outside 1..{max_r}")
        return list(self.r)


def resolve_config(command: str, file_values: dict, flag_values: dict) -> RunConfig:
    values = dict(_DEFAULTS)
    explicit = set()
    for source in (file_values, flag_values):
        for key, val in source.items():
            values[key] = _validated(key, val)
            explicit.add(key)
    return RunConfig(command=command, explicit=frozenset(explicit), **values)


def child_seed(master: int, index: int) -> int:
    """Derived integer seed for operation ``index`` of a multi-part run.

    Distinct indices give statistically independent downstream streams;
    the same (master, index) always gives the same integer.
    """
    ss = np.random.SeedSequence(master, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# report envelope and CSV series
# ---------------------------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _package_version() -> str:
    try:
        return metadata.version("cascadelab")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_report(cfg: RunConfig, records: list, result: dict | None) -> dict:
    values = cfg.values_dict()
    return {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "config": values,
        "config_hash": config_hash(values),
        "seed": cfg.seed,
        "version": _package_version(),
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "result": result,
        "records": [rec.to_json_dict() for rec in records],
        "pass": all(rec.passed for rec in records),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"


def emit_series(path: str, columns, rows) -> None:
    """Write a CSV series: header row, fixed column order, full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [format(v, ".17g") if isinstance(v, float) else v for v in row]
            )


def _fmt(x: float) -> str:
    return format(x, "g")


# ---------------------------------------------------------------------------
# mark-family presets for the point-process checks
# ---------------------------------------------------------------------------


def mark_preset(family: str) -> MarkSpec:
    if family == "constant":
        return MarkSpec("constant", cx=1.3, cy=0.7)
    if family == "lognormal":
        return MarkSpec("lognormal", shift=1.0, sigma_x=0.4, sigma_y=0.35, rho=0.6)
    if family == "two_point":
        return MarkSpec("two_point", xs=(1.0, 2.0), ys=(0.5, 1.5), p=0.6)
    raise ConfigError(
        f"mark_family must be constant, lognormal, or two_point, got {family!r}"
    )


def expected_masses(rsb: RSBParams) -> list:
    """The overlap distribution the weights must reproduce, r = 1..k+1."""
    jumps = [rsb.m[r] - rsb.m[r - 1] for r in range(1, rsb.k + 1)]
    jumps.append(1.0 - rsb.m[rsb.k])
    return jumps


# ---------------------------------------------------------------------------
# commands; each returns (records, result, series)
# ---------------------------------------------------------------------------


def cmd_pd(cfg: RunConfig):
    records = []
    for i, mv in enumerate(cfg.m):
        if not 0.0 < mv < 1.0:
            raise ConfigError(f"pd exponent m = {mv} outside (0, 1)")
        est = estimate_pair_sum(mv, cfg.n_max, cfg.replicas, child_seed(cfg.seed, 10 + i))
        records.append(
            identity_check(f"pd_pair_sum_m{_fmt(mv)}", est, Exact(1.0 - mv), cfg.tolerance)
        )
    spec = mark_preset(cfg.mark_family)
    m0 = cfg.m[0]
    moments = corollary_moments(
        m0, spec, max(cfg.replicas, 1000), cfg.n_max, child_seed(cfg.seed, 40)
    )
    for name, lhs, rhs in moments:
        records.append(identity_check(f"corollary_{name}", lhs, rhs, cfg.tolerance))
    marked, tilted = verify_invariance(
        m0, spec, cfg.statistic, cfg.replicas, cfg.n_max, child_seed(cfg.seed, 41)
    )
    records.append(
        identity_check(f"invariance_{cfg.statistic}", marked, tilted, cfg.tolerance)
    )
    return records, None, None


def cmd_cascade(cfg: RunConfig):
    rsb = cfg.rsb_params()
    masses = expected_masses(rsb)
    seed_c = child_seed(cfg.seed, 20)
    records, rows = [], []
    # One seed for all r: the estimates then share cascade draws and the
    # estimated masses sum to one realization by realization.
    for r in range(1, rsb.k + 2):
        est = overlap_mass(rsb, cfg.b, r, cfg.replicas, seed_c)
        records.append(
            identity_check(f"overlap_mass_r{r}", est, Exact(masses[r - 1]), cfg.tolerance)
        )
        rows.append((r, masses[r - 1], est.mean, est.std_error, est.allowance))
    series = (("r", "expected", "estimate", "std_error", "allowance"), rows)
    return records, None, series


def cmd_bound(cfg: RunConfig):
    mix = cfg.mixture_fn()
    quad = cfg.quad()
    if cfg.scan_q1 is not None:
        if not cfg.csv_out:
            raise ConfigError("scan_q1 produces a CSV series; set csv_out")
        start, stop, count = cfg.scan_q1
        rows = []
        for q1 in np.linspace(start, stop, count):
            params = RSBParams(k=1, m=(0.0, 1.0), q=(0.0, float(q1), 1.0))
            rows.append((float(q1), guerra_bound(params, mix, cfg.h, quad)))
        best = min(rows, key=lambda row: row[1])
        result = {"scan": "q1", "minimum_q1": best[0], "minimum_bound": best[1]}
        return [], result, (("q1", "bound"), rows)
    rsb = cfg.rsb_params()
    res = phi0(rsb, mix, cfg.h, quad)
    value = guerra_bound(rsb, mix, cfg.h, quad)
    result = {
        "phi0": res.phi0,
        "bound": value,
        "params": {"m": list(rsb.m), "q": list(rsb.q)},
        "quad_nodes": cfg.nodes,
        "converged": res.converged,
    }
    return [], result, None


def cmd_optimize(cfg: RunConfig):
    if cfg.k is None:
        raise ConfigError("optimize needs k, the number of levels")
    mix = cfg.mixture_fn()
    opt = optimize_bound(mix, cfg.h, cfg.k, cfg.quad())
    res = phi0(opt.params, mix, cfg.h, cfg.quad(convergence_check=False))
    result = {
        "phi0": res.phi0,
        "bound": opt.value,
        "params": {"m": list(opt.params.m), "q": list(opt.params.q)},
        "quad_nodes": cfg.nodes,
        "converged": opt.converged,
        "evaluations": opt.evaluations,
    }
    return [], result, None


def cmd_sk_exact(cfg: RunConfig):
    mix = cfg.mixture_fn()
    replicas = max(cfg.replicas, 200)
    seed_f = child_seed(cfg.seed, 50)
    fixed_params = "m" in cfg.explicit or "q" in cfg.explicit
    if cfg.k is not None and fixed_params:
        raise ConfigError("give either k (optimized bound) or m and q (fixed bound)")
    if cfg.k is not None or fixed_params:
        if cfg.k is not None:
            rec = verify_bound(
                cfg.N, mix, cfg.h, replicas, cfg.quad(), seed_f, optimize_k=cfg.k
            )
        else:
            rec = verify_bound(
                cfg.N, mix, cfg.h, replicas, cfg.quad(), seed_f, rsb=cfg.rsb_params()
            )
        result = {
            "free_energy": rec.lhs,
            "std_error": rec.lhs_se,
            "bound": rec.rhs,
            "margin": rec.extras["margin"],
            "mode": rec.extras["mode"],
        }
        return [rec], result, None
    fe = exact_free_energy(cfg.N, mix, cfg.h, replicas, seed_f)
    result = {
        "free_energy": fe.mean,
        "std_error": fe.std_error,
        "N": cfg.N,
        "disorder_replicas": replicas,
    }
    return [], result, None


def cmd_interpolate(cfg: RunConfig):
    mix = cfg.mixture_fn()
    rsb = cfg.rsb_params()
    records, series = [], None
    if cfg.check == "phi":
        reference = phi0(rsb, mix, cfg.h, cfg.quad())
        est0 = phi_t(cfg.N, 0.0, mix, rsb, cfg.b, cfg.h, cfg.replicas, child_seed(cfg.seed, 60))
        records.append(
            identity_check("phi_t0_vs_quadrature", est0, Exact(reference.phi0), cfg.tolerance)
        )
        est1 = phi_t(cfg.N, 1.0, mix, rsb, cfg.b, cfg.h, cfg.replicas, child_seed(cfg.seed, 61))
        fe = exact_free_energy(
            cfg.N, mix, cfg.h, max(cfg.replicas, 200), child_seed(cfg.seed, 62)
        )
        records.append(
            identity_check("phi_t1_vs_enumeration", est1, fe.estimate, cfg.tolerance)
        )
        if cfg.csv_out:
            seed_g = child_seed(cfg.seed, 63)
            rows = []
            # One seed for the whole grid: common random numbers keep the
            # curve smooth in t.
            for t in cfg.t_grid:
                if not 0.0 <= t <= 1.0:
                    raise ConfigError(f"t_grid value {t} outside [0, 1]")
                est = phi_t(cfg.N, t, mix, rsb, cfg.b, cfg.h, cfg.replicas, seed_g)
                rows.append((t, est.mean, est.std_error, est.allowance))
            series = (("t", "phi", "std_error", "allowance"), rows)
    elif cfg.check == "derivative":
        report = derivative_check(
            cfg.N, cfg.t, mix, rsb, cfg.b, cfg.h, cfg.replicas,
            child_seed(cfg.seed, 64), step=cfg.step,
        )
        records.append(report.record)
    elif cfg.check == "overlap":
        masses = expected_masses(rsb)
        seed_m = child_seed(cfg.seed, 65)
        for r in cfg.r_values(rsb.k + 1):
            est = gibbs_overlap_mass(
                cfg.N, cfg.t, r, mix, rsb, cfg.b, cfg.h, cfg.replicas, seed_m
            )
            records.append(
                identity_check(
                    f"gibbs_overlap_r{r}", est, Exact(masses[r - 1]), cfg.tolerance,
                    extras={"t": cfg.t},
                )
            )
    elif cfg.check == "error-term":
        for r in cfg.r_values(rsb.k):
            report = error_term_check(
                cfg.N, cfg.t, r, mix, rsb, cfg.b, cfg.h, cfg.replicas,
                child_seed(cfg.seed, 66),
            )
            records.append(report.record)
    else:
        raise ConfigError(
            f"check must be one of {INTERPOLATE_CHECKS}, got {cfg.check!r}"
        )
    return records, None, series


def cmd_verify_all(cfg: RunConfig):
    """The full battery: every module's main identities in one report.

    The desk preset is sized for a coffee break; smoke for a smoke test.
    Step seeds derive from (master, step index), so the report is a pure
    function of the seed and preset.
    """
    if cfg.preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {cfg.preset!r}")
    smoke = cfg.preset == "smoke"

    def n(full, small):
        return small if smoke else full

    def seed(index):
        return child_seed(cfg.seed, 100 + index)

    tol = cfg.tolerance
    records = []

    # Point process: pair sum, moment identities, tilt invariance.
    est = estimate_pair_sum(0.5, 10**5, n(3000, 400), seed(0))
    records.append(identity_check("pd_pair_sum_m0.5", est, Exact(0.5), tol))
    for family in ("constant", "lognormal"):
        moments = corollary_moments(0.5, mark_preset(family), n(2000, 1000), 10**5, seed(1))
        for name, lhs, rhs in moments:
            records.append(identity_check(f"corollary_{name}_{family}", lhs, rhs, tol))
    for family, statistic in (("lognormal", "pair_sum"), ("two_point", "mean_mark")):
        marked, tilted = verify_invariance(
            0.6, mark_preset(family), statistic, n(2000, 400), 10**5, seed(2)
        )
        records.append(
            identity_check(f"invariance_{statistic}_{family}", marked, tilted, tol)
        )

    # Cascade weights carry the overlap distribution.
    rsb2 = RSBParams.from_interior((0.4, 0.8), (0.3, 0.6))
    masses = expected_masses(rsb2)
    for r in (1, 2, 3):
        est = overlap_mass(rsb2, n(200, 50), r, n(1000, 200), seed(3))
        records.append(
            identity_check(f"overlap_mass_r{r}", est, Exact(masses[r - 1]), tol)
        )

    # Recursion chain vs direct cascade simulation.
    quad = QuadratureSpec(nodes_per_level=n(40, 24))
    rsb1 = RSBParams.from_interior((0.5,), (0.5,))
    x_log = PathFunctional("logcosh_sum", scale=1.2)
    est, reference = log_partition_identity(
        rsb1, n(200, 60), x_log, (0.8,), n(500, 120), seed(4), quad
    )
    records.append(identity_check("log_partition_chain", est, Exact(reference), tol))

    x_lin = PathFunctional("linear", coeffs=(0.6, 0.4))
    est, reference = tilted_average(
        rsb2, n(100, 40), x_lin, PathFunctional("quadratic", coeffs=(0.5, 0.3)),
        (0.7, 0.5), n(500, 120), seed(5), quad,
    )
    records.append(identity_check("tilted_average", est, Exact(reference), tol))
    est, reference = tilted_average(
        rsb2, n(100, 40), x_lin, PairFunctional("pair_product", x_lin),
        (0.7, 0.5), n(500, 120), seed(6), quad, restricted_r=1,
    )
    records.append(identity_check("tilted_restricted_r1", est, Exact(reference), tol))
    tilted, plain = weight_tilt_invariance(
        rsb1, n(200, 60), x_log, (0.8,), "max_weight", n(800, 200), seed(7)
    )
    records.append(identity_check("weight_tilt_max_weight", tilted, plain, tol))

    # High-temperature closed form for the one-level optimized bound.
    beta = 0.4
    opt = optimize_bound(sk_mixture(beta), 0.0, 1, quad)
    records.append(
        identity_check(
            "rs_bound_closed_form", opt.value,
            Exact(math.log(2.0) + beta**2 / 4.0), tol, allowance=1e-3,
        )
    )

    # Finite-size free energy sits below the optimized bound.
    records.append(
        verify_bound(
            n(8, 6), sk_mixture(1.2), 0.3, n(500, 200), quad, seed(8),
            optimize_k=n(2, 1),
        )
    )

    # Interpolation: endpoints, derivative identity, overlap masses,
    # and the error term against its coupled-pair representation.
    mix_i = sk_mixture(0.5)
    rsb_i = RSBParams.from_interior((0.4, 0.8), (0.3, 0.6))
    reference = phi0(rsb_i, mix_i, 0.3, quad)
    est = phi_t(4, 0.0, mix_i, rsb_i, n(50, 30), 0.3, n(300, 120), seed(9))
    records.append(identity_check("phi_t0_vs_quadrature", est, Exact(reference.phi0), tol))
    est = phi_t(4, 1.0, mix_i, rsb_i, n(50, 30), 0.3, n(300, 120), seed(10))
    fe = exact_free_energy(4, mix_i, 0.3, n(400, 200), seed(11))
    records.append(identity_check("phi_t1_vs_enumeration", est, fe.estimate, tol))
    records.append(
        derivative_check(
            4, 0.5, mix_i, rsb_i, n(30, 20), 0.3, n(200, 80), seed(12)
        ).record
    )
    seed_m = seed(13)
    masses = expected_masses(rsb_i)
    for r in (1, 2, 3):
        est = gibbs_overlap_mass(4, 0.9, r, mix_i, rsb_i, n(50, 30), 0.3, n(300, 100), seed_m)
        records.append(
            identity_check(f"gibbs_overlap_r{r}", est, Exact(masses[r - 1]), tol,
                           extras={"t": 0.9})
        )
    rsb_e = RSBParams.from_interior((0.3, 0.6), (0.3, 0.6))
    records.append(
        error_term_check(4, 0.5, 1, mix_i, rsb_e, n(40, 25), 0.3, n(100, 50), seed(14)).record
    )

    # The restricted Gibbs average against tensor quadrature, plus its
    # exact normalization and chain factorization.
    quad_mu = QuadratureSpec(nodes_per_level=14, convergence_check=False)
    report = error_term_check(1, 0.5, 1, mix_i, rsb_e, n(60, 30), 0.3, n(250, 100), seed(15))
    mu = mu_r_quadrature(1, 2, 1, mix_i, rsb_e, 0.3, 0.5, "delta_overlap", quad_mu)
    records.append(
        identity_check("mu_quadrature_r1", report.coupled_average, Exact(mu.value), tol)
    )
    unit = mu_r_quadrature(1, 2, 1, mix_i, rsb_e, 0.3, 0.5, "one", quad_mu)
    records.append(
        identity_check("mu_normalization", unit.value, Exact(1.0), tol, allowance=1e-8)
    )
    records.append(
        identity_check(
            "mu_chain_factorization", unit.chain_max_diff, Exact(0.0), tol, allowance=1e-8
        )
    )
    return records, None, None


_COMMANDS = {
    "pd": cmd_pd,
    "cascade": cmd_cascade,
    "bound": cmd_bound,
    "optimize": cmd_optimize,
    "sk-exact": cmd_sk_exact,
    "interpolate": cmd_interpolate,
    "verify-all": cmd_verify_all,
}


# ---------------------------------------------------------------------------
# argument parsing and entry point
# ---------------------------------------------------------------------------


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise argparse.ArgumentTypeError(f"not a Python literal: {text!r}") from None


def _add_common(sub):
    sub.add_argument("--config", help="path to a key = value config file")
    for key in ("seed", "replicas", "N", "b", "n_max", "nodes"):
        sub.add_argument(f"--{key}", type=int, default=argparse.SUPPRESS)
    for key in ("h", "t", "step", "tolerance"):
        sub.add_argument(f"--{key}", type=float, default=argparse.SUPPRESS)
    for key in ("mixture", "m", "q", "t_grid", "r"):
        flag = key.replace("_", "-")
        sub.add_argument(f"--{flag}", dest=key, type=_literal, default=argparse.SUPPRESS)
    sub.add_argument("--json-out", dest="json_out", default=argparse.SUPPRESS)
    sub.add_argument("--csv-out", dest="csv_out", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadelab",
        description="verification runs for cascade, recursion, and interpolation identities",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    specs = {
        "pd": "point-process pair sum, moment identities, tilt invariance",
        "cascade": "overlap masses of the hierarchical weights",
        "bound": "evaluate the k-level bound (optionally scan q1)",
        "optimize": "minimize the bound over (m, q) at fixed k",
        "sk-exact": "exact finite-size free energy, optionally vs a bound",
        "interpolate": "interpolated free energy checks on the joint system",
        "verify-all": "run the whole identity battery",
    }
    for name, help_text in specs.items():
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        if name == "pd":
            sub.add_argument(
                "--mark-family", dest="mark_family",
                choices=("constant", "lognormal", "two_point"),
                default=argparse.SUPPRESS,
            )
            sub.add_argument(
                "--statistic", choices=("pair_sum", "max_weight", "mean_mark"),
                default=argparse.SUPPRESS,
            )
        if name in ("optimize", "sk-exact"):
            sub.add_argument("--k", type=int, default=argparse.SUPPRESS)
        if name == "bound":
            sub.add_argument(
                "--scan-q1", dest="scan_q1", type=_literal, nargs="?",
                const=[0.02, 0.8, 40], default=argparse.SUPPRESS,
            )
        if name == "interpolate":
            sub.add_argument(
                "--check", choices=INTERPOLATE_CHECKS, default=argparse.SUPPRESS
            )
        if name == "verify-all":
            sub.add_argument("--preset", choices=PRESETS, default=argparse.SUPPRESS)
    return parser


def run(argv=None) -> int:
    """Execute one command line; returns the exit status."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        file_values = {}
        if getattr(ns, "config", None):
            file_values = parse_config_text(Path(ns.config).read_text())
        flag_values = {
            key: val for key, val in vars(ns).items() if key not in ("command", "config")
        }
        cfg = resolve_config(ns.command, file_values, flag_values)
        records, result, series = _COMMANDS[ns.command](cfg)
        report = build_report(cfg, records, result)
        text = report_json(report)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(text)
    try:
        if cfg.json_out:
            Path(cfg.json_out).write_text(text)
        if series is not None and cfg.csv_out:
            emit_series(cfg.csv_out, *series)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if report["pass"] else 1


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
