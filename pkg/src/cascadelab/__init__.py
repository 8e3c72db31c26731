"""Numerical laboratory for Poisson-Dirichlet cascades and hierarchical
free-energy bounds on mean-field spin glasses.

The package is organized around the objects it simulates:

- ``mixture``: the covariance polynomial xi and its derived scalars.
- ``pd_process``: one-level Poisson-Dirichlet point processes and the
  mark-invariance identities.
- ``cascade``: truncated hierarchical (tree) Poisson processes, attached
  Gaussian fields, and the tilting identities.
- ``recursion``: the backward smoothing recursion, the k-step upper bound
  on the free energy, and its tilted two-replica averages by quadrature.
- ``sk_model``: exact finite-N free energy of mixed p-spin models by spin
  enumeration.
- ``interpolation``: the joint Gibbs measure over spins x tree leaves along
  the interpolation path, with derivative and error-term checks.
- ``cli``: batch command-line front end with machine-readable reports.
"""

from .mixture import (
    MixtureFunction,
    RSBParams,
    delta,
    make_mixture,
    sk_mixture,
    theta,
)
from .stats import CheckRecord, Estimate, identity_check

__all__ = [
    "CheckRecord",
    "Estimate",
    "MixtureFunction",
    "RSBParams",
    "delta",
    "identity_check",
    "make_mixture",
    "sk_mixture",
    "theta",
]

__version__ = "0.1.0"
