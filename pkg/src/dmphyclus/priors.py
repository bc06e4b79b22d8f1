"""Cluster-assignment and concentration priors (unnormalized, log scale)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError
from .tree import ClusterAssignment, Topology, is_clade_partition


@dataclass(frozen=True)
class ClusterPriorParams:
    lam: float          # Poisson rate on the number of clusters
    alpha: float = 1.0  # symmetric Dirichlet concentration
    eta: float = 1.0    # gamma shape for alpha
    beta: float = 1.0   # gamma scale for alpha

    def __post_init__(self):
        for name in ("lam", "alpha", "eta", "beta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")


@dataclass(frozen=True)
class BranchLengthPriorConfig:
    """Grids of mean branch lengths for the two regimes."""

    within_means: tuple[float, ...]
    between_means: tuple[float, ...]
    between_cv: float = 1.0

    def __post_init__(self):
        for name in ("within_means", "between_means"):
            g = np.asarray(getattr(self, name), dtype=float)
            if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise ValidationError(f"{name} must be positive and strictly increasing")
        if not self.between_cv > 0:
            raise ValidationError("between_cv must be positive")


def log_dm_term(sizes, alpha: float) -> float:
    """``log B(n + alpha) / B(alpha)`` for the symmetric Dirichlet of dimension K."""
    sizes = np.asarray(sizes, dtype=float)
    k = sizes.size
    n = sizes.sum()
    return float(gammaln(sizes + alpha).sum() - gammaln(n + k * alpha)
                 - k * gammaln(alpha) + gammaln(k * alpha))


def log_multinomial(sizes) -> float:
    sizes = np.asarray(sizes, dtype=float)
    return float(gammaln(sizes.sum() + 1) - gammaln(sizes + 1).sum())


def log_poisson(k: int, lam: float) -> float:
    return float(k * np.log(lam) - lam - gammaln(k + 1))


def log_cluster_prior_sizes(sizes, alpha: float, lam: float) -> float:
    """Log prior of a clade partition given its cluster sizes."""
    return log_dm_term(sizes, alpha) + log_multinomial(sizes) + log_poisson(len(sizes), lam)


def log_cluster_prior(c: ClusterAssignment, t: Topology, params: ClusterPriorParams) -> float:
    """Dirichlet-multinomial x Poisson prior with the clade indicator.

    Returns ``-inf`` for partitions that are not unions of clades of ``t``.
    """
    if not is_clade_partition(t, c):
        return -np.inf
    return log_cluster_prior_sizes(c.sizes, params.alpha, params.lam)


def log_alpha_prior(alpha: float, eta: float, beta: float) -> float:
    """Gamma(shape=eta, scale=beta) log-density."""
    if not alpha > 0:
        return -np.inf
    return float((eta - 1) * np.log(alpha) - alpha / beta - gammaln(eta) - eta * np.log(beta))


def split_log_ratio(n_parent: int, n_a: int, n_b: int, k: int, n: int, alpha: float,
                    lam: float) -> float:
    """Change in log prior when a size ``n_parent`` cluster splits into ``n_a + n_b``.

    ``k`` is the number of clusters before the split and ``n`` the number of tips.
    """
    # Dirichlet-multinomial
    dm = (gammaln(n_a + alpha) + gammaln(n_b + alpha) - gammaln(n_parent + alpha)
          - gammaln(n + (k + 1) * alpha) + gammaln(n + k * alpha)
          - gammaln(alpha) + gammaln((k + 1) * alpha) - gammaln(k * alpha))
    multi = gammaln(n_parent + 1) - gammaln(n_a + 1) - gammaln(n_b + 1)
    pois = np.log(lam) - np.log(k + 1)
    return float(dm + multi + pois)


def alpha_log_ratio(sizes, alpha_old: float, alpha_new: float) -> float:
    """Change in the Dirichlet-multinomial term when only alpha changes."""
    return log_dm_term(sizes, alpha_new) - log_dm_term(sizes, alpha_old)
