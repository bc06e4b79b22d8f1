"""GTR substitution model, discrete-gamma rates and marginal transition grids.

All matrices use the canonical A, C, G, T state order. Published HIV-1 rate
matrices are usually listed in A, T, C, G order; use :func:`from_atcg` to
reorder them.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats

from .errors import DomainError, ValidationError

# tolerance for accepting published (rounded) matrices before projection
INPUT_TOL = 1e-6

# published order A,T,C,G -> canonical A,C,G,T
_ATCG_TO_ACGT = [0, 2, 3, 1]


def from_atcg(q=None, pi=None):
    """Reorder a rate matrix and/or frequency vector from A,T,C,G to A,C,G,T."""
    out = []
    if q is not None:
        q = np.asarray(q, dtype=float)
        out.append(q[np.ix_(_ATCG_TO_ACGT, _ATCG_TO_ACGT)])
    if pi is not None:
        out.append(np.asarray(pi, dtype=float)[_ATCG_TO_ACGT])
    return out[0] if len(out) == 1 else tuple(out)


# Posada & Crandall (2001) HIV-1 estimates as printed in the tuning tables.
SIM_Q_ATCG = [
    [-0.83708096, 0.04319486, 0.12127074, 0.67261536],
    [0.07657272, -0.82554421, 0.66140131, 0.08757018],
    [0.27820934, 0.85593111, -1.18569748, 0.05155703],
    [1.19236359, 0.08757018, 0.03983952, -1.31977330],
]
SIM_PI_ATCG = [0.39, 0.22, 0.17, 0.22]
CHAIN_Q_ATCG = [
    [-0.79633415, 0.04560603, 0.10852696, 0.64220116],
    [0.08801344, -0.76352160, 0.59189771, 0.08361045],
    [0.31977658, 0.90370975, -1.27271206, 0.04922573],
    [1.37051455, 0.09245841, 0.03565297, -1.49862593],
]
CHAIN_PI_ATCG = [0.4298969, 0.2227602, 0.1459, 0.2014428]


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Reversible rate matrix with its spectral decomposition.

    ``q = D^{-1/2} U diag(eigvals) U^T D^{1/2}`` with ``D = diag(pi)``.
    """

    q: np.ndarray
    pi: np.ndarray
    eigvals: np.ndarray
    _left: np.ndarray   # D^{-1/2} U
    _right: np.ndarray  # U^T D^{1/2}

    def transition(self, t: float) -> np.ndarray:
        return matrix_exponential(self, t)

    def fingerprint(self) -> str:
        h = hashlib.sha1(np.ascontiguousarray(self.q).tobytes())
        h.update(np.ascontiguousarray(self.pi).tobytes())
        return h.hexdigest()[:16]


def build_gtr(q, pi) -> RateMatrix:
    """Validate ``q`` and ``pi`` and build a :class:`RateMatrix`.

    Published matrices are rounded to ~8 digits, so checks run at
    ``INPUT_TOL``; the accepted matrix is then projected onto the nearest
    exactly reversible form (symmetrized flux ``pi_i q_ij``, diagonal set to
    minus the row sum, ``pi`` renormalized). The stored ``q`` therefore has
    zero row sums and ``pi^T q = 0`` to machine precision.
    """
    q = np.array(q, dtype=float)
    pi = np.array(pi, dtype=float)
    if q.shape != (4, 4):
        raise ValidationError(f"rate matrix must be 4x4, got {q.shape}")
    if pi.shape != (4,):
        raise ValidationError(f"limiting probabilities must have length 4, got {pi.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(pi))):
        raise ValidationError("rate matrix and frequencies must be finite")
    off = q - np.diag(np.diag(q))
    if np.any(off < 0):
        raise ValidationError("negative off-diagonal rate")
    rows = q.sum(axis=1)
    if np.any(np.abs(rows) > INPUT_TOL):
        raise ValidationError(f"row sums must be 0 (got {np.round(rows, 10).tolist()})")
    if np.any(pi <= 0):
        raise ValidationError("limiting probabilities must be positive")
    if abs(pi.sum() - 1.0) > INPUT_TOL:
        raise ValidationError(f"limiting probabilities must sum to 1 (got {pi.sum()!r})")
    if np.any(np.abs(pi @ q) > INPUT_TOL):
        raise ValidationError("stationarity pi^T Q = 0 violated")
    flux = pi[:, None] * off
    if np.any(np.abs(flux - flux.T) > INPUT_TOL):
        raise ValidationError("rate matrix is not reversible with respect to pi")

    pi = pi / pi.sum()
    flux = 0.5 * (flux + flux.T)
    q = flux / pi[:, None]
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))

    sq = np.sqrt(pi)
    sym = sq[:, None] * q / sq[None, :]
    sym = 0.5 * (sym + sym.T)
    w, u = np.linalg.eigh(sym)
    w = np.minimum(w, 0.0)
    q.setflags(write=False)
    pi.setflags(write=False)
    return RateMatrix(q, pi, w, u / sq[:, None], u.T * sq[None, :])


def matrix_exponential(rm: RateMatrix, t) -> np.ndarray:
    """``exp(Q t)`` for scalar ``t`` (4x4) or an array of times (..., 4, 4)."""
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)) or np.any(t_arr < 0):
        raise DomainError(f"branch length must be finite and non-negative, got {t!r}")
    e = np.exp(t_arr[..., None] * rm.eigvals)
    p = np.einsum("ij,...j,jk->...ik", rm._left, e, rm._right)
    return np.clip(p, 0.0, None)


@dataclass(frozen=True)
class DiscreteGamma:
    """Equal-probability discrete gamma rate categories."""

    n_categories: int
    shape: float
    scalers: np.ndarray
    scale: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.scalers))


def discrete_gamma(n_r: int, shape: float, scale: float | None = None) -> DiscreteGamma:
    """Category rates as conditional means of each inter-quantile slice.

    With ``scale=None`` the gamma has rate equal to ``shape`` (mean 1), the
    usual normalisation. Passing an explicit ``scale`` keeps that scale, e.g.
    ``scale=shape`` for a literal "shape and scale both r" reading.
    """
    if int(n_r) != n_r or n_r < 1:
        raise DomainError(f"number of categories must be a positive integer, got {n_r!r}")
    if not shape > 0:
        raise DomainError(f"gamma shape must be positive, got {shape!r}")
    if scale is None:
        scale = 1.0 / shape
    if not scale > 0:
        raise DomainError(f"gamma scale must be positive, got {scale!r}")
    n_r = int(n_r)
    mean = shape * scale
    if n_r == 1:
        return DiscreteGamma(1, shape, np.array([mean]), scale)
    cuts = stats.gamma.ppf(np.arange(1, n_r) / n_r, shape, scale=scale)
    # E[X; X < c] = mean * F_{shape+1}(c)
    upper = stats.gamma.cdf(cuts, shape + 1, scale=scale)
    cdf = np.concatenate([[0.0], upper, [1.0]])
    scalers = mean * n_r * np.diff(cdf)
    return DiscreteGamma(n_r, float(shape), scalers, float(scale))


class Regime(str, Enum):
    WITHIN = "within"
    BETWEEN = "between"


_REGIME_CODE = {Regime.WITHIN: 1, Regime.BETWEEN: 2}


def lognormal_params(mean: float, cv: float = 1.0) -> tuple[float, float]:
    """(mu, sigma) of a log-normal with the given mean and coefficient of variation."""
    sigma2 = np.log1p(cv * cv)
    return float(np.log(mean) - 0.5 * sigma2), float(np.sqrt(sigma2))


def grid_means(center_mean: float, radius_fraction: float, grid_size: int) -> np.ndarray:
    """``grid_size`` equidistant means within ``center * (1 +- radius_fraction)``."""
    if not center_mean > 0:
        raise DomainError(f"grid center must be positive, got {center_mean!r}")
    if grid_size < 1:
        raise DomainError("grid_size must be >= 1")
    if not 0 <= radius_fraction < 1:
        raise DomainError("radius_fraction must be in [0, 1)")
    if grid_size == 1:
        return np.array([float(center_mean)])
    return np.linspace(center_mean * (1 - radius_fraction),
                       center_mean * (1 + radius_fraction), grid_size)


def standard_draws(regime, K: int, seed, cv: float = 1.0) -> np.ndarray:
    """Unit-mean branch-length multipliers shared by every grid point.

    Seed derivation: ``SeedSequence(seed, spawn_key=(code,))`` with code 1
    for within and 2 for between, fed to a Philox generator. Within draws are
    Exp(1); between draws are LogNormal with mean 1 and the given CV. A grid
    point with mean ``m`` uses ``m * draws``, so grid points and rate
    categories share common random numbers.
    """
    regime = Regime(regime)
    ss = np.random.SeedSequence(seed, spawn_key=(_REGIME_CODE[regime],))
    rng = np.random.Generator(np.random.Philox(ss))
    if regime is Regime.WITHIN:
        return rng.standard_exponential(K)
    mu, sigma = lognormal_params(1.0, cv)
    return rng.lognormal(mu, sigma, K)


@dataclass(frozen=True, eq=False)
class MarginalTransitionGrid:
    """Branch-length-averaged transition matrices.

    ``matrices[g, r]`` is the average of ``exp(Q * xi_r * d)`` over ``K``
    draws ``d`` from the regime's branch-length distribution with mean
    ``means[g]``.
    """

    regime: Regime
    means: np.ndarray
    matrices: np.ndarray
    mc_samples: int
    seed: int | None
    cv: float = 1.0

    @property
    def size(self) -> int:
        return len(self.means)


def build_marginal_grid(rm: RateMatrix, dg: DiscreteGamma, regime, center_mean: float,
                        radius_fraction: float = 0.08, grid_size: int = 20,
                        K: int = 100_000, seed=0, cv: float = 1.0,
                        batch: int = 20_000) -> MarginalTransitionGrid:
    """Monte Carlo marginal transition matrices over a grid of mean lengths."""
    regime = Regime(regime)
    if K < 1:
        raise DomainError("K must be >= 1")
    means = grid_means(center_mean, radius_fraction, grid_size)
    draws = standard_draws(regime, K, seed, cv)
    # E[exp(Q s d)] = left diag(E[exp(lambda s d)]) right, by linearity
    rates = means[:, None] * dg.scalers[None, :]               # (G, R)
    acc = np.zeros(rates.shape + (4,))
    for start in range(0, K, batch):
        d = draws[start:start + batch]
        acc += np.exp(rates[..., None, None] * d[:, None] * rm.eigvals).sum(axis=-2)
    avg = acc / K
    mats = np.einsum("ij,grj,jk->grik", rm._left, avg, rm._right)
    mats = np.clip(mats, 0.0, None)
    mats /= mats.sum(axis=-1, keepdims=True)
    mats.setflags(write=False)
    return MarginalTransitionGrid(regime, means, mats, int(K), seed, cv)


def save_grid(grid: MarginalTransitionGrid, path, fingerprint: str = "") -> None:
    """Binary cache (``.npz``) with an embedded configuration fingerprint."""
    np.savez(path, regime=grid.regime.value, means=grid.means, matrices=grid.matrices,
             mc_samples=grid.mc_samples, seed=-1 if grid.seed is None else grid.seed,
             cv=grid.cv, fingerprint=fingerprint)


def load_grid(path, fingerprint: str | None = None) -> MarginalTransitionGrid | None:
    """Load a cached grid; returns None when the fingerprint does not match."""
    with np.load(path, allow_pickle=False) as z:
        if fingerprint is not None and str(z["fingerprint"]) != fingerprint:
            return None
        seed = int(z["seed"])
        mats = np.array(z["matrices"])
        mats.setflags(write=False)
        return MarginalTransitionGrid(Regime(str(z["regime"])), np.array(z["means"]), mats,
                                      int(z["mc_samples"]), None if seed < 0 else seed,
                                      float(z["cv"]))
