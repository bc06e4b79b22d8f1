import itertools

import numpy as np
import pytest
from scipy import integrate
from scipy.special import betaln, gammaln

from oracles import dm_multinomial_poisson
from dmphyclus.errors import ValidationError
from dmphyclus.priors import (BranchLengthPriorConfig, ClusterPriorParams, alpha_log_ratio,
                              log_alpha_prior, log_cluster_prior, log_cluster_prior_sizes,
                              split_log_ratio)
from dmphyclus.tree import (ClusterAssignment, assignment_from_mrcas, enumerate_clade_partitions,
                            parse_newick)


def _log_multivariate_beta(x):
    x = np.asarray(x, float)
    return gammaln(x).sum() - gammaln(x.sum())


def test_cherry_ratio_by_hand():
    t = parse_newick("(A:1,B:1);")
    alpha, lam = 1.7, 3.0
    p = ClusterPriorParams(lam=lam, alpha=alpha)
    one = (_log_multivariate_beta([2 + alpha]) - _log_multivariate_beta([alpha])
           + 0.0 + (np.log(lam) - lam))
    two = (_log_multivariate_beta([1 + alpha, 1 + alpha]) - _log_multivariate_beta([alpha, alpha])
           + np.log(2) + (2 * np.log(lam) - lam - np.log(2)))
    got = log_cluster_prior(ClusterAssignment((1, 1)), t, p) - \
        log_cluster_prior(ClusterAssignment((1, 2)), t, p)
    assert got == pytest.approx(one - two, rel=1e-12)
    # two-argument Beta gives the same thing for the pair
    assert _log_multivariate_beta([1 + alpha, 1 + alpha]) == pytest.approx(betaln(1 + alpha, 1 + alpha))


def test_non_clade_is_minus_infinity(cherry_plus_one):
    ia, ic = cherry_plus_one.labels.index("A"), cherry_plus_one.labels.index("C")
    labels = [2, 2, 2]
    labels[ia] = labels[ic] = 1
    assert log_cluster_prior(ClusterAssignment(tuple(labels)), cherry_plus_one,
                             ClusterPriorParams(lam=2.0)) == -np.inf


def test_matches_term_by_term_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        sizes = rng.integers(1, 30, rng.integers(1, 8))
        alpha, lam = rng.uniform(0.1, 20), rng.uniform(0.5, 60)
        assert log_cluster_prior_sizes(sizes, alpha, lam) == pytest.approx(
            dm_multinomial_poisson(sizes, alpha, lam), rel=1e-12, abs=1e-9)


def test_poisson_difference_increases_with_lambda():
    sizes_k, sizes_k1 = [4, 4], [4, 2, 2]
    diffs = [log_cluster_prior_sizes(sizes_k1, 2.0, lam) - log_cluster_prior_sizes(sizes_k, 2.0, lam)
             for lam in np.geomspace(0.5, 500, 30)]
    assert np.all(np.diff(diffs) > 0)


def test_relabel_and_equal_size_swap_invariance(five_tip):
    p = ClusterPriorParams(lam=3.0, alpha=0.8)
    base = [1, 1, 2, 3, 3]
    ref = log_cluster_prior(ClusterAssignment(tuple(base)), five_tip, p)
    for perm in itertools.permutations([1, 2, 3]):
        relab = tuple(perm[x - 1] for x in base)
        assert log_cluster_prior(ClusterAssignment(relab), five_tip, p) == ref
    assert log_cluster_prior_sizes([2, 1, 2], 0.8, 3.0) == pytest.approx(
        log_cluster_prior_sizes([2, 2, 1], 0.8, 3.0), rel=1e-15)


def test_split_ratio_matches_full_difference():
    rng = np.random.default_rng(1)
    for _ in range(100):
        sizes = list(rng.integers(1, 20, rng.integers(1, 6)))
        j = int(rng.integers(len(sizes)))
        if sizes[j] < 2:
            continue
        na = int(rng.integers(1, sizes[j]))
        after = sizes[:j] + [na, sizes[j] - na] + sizes[j + 1:]
        alpha, lam = rng.uniform(0.2, 10), rng.uniform(1, 50)
        want = log_cluster_prior_sizes(after, alpha, lam) - log_cluster_prior_sizes(sizes, alpha, lam)
        got = split_log_ratio(sizes[j], na, sizes[j] - na, len(sizes), sum(sizes), alpha, lam)
        assert got == pytest.approx(want, abs=1e-9)


def test_enumerated_ratios_survive_normalization(five_tip):
    p = ClusterPriorParams(lam=2.5, alpha=1.3)
    parts = [assignment_from_mrcas(five_tip, m) for m in enumerate_clade_partitions(five_tip)]
    logs = np.array([log_cluster_prior(c, five_tip, p) for c in parts])
    probs = np.exp(logs - np.logaddexp.reduce(logs))
    assert probs.sum() == pytest.approx(1.0)
    for i, j in itertools.combinations(range(len(parts)), 2):
        assert np.log(probs[i] / probs[j]) == pytest.approx(logs[i] - logs[j], abs=1e-12)


def test_alpha_ratio_consistent():
    sizes = [3, 5, 1]
    got = alpha_log_ratio(sizes, 2.0, 3.5)
    want = log_cluster_prior_sizes(sizes, 3.5, 4.0) - log_cluster_prior_sizes(sizes, 2.0, 4.0)
    assert got == pytest.approx(want, abs=1e-12)


def test_large_sizes_do_not_overflow():
    v = log_cluster_prior_sizes([50_000, 30_000, 20_000], 10.0, 50.0)
    assert np.isfinite(v)


def test_alpha_prior_mode_and_domain():
    eta, beta = 5.0, 0.5
    mode = (eta - 1) * beta
    at = log_alpha_prior(mode, eta, beta)
    assert at >= log_alpha_prior(mode - 0.1, eta, beta)
    assert at >= log_alpha_prior(mode + 0.1, eta, beta)
    assert log_alpha_prior(0.0, eta, beta) == -np.inf
    assert log_alpha_prior(-1.0, eta, beta) == -np.inf


def test_alpha_prior_main_run_setting():
    v = log_alpha_prior(100.0, 1000.0, 0.1)
    assert np.isfinite(v)
    assert v > log_alpha_prior(80.0, 1000.0, 0.1)


@pytest.mark.parametrize("eta,beta", [(1.0, 1.0), (100.0, 0.1), (1000.0, 0.1), (0.5, 3.0)])
def test_alpha_prior_integrates_to_one(eta, beta):
    mean, sd = eta * beta, np.sqrt(eta) * beta
    hi = mean + 40 * sd
    pts = [mean] if eta > 1 else None
    total, _ = integrate.quad(lambda a: np.exp(log_alpha_prior(a, eta, beta)), 0, hi,
                              points=pts, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_parameter_validation():
    with pytest.raises(ValidationError):
        ClusterPriorParams(lam=0.0)
    with pytest.raises(ValidationError):
        ClusterPriorParams(lam=1.0, alpha=-2.0)
    with pytest.raises(ValidationError):
        BranchLengthPriorConfig((0.1, 0.05), (0.2,))
    cfg = BranchLengthPriorConfig((0.001, 0.002), (0.008,))
    assert cfg.between_cv == 1.0
