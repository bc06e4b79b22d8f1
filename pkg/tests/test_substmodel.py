import numpy as np
import pytest
from scipy import linalg

from oracles import gamma_category_means, marginal_moments, taylor_expm
from dmphyclus.errors import DomainError, ValidationError
from dmphyclus.substmodel import (CHAIN_PI_ATCG, CHAIN_Q_ATCG, SIM_PI_ATCG, SIM_Q_ATCG, Regime,
                                  build_gtr, build_marginal_grid, discrete_gamma, from_atcg,
                                  grid_means, load_grid, lognormal_params, matrix_exponential,
                                  save_grid, standard_draws)

# frozen from the quadrature oracle (tests/oracles.py::gamma_category_means)
GAMMA3 = [0.1303765545105069, 0.63407882950479, 2.23554461598466]
GAMMA5 = [0.06373334730386448, 0.27636372248416785, 0.6181438504356299,
          1.1948788664506087, 2.8468802133256825]


@pytest.fixture(scope="module")
def sim_rm():
    return build_gtr(*from_atcg(SIM_Q_ATCG, SIM_PI_ATCG))


def test_published_matrices_accepted():
    for q, pi in ((SIM_Q_ATCG, SIM_PI_ATCG), (CHAIN_Q_ATCG, CHAIN_PI_ATCG)):
        rm = build_gtr(*from_atcg(q, pi))
        assert np.abs(rm.q.sum(axis=1)).max() < 1e-12
        assert np.abs(rm.pi @ rm.q).max() < 1e-12
        assert rm.pi.sum() == pytest.approx(1.0, abs=1e-12)


def test_reordering_from_atcg():
    q, pi = from_atcg(SIM_Q_ATCG, SIM_PI_ATCG)
    # canonical A,C,G,T: pi_C = 0.17, rate A->G is the transition 0.6726
    assert pi.tolist() == [0.39, 0.17, 0.22, 0.22]
    assert q[0, 2] == pytest.approx(0.67261536)
    assert q[3, 1] == pytest.approx(0.66140131)


def test_zero_matrix_gives_identity():
    rm = build_gtr(np.zeros((4, 4)), [0.25] * 4)
    np.testing.assert_array_equal(matrix_exponential(rm, 3.0), np.eye(4))


def _negative_offdiag(q):
    q = np.array(q)
    q[0, 1] = -0.1
    q[0, 0] = -q[0, 1:].sum()
    return q


@pytest.mark.parametrize("mutate,match", [
    (lambda q, p: (q + np.diag([0.1, 0, 0, 0]), p), "row sums"),
    (lambda q, p: (_negative_offdiag(q), p), "off-diagonal"),
    (lambda q, p: (q, p * 1.1), "sum to 1"),
    (lambda q, p: (q, np.array([0.5, 0.2, 0.2, 0.1])), "stationarity|reversible"),
    (lambda q, p: (np.zeros((3, 3)), p), "4x4"),
])
def test_invalid_inputs(sim_rm, mutate, match):
    bad_q, bad_pi = mutate(np.array(sim_rm.q), np.array(sim_rm.pi))
    with pytest.raises(ValidationError, match=match):
        build_gtr(bad_q, bad_pi)


def test_exp_zero_is_identity(sim_rm):
    np.testing.assert_allclose(matrix_exponential(sim_rm, 0.0), np.eye(4), atol=1e-15)


def test_two_state_closed_form():
    block = np.array([[-1.0, 1.0], [1.0, -1.0]])
    q = linalg.block_diag(block, block)
    rm = build_gtr(q, [0.25] * 4)
    for t in (0.01, 0.3, 1.0, 4.0):
        p = matrix_exponential(rm, t)
        assert abs(p[0, 0] - (1 + np.exp(-2 * t)) / 2) < 1e-10
        assert abs(p[0, 2]) < 1e-12


def test_taylor_series_oracle(sim_rm):
    np.testing.assert_allclose(matrix_exponential(sim_rm, 0.01), taylor_expm(sim_rm.q * 0.01),
                               atol=1e-10, rtol=0)


def test_rows_stochastic_and_semigroup(sim_rm):
    rng = np.random.default_rng(1)
    for s, t in rng.exponential(0.5, size=(20, 2)):
        ps, pt, pst = (matrix_exponential(sim_rm, x) for x in (s, t, s + t))
        np.testing.assert_allclose(pst.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(ps @ pt, pst, atol=1e-8)


def test_vectorized_times(sim_rm):
    ts = np.array([[0.0, 0.1], [0.2, 1.0]])
    p = matrix_exponential(sim_rm, ts)
    assert p.shape == (2, 2, 4, 4)
    np.testing.assert_allclose(p[1, 0], matrix_exponential(sim_rm, 0.2))


@pytest.mark.parametrize("t", [-0.1, np.inf, np.nan])
def test_exp_domain(sim_rm, t):
    with pytest.raises(DomainError):
        matrix_exponential(sim_rm, t)


def test_discrete_gamma_single_category():
    assert discrete_gamma(1, 0.5).scalers.tolist() == [1.0]


@pytest.mark.parametrize("n_r,frozen", [(3, GAMMA3), (5, GAMMA5)])
def test_discrete_gamma_matches_oracle(n_r, frozen):
    dg = discrete_gamma(n_r, 0.7589)
    np.testing.assert_allclose(dg.scalers, frozen, rtol=1e-8)
    np.testing.assert_allclose(dg.scalers, gamma_category_means(n_r, 0.7589), rtol=1e-8)
    assert np.all(np.diff(dg.scalers) > 0)
    assert abs(dg.scalers.mean() - 1) < 1e-8


def test_discrete_gamma_literal_scale_option():
    dg = discrete_gamma(5, 0.7589, scale=0.7589)
    assert dg.mean == pytest.approx(0.7589 ** 2, rel=1e-10)


@pytest.mark.parametrize("args", [(0, 1.0), (2, 0.0), (2, -1.0), (1.5, 1.0)])
def test_discrete_gamma_domain(args):
    with pytest.raises(DomainError):
        discrete_gamma(*args)


def test_grid_means_endpoints():
    m = grid_means(0.008, 0.08, 20)
    assert len(m) == 20
    assert m[0] == pytest.approx(0.00736) and m[-1] == pytest.approx(0.00864)
    assert np.allclose(np.diff(m), np.diff(m)[0])
    with pytest.raises(DomainError):
        grid_means(0.0, 0.08, 20)


def test_lognormal_parameterization():
    mu, sigma = lognormal_params(0.008, 1.0)
    mean = np.exp(mu + sigma ** 2 / 2)
    sd = mean * np.sqrt(np.exp(sigma ** 2) - 1)
    assert mean == pytest.approx(0.008) and sd == pytest.approx(0.008)


def test_standard_draws_unit_mean():
    for regime in ("within", "between"):
        d = standard_draws(regime, 200_000, seed=4)
        assert abs(d.mean() - 1) < 4 * d.std() / np.sqrt(d.size)


def test_grid_near_zero_is_identity(sim_rm):
    g = build_marginal_grid(sim_rm, discrete_gamma(3, 0.7589), "within", 1e-9, K=1000)
    assert np.abs(g.matrices - np.eye(4)).max() < 1e-6


def test_grid_invariants_and_determinism(sim_rm):
    dg = discrete_gamma(5, 0.7589)
    g1 = build_marginal_grid(sim_rm, dg, "between", 0.008, K=5000, seed=9)
    g2 = build_marginal_grid(sim_rm, dg, "between", 0.008, K=5000, seed=9)
    np.testing.assert_array_equal(g1.matrices, g2.matrices)
    assert g1.matrices.shape == (20, 5, 4, 4)
    assert g1.matrices.min() >= 0
    np.testing.assert_allclose(g1.matrices.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(np.diff(g1.means) > 0)
    with pytest.raises(DomainError):
        build_marginal_grid(sim_rm, dg, "within", -1.0)


@pytest.mark.parametrize("regime,center", [("within", 0.003), ("between", 0.008)])
def test_diagonals_decrease_along_grid(sim_rm, regime, center):
    g = build_marginal_grid(sim_rm, discrete_gamma(5, 0.7589), regime, center, K=20_000)
    diag = np.diagonal(g.matrices, axis1=-2, axis2=-1)       # (G, R, 4)
    assert np.all(np.diff(diag, axis=0) < 0)


def test_within_grid_against_quadrature(sim_rm):
    dg = discrete_gamma(5, 0.7589)
    g = build_marginal_grid(sim_rm, dg, "within", 0.003, grid_size=3, K=100_000, seed=2)
    for gi, mean in enumerate(g.means):
        for r, xi in enumerate(dg.scalers):
            m1, m2 = marginal_moments(sim_rm.q, xi, "within", mean)
            se = np.sqrt(np.clip(m2 - m1 ** 2, 0, None) / g.mc_samples)
            assert np.all(np.abs(g.matrices[gi, r] - m1) <= 3 * se + 1e-13)


def test_exponential_quadrature_matches_closed_form(sim_rm):
    # E[exp(lambda d)] for d ~ Exp(mean m) is 1 / (1 - lambda m); check the oracle itself
    m1, _ = marginal_moments(sim_rm.q, 1.0, "within", 0.05)
    e = 1.0 / (1.0 - sim_rm.eigvals * 0.05)
    want = sim_rm._left @ np.diag(e) @ sim_rm._right
    np.testing.assert_allclose(m1, want, atol=1e-12)


def _per_draw(rm, K, seed, mean=0.008):
    d = standard_draws("between", K, seed) * mean
    return matrix_exponential(rm, d)                     # (K, 4, 4)


def test_doubling_k_shrinks_empirical_se(sim_rm):
    """Per-replicate empirical SE falls by about sqrt(2) when K doubles (20 seeds)."""
    dg = discrete_gamma(1, 1.0)
    ratios = []
    for s in range(20):
        se = {}
        for K in (4000, 8000):
            draws = _per_draw(sim_rm, K, s)
            g = build_marginal_grid(sim_rm, dg, "between", 0.008, grid_size=1, K=K, seed=s)
            # the grid entry is exactly the mean of these K per-draw matrices
            np.testing.assert_allclose(g.matrices[0, 0], draws.mean(axis=0), atol=1e-12)
            se[K] = np.sqrt(np.mean(draws.var(axis=0, ddof=1))) / np.sqrt(K)
        ratios.append(se[4000] / se[8000])
    assert 1.2 <= np.mean(ratios) <= 1.7


def test_more_samples_reduce_error_across_seeds(sim_rm):
    dg = discrete_gamma(1, 1.0)
    truth, _ = marginal_moments(sim_rm.q, 1.0, "between", 0.008)

    def rms(K, offset):
        return np.sqrt(np.mean([np.mean((build_marginal_grid(
            sim_rm, dg, "between", 0.008, grid_size=1, K=K, seed=offset + s).matrices[0, 0]
            - truth) ** 2) for s in range(20)]))
    # eightfold K: expected factor 2.83
    assert rms(1000, 0) / rms(8000, 1000) > 1.5


def test_grid_cache_round_trip(tmp_path, sim_rm):
    g = build_marginal_grid(sim_rm, discrete_gamma(2, 0.7589), "within", 0.003, K=500, seed=1)
    path = tmp_path / "g.npz"
    save_grid(g, path, fingerprint="abc")
    back = load_grid(path, fingerprint="abc")
    np.testing.assert_array_equal(back.matrices, g.matrices)
    assert back.regime is Regime.WITHIN and back.mc_samples == 500
    assert load_grid(path, fingerprint="other") is None
