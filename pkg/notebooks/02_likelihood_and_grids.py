# %% [markdown]
# # Pruning, marginal grids and the cache
#
# Looks at the pieces under the sampler: the GTR model with discrete-gamma
# rates, the Monte Carlo marginal transition grids, and how the partial
# likelihood cache behaves across a sequence of cluster changes.

# %%
import numpy as np

from dmphyclus.likelihood import LikelihoodCache, MarginalLikelihood, label_regimes
from dmphyclus.simulate import SimulationParams, generate_dataset
from dmphyclus.substmodel import build_gtr, build_marginal_grid, discrete_gamma, matrix_exponential
from dmphyclus.tree import ClusterAssignment

# %%
p = SimulationParams()
rm = build_gtr(p.q, p.pi)
dg = discrete_gamma(p.n_categories, p.gamma_shape)
print("rate scalers:", np.round(dg.scalers, 4), "mean", dg.scalers.mean())
print("stationary check:", np.allclose(rm.pi @ matrix_exponential(rm, 0.5), rm.pi))

# %% [markdown]
# A marginal grid averages exp(Q d) over a log-normal branch length at each
# of several mean lengths. The diagonal shrinks as the mean grows, and the
# rows always sum to one.

# %%
grid = build_marginal_grid(rm, dg, "between", 0.008, radius_fraction=0.5, grid_size=5,
                           K=20_000, seed=1)
print("grid means:", np.round(grid.means, 5))
diag = np.array([np.trace(m[0]) / 4 for m in grid.matrices])
print("mean diagonal, slowest category:", np.round(diag, 5))
print("row sums within 1e-12:", np.allclose(grid.matrices.sum(-1), 1, atol=1e-12))

# %%
ds = generate_dataset(SimulationParams(n=30, poisson_mean=4.0), n_sites=600, seed=2)
t = ds.topology
within = build_marginal_grid(rm, dg, "within", 0.003, radius_fraction=0.5, grid_size=5,
                             K=20_000, seed=1)
reg = label_regimes(t, ds.truth)
print("within edges:", int(reg.within.sum()), "of", len(reg.within))

# %% [markdown]
# Same likelihood with and without the cache. Then a run of random clade
# partitions to see how many subtree partials are reused.

# %%
cached = MarginalLikelihood(ds.alignment, t, within, grid, rm, dg,
                            cache=LikelihoodCache())
plain = MarginalLikelihood(ds.alignment, t, within, grid, rm, dg, cache=None)
print(cached(ds.truth, 2, 2), plain(ds.truth, 2, 2))

# %%
rng = np.random.default_rng(0)
index = {lab: i for i, lab in enumerate(t.labels)}
clades = sorted(sorted(index[x] for x in c) for c in t.clades() if len(c) > 1)
for _ in range(200):
    groups = np.arange(t.n_tips)
    pick = clades[int(rng.integers(len(clades)))]
    groups[pick] = -1
    cached(ClusterAssignment(tuple(groups)), int(rng.integers(5)),
                          int(rng.integers(5)))
print(cached.cache.stats())
