"""Metropolis-Hastings sampler over clade partitions on a fixed topology.

Each iteration runs, in order:

1. a split-merge move on the cluster assignment, drawn uniformly from all
   moves the topology allows;
2. a uniform window move on the Dirichlet concentration ``alpha``;
3. a neighbour move on the within-cluster grid index;
4. a neighbour move on the between-cluster grid index.

Random numbers come from four Philox (counter-based) streams spawned from
``SeedSequence(seed)``, one per kernel, so traces are reproducible across
platforms and independent of caching.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .likelihood import DEFAULT_MAX_ENTRIES, LikelihoodCache, MarginalLikelihood
from .priors import (ClusterPriorParams, log_alpha_prior, log_cluster_prior_sizes,
                     log_dm_term, split_log_ratio)
from .seqdata import Alignment
from .substmodel import DiscreteGamma, MarginalTransitionGrid, RateMatrix
from .tree import (ClusterAssignment, Topology, assignment_from_mrcas, mrcas_of,
                   nni_neighbors, project_partition, graft_outgroup)

logger = logging.getLogger(__name__)

KERNELS = ("cluster", "alpha", "within", "between")


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    alpha_radius: float = 0.5
    wipe_every: int | None = None
    cache_max_entries: int | None = DEFAULT_MAX_ENTRIES
    use_cache: bool = True
    check_every: int | None = 1000
    log_every: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValidationError("thinning must be >= 1")
        if not self.alpha_radius > 0:
            raise ValidationError("alpha_radius must be positive")

    @property
    def n_retained(self) -> int:
        return -(-(self.iterations - self.burn_in) // self.thinning)


@dataclass
class ChainInputs:
    alignment: Alignment
    topology: Topology
    rate_matrix: RateMatrix
    gamma: DiscreteGamma
    within_grid: MarginalTransitionGrid
    between_grid: MarginalTransitionGrid
    prior: ClusterPriorParams
    start: ClusterAssignment | None = None
    start_grid: tuple[int, int] | None = None


@dataclass(frozen=True)
class ChainState:
    mrcas: tuple[int, ...]
    alpha: float
    within_grid_idx: int
    between_grid_idx: int
    log_likelihood: float
    log_cluster_prior: float
    log_alpha_prior: float

    @property
    def log_posterior(self) -> float:
        return self.log_likelihood + self.log_cluster_prior + self.log_alpha_prior

    def assignment(self, t: Topology) -> ClusterAssignment:
        return assignment_from_mrcas(t, self.mrcas)


@dataclass
class Trace:
    """Retained samples plus the run report."""

    iterations: list[int] = field(default_factory=list)
    assignments: list[tuple[int, ...]] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    within_idx: list[int] = field(default_factory=list)
    between_idx: list[int] = field(default_factory=list)
    log_posterior: list[float] = field(default_factory=list)
    tip_labels: tuple[str, ...] = ()
    report: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iterations)

    def append(self, it: int, c: ClusterAssignment, state: ChainState) -> None:
        self.iterations.append(it)
        self.assignments.append(c.labels)
        self.alpha.append(state.alpha)
        self.within_idx.append(state.within_grid_idx)
        self.between_idx.append(state.between_grid_idx)
        self.log_posterior.append(state.log_posterior)

    def assignment(self, i: int) -> ClusterAssignment:
        return ClusterAssignment(self.assignments[i])

    def label_matrix(self) -> np.ndarray:
        return np.array(self.assignments, dtype=np.int64).reshape(len(self), -1)

    def same_samples(self, other: "Trace") -> bool:
        return (self.iterations == other.iterations and self.assignments == other.assignments
                and self.alpha == other.alpha and self.within_idx == other.within_idx
                and self.between_idx == other.between_idx
                and self.log_posterior == other.log_posterior)

    def to_csv(self, path) -> None:
        path = Path(path)
        try:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "log_posterior", "alpha", "within_idx",
                            "between_idx", "c"])
                for row in zip(self.iterations, self.log_posterior, self.alpha,
                               self.within_idx, self.between_idx, self.assignments):
                    w.writerow([row[0], repr(row[1]), repr(row[2]), row[3], row[4],
                                json.dumps(list(row[5]))])
        except OSError as exc:
            raise OSError(f"cannot write trace to {path}: {exc}") from exc
        if self.tip_labels:
            path.with_suffix(".labels.json").write_text(json.dumps(list(self.tip_labels)))

    @classmethod
    def from_csv(cls, path) -> "Trace":
        path = Path(path)
        tr = cls()
        try:
            with path.open(newline="") as fh:
                for row in csv.DictReader(fh):
                    tr.iterations.append(int(row["iteration"]))
                    tr.log_posterior.append(float(row["log_posterior"]))
                    tr.alpha.append(float(row["alpha"]))
                    tr.within_idx.append(int(row["within_idx"]))
                    tr.between_idx.append(int(row["between_idx"]))
                    tr.assignments.append(tuple(json.loads(row["c"])))
        except OSError as exc:
            raise OSError(f"cannot read trace {path}: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"malformed trace file {path}: {exc}") from exc
        lab = path.with_suffix(".labels.json")
        if lab.exists():
            tr.tip_labels = tuple(json.loads(lab.read_text()))
        return tr


# --- split-merge moves --------------------------------------------------------

def _moves(t: Topology, mset) -> list[tuple[str, int]]:
    splits = sorted(v for v in mset if v >= t.n_tips)
    merges = set()
    for v in mset:
        p = int(t.parent[v])
        if p >= 0 and t.sibling(v) in mset:
            merges.add(p)
    return [("split", v) for v in splits] + [("merge", p) for p in sorted(merges)]


def _count_moves(t: Topology, mset) -> int:
    n_split = sum(1 for v in mset if v >= t.n_tips)
    n_merge = sum(1 for v in mset
                  if t.parent[v] >= 0 and t.left[t.parent[v]] == v and t.right[t.parent[v]] in mset)
    return n_split + n_merge


def _apply(t: Topology, mrcas, move) -> tuple[int, ...]:
    kind, v = move
    mset = set(mrcas)
    a, b = int(t.left[v]), int(t.right[v])
    if kind == "split":
        mset.discard(v)
        mset.update((a, b))
    else:
        mset.difference_update((a, b))
        mset.add(v)
    return tuple(sorted(mset))


def enumerate_moves(t: Topology, c: ClusterAssignment):
    """All split-merge moves from ``c`` as ``((kind, node), resulting assignment)``."""
    mrcas = mrcas_of(t, c)
    return [(m, assignment_from_mrcas(t, _apply(t, mrcas, m))) for m in _moves(t, set(mrcas))]


def move_prior_log_ratio(t: Topology, mrcas, move, alpha: float, lam: float) -> float:
    """Log prior ratio proposal/current for one split-merge move."""
    kind, v = move
    sizes = t.clade_sizes
    a, b = int(t.left[v]), int(t.right[v])
    k = len(mrcas)
    if kind == "split":
        return split_log_ratio(int(sizes[v]), int(sizes[a]), int(sizes[b]), k, t.n_tips, alpha, lam)
    return -split_log_ratio(int(sizes[v]), int(sizes[a]), int(sizes[b]), k - 1, t.n_tips, alpha, lam)


def _grid_neighbors(i: int, size: int) -> list[int]:
    return [j for j in (i - 1, i + 1) if 0 <= j < size]


def _accept(log_ratio: float, rng) -> bool:
    if math.isnan(log_ratio) or log_ratio == -math.inf:
        return False
    if log_ratio >= 0:
        rng.random()  # keep stream consumption independent of the outcome
        return True
    return math.log(rng.random()) < log_ratio


class Sampler:
    """Stateful MH sampler; :func:`run_chain` drives it."""

    def __init__(self, model: MarginalLikelihood, prior: ClusterPriorParams, state: ChainState,
                 seed=0, alpha_radius: float = 0.5):
        self.model = model
        self.prior = prior
        self.state = state
        self.alpha_radius = alpha_radius
        streams = np.random.SeedSequence(seed).spawn(len(KERNELS))
        self.rngs = {k: np.random.Generator(np.random.Philox(s)) for k, s in zip(KERNELS, streams)}
        self.proposed = dict.fromkeys(KERNELS, 0)
        self.accepted = dict.fromkeys(KERNELS, 0)

    @property
    def topology(self) -> Topology:
        return self.model.topology

    def sizes(self, mrcas) -> np.ndarray:
        return self.topology.clade_sizes[list(mrcas)]

    def initial_state(self, c: ClusterAssignment, alpha: float, iw: int, ib: int) -> ChainState:
        mrcas = tuple(sorted(mrcas_of(self.topology, c)))
        return self.full_state(mrcas, alpha, iw, ib)

    def full_state(self, mrcas, alpha, iw, ib, model: MarginalLikelihood | None = None) -> ChainState:
        model = model or self.model
        sizes = model.topology.clade_sizes[list(mrcas)]
        return ChainState(tuple(mrcas), float(alpha), int(iw), int(ib),
                          model(mrcas, iw, ib),
                          log_cluster_prior_sizes(sizes, alpha, self.prior.lam),
                          log_alpha_prior(alpha, self.prior.eta, self.prior.beta))

    # individual kernels
    def cluster_step(self) -> None:
        t, s, rng = self.topology, self.state, self.rngs["cluster"]
        moves = _moves(t, set(s.mrcas))
        if not moves:
            return
        self.proposed["cluster"] += 1
        move = moves[int(rng.integers(len(moves)))]
        new = _apply(t, s.mrcas, move)
        d_prior = move_prior_log_ratio(t, s.mrcas, move, s.alpha, self.prior.lam)
        ll = self.model(new, s.within_grid_idx, s.between_grid_idx)
        log_r = (d_prior + ll - s.log_likelihood
                 + math.log(len(moves)) - math.log(_count_moves(t, new)))
        if _accept(log_r, rng):
            self.accepted["cluster"] += 1
            self.state = replace(
                s, mrcas=new, log_likelihood=ll,
                log_cluster_prior=log_cluster_prior_sizes(self.sizes(new), s.alpha, self.prior.lam))

    def alpha_step(self) -> None:
        s, rng = self.state, self.rngs["alpha"]
        self.proposed["alpha"] += 1
        new = s.alpha + rng.uniform(-self.alpha_radius, self.alpha_radius)
        if new <= 0:
            rng.random()
            return
        sizes = self.sizes(s.mrcas)
        lap = log_alpha_prior(new, self.prior.eta, self.prior.beta)
        log_r = lap - s.log_alpha_prior + log_dm_term(sizes, new) - log_dm_term(sizes, s.alpha)
        if _accept(log_r, rng):
            self.accepted["alpha"] += 1
            self.state = replace(s, alpha=float(new), log_alpha_prior=lap,
                                 log_cluster_prior=log_cluster_prior_sizes(sizes, new, self.prior.lam))

    def grid_step(self, which: str) -> None:
        s, rng = self.state, self.rngs[which]
        if which == "within":
            cur, size = s.within_grid_idx, self.model.within_grid.size
        else:
            cur, size = s.between_grid_idx, self.model.between_grid.size
        nb = _grid_neighbors(cur, size)
        if not nb:
            return
        self.proposed[which] += 1
        j = nb[int(rng.integers(len(nb)))]
        iw, ib = (j, s.between_grid_idx) if which == "within" else (s.within_grid_idx, j)
        ll = self.model(s.mrcas, iw, ib)
        log_r = ll - s.log_likelihood + math.log(len(nb)) - math.log(len(_grid_neighbors(j, size)))
        if _accept(log_r, rng):
            self.accepted[which] += 1
            self.state = replace(s, within_grid_idx=iw, between_grid_idx=ib, log_likelihood=ll)

    def step(self) -> ChainState:
        self.cluster_step()
        self.alpha_step()
        self.grid_step("within")
        self.grid_step("between")
        return self.state

    def acceptance_rates(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else None)
                for k in KERNELS}

    def recompute_drift(self) -> float:
        """|tracked - recomputed| log posterior, recomputed without the cache."""
        cold = replace_cache(self.model, None)
        s = self.state
        fresh = self.full_state(s.mrcas, s.alpha, s.within_grid_idx, s.between_grid_idx, cold)
        return abs(fresh.log_posterior - s.log_posterior)


def replace_cache(model: MarginalLikelihood, cache) -> MarginalLikelihood:
    new = object.__new__(MarginalLikelihood)
    new.__dict__.update(model.__dict__)
    new.cache = cache
    return new


def _start_state(inputs: ChainInputs, sampler_model: MarginalLikelihood):
    c = inputs.start
    if c is None:
        c = ClusterAssignment(tuple(range(1, inputs.topology.n_tips + 1)))
    if inputs.start_grid is None:
        iw, ib = inputs.within_grid.size // 2, inputs.between_grid.size // 2
    else:
        iw, ib = inputs.start_grid
    return c, iw, ib


def build_model(inputs: ChainInputs, cache: LikelihoodCache | None) -> MarginalLikelihood:
    return MarginalLikelihood(inputs.alignment, inputs.topology, inputs.within_grid,
                              inputs.between_grid, inputs.rate_matrix, inputs.gamma, cache)


def run_chain(inputs: ChainInputs, config: ChainConfig) -> Trace:
    """Run one chain and return the thinned trace (report in ``trace.report``)."""
    cache = LikelihoodCache(config.cache_max_entries) if config.use_cache else None
    model = build_model(inputs, cache)
    t = inputs.topology
    c, iw, ib = _start_state(inputs, model)
    sampler = Sampler(model, inputs.prior, None, config.seed, config.alpha_radius)
    sampler.state = sampler.initial_state(c, inputs.prior.alpha, iw, ib)
    if not math.isfinite(sampler.state.log_posterior):
        raise ValidationError("starting state has zero posterior density")
    trace = Trace(tip_labels=t.labels)
    max_drift = 0.0
    t0 = time.perf_counter()
    for it in range(1, config.iterations + 1):
        state = sampler.step()
        if it > config.burn_in and (it - config.burn_in - 1) % config.thinning == 0:
            trace.append(it, assignment_from_mrcas(t, state.mrcas), state)
        if cache is not None and config.wipe_every and it % config.wipe_every == 0:
            cache.wipe()
        if config.check_every and it % config.check_every == 0:
            drift = sampler.recompute_drift()
            max_drift = max(max_drift, drift)
            if drift > 1e-9 * max(1.0, abs(state.log_posterior)):
                raise RuntimeError(f"log-posterior drift {drift:.3g} at iteration {it}")
        if config.log_every and it % config.log_every == 0:
            rates = sampler.acceptance_rates()
            logger.info("iter %d  logpost %.4f  K=%d  alpha %.3f  acc %s", it,
                        state.log_posterior, len(state.mrcas), state.alpha,
                        {k: None if v is None else round(v, 3) for k, v in rates.items()})
    trace.report = {
        "iterations": config.iterations,
        "retained": len(trace),
        "acceptance": sampler.acceptance_rates(),
        "proposed": dict(sampler.proposed),
        "accepted": dict(sampler.accepted),
        "cache": cache.stats() if cache is not None else None,
        "max_drift": max_drift,
        "runtime_seconds": time.perf_counter() - t0,
        "config": asdict(config),
    }
    return trace


# --- preliminary topology search ------------------------------------------------

@dataclass
class SearchResult:
    topology: Topology
    state: ChainState
    initial_log_posterior: float
    evaluations: int
    moves_accepted: int
    search_topology: Topology | None = None  # topology ``state.mrcas`` refers to (no outgroup)


def preliminary_topology_search(inputs: ChainInputs, budget: int, burst: int = 50,
                                seed=0, alpha_radius: float = 0.5,
                                outgroup: tuple[str, float | None] | None = None) -> SearchResult:
    """Greedy NNI hill-climb on the joint log posterior.

    Every neighbour of the current topology is scored with the current state
    (the assignment projected onto the neighbour's clades). The first
    improving neighbour is taken, followed by ``burst`` MH iterations that
    update (c, alpha, grid indices); the best state seen is kept. Stops at a
    local optimum or after ``budget`` neighbour evaluations. With
    ``outgroup=(label, length)`` the returned topology has that tip grafted
    back as the root's sibling.
    """
    cache = LikelihoodCache()
    model = build_model(inputs, cache)
    c, iw, ib = _start_state(inputs, model)
    sampler = Sampler(model, inputs.prior, None, seed, alpha_radius)
    best = sampler.initial_state(c, inputs.prior.alpha, iw, ib)
    initial = best.log_posterior
    current_t = inputs.topology
    evals = accepted = 0

    def run_burst(smp: Sampler, start: ChainState) -> ChainState:
        smp.state = start
        top = start
        for _ in range(burst):
            s = smp.step()
            if s.log_posterior > top.log_posterior:
                top = s
        return top

    if budget > 0:
        best = run_burst(sampler, best)
    improved = budget > 0
    while improved and evals < budget:
        improved = False
        for nb in nni_neighbors(current_t):
            if evals >= budget:
                break
            evals += 1
            nb_model = model.with_topology(nb)
            proj = project_partition(nb, assignment_from_mrcas(current_t, best.mrcas))
            mrcas = tuple(sorted(mrcas_of(nb, proj)))
            cand = sampler.full_state(mrcas, best.alpha, best.within_grid_idx,
                                      best.between_grid_idx, nb_model)
            if cand.log_posterior > best.log_posterior:
                current_t, model = nb, nb_model
                sampler.model = nb_model
                best = run_burst(sampler, cand)
                accepted += 1
                improved = True
                break
    out_t = current_t
    if outgroup is not None:
        out_t = graft_outgroup(current_t, outgroup[0], outgroup[1])
    return SearchResult(out_t, best, initial, evals, accepted, current_t)
