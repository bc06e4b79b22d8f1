"""Felsenstein pruning with regime-dependent marginal transition matrices.

Partial likelihoods are ``(n_categories, n_patterns, 4)`` arrays rescaled at
every node so that each (category, pattern) row has maximum 1; the log of
the removed factor is carried in a matching ``(n_categories, n_patterns)``
scaler array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .seqdata import INDICATORS, Alignment
from .substmodel import DiscreteGamma, MarginalTransitionGrid, RateMatrix, Regime
from .tree import ClusterAssignment, Topology, mrcas_of

DEFAULT_MAX_ENTRIES = 2 ** 22


@dataclass(frozen=True)
class RegimeLabeling:
    """Regime of the edge above each node.

    ``cluster[v]`` is the 1-based cluster owning a within edge and 0 for
    between edges; the root entry is -1.
    """

    within: np.ndarray
    cluster: np.ndarray

    def label(self, v: int) -> str | None:
        k = int(self.cluster[v])
        if k < 0:
            return None
        return f"within({k})" if self.within[v] else "between"


def within_edges(t: Topology, mrcas) -> np.ndarray:
    """Boolean per node: is the edge above it inside some cluster's clade."""
    mset = set(mrcas)
    inside = np.zeros(t.n_nodes, dtype=bool)
    within = np.zeros(t.n_nodes, dtype=bool)
    for v in t.preorder:
        p = int(t.parent[v])
        if p >= 0:
            within[v] = inside[p]
            inside[v] = inside[p] or v in mset
        else:
            inside[v] = v in mset
    return within


def label_regimes(t: Topology, c: ClusterAssignment) -> RegimeLabeling:
    """Split edges into within-cluster and between-cluster sets.

    The edge above a cluster's MRCA, including the edge above a singleton
    tip, belongs to the between-cluster phylogeny.
    """
    mrcas = mrcas_of(t, c)
    within = within_edges(t, mrcas)
    cluster = np.zeros(t.n_nodes, dtype=np.int64)
    cluster[t.root] = -1
    owner = {v: k for k, v in enumerate(mrcas, 1)}
    current = np.zeros(t.n_nodes, dtype=np.int64)
    for v in t.preorder:
        p = int(t.parent[v])
        current[v] = owner.get(v, current[p] if p >= 0 else 0)
        if p >= 0 and within[v]:
            cluster[v] = current[p]
    return RegimeLabeling(within, cluster)


def tip_partials(a: Alignment, t: Topology) -> tuple[np.ndarray, np.ndarray]:
    """``(n_tips, P, 4)`` tip vectors ordered as ``t.labels`` plus pattern weights."""
    if set(a.labels) != set(t.labels):
        missing = sorted(set(t.labels) - set(a.labels)) + sorted(set(a.labels) - set(t.labels))
        raise ValidationError(f"alignment and tree labels differ: {', '.join(missing)}")
    pos = {lab: i for i, lab in enumerate(a.labels)}
    pats = a.patterns[[pos[lab] for lab in t.labels]]
    return INDICATORS[pats], a.weights.astype(float)


def _combine(pa, la, sa, pb, lb, sb):
    """Parent partial from two children; ``p*`` are transposed (R, 4, 4)."""
    part = np.matmul(la, pa) * np.matmul(lb, pb)
    mx = part.max(axis=-1)
    if mx.all():
        part /= mx[..., None]
        return part, sa + sb + np.log(mx)
    # incompatible data somewhere: keep zeros, scale -inf
    with np.errstate(divide="ignore", invalid="ignore"):
        part /= mx[..., None]
        scale = sa + sb + np.log(mx)
    part[~np.isfinite(part)] = 0.0
    return part, scale


def _root_loglik(part, scale, pi, weights, n_r):
    with np.errstate(divide="ignore"):
        per_cat = np.log(part @ pi) + scale
    per_site = logsumexp(per_cat, axis=0) - np.log(n_r)
    if np.any(np.isneginf(per_site)):
        return -np.inf
    return float(weights @ per_site)


def log_likelihood(a: Alignment, t: Topology, edge_matrices, pi) -> float:
    """Pruning with explicit per-edge matrices.

    ``edge_matrices`` is ``(n_nodes, n_categories, 4, 4)``: the transition
    matrix on the edge above each node for each rate category. The root row
    is ignored.
    """
    tips, w = tip_partials(a, t)
    mats = np.asarray(edge_matrices, dtype=float)
    if mats.ndim != 4 or mats.shape[0] != t.n_nodes or mats.shape[2:] != (4, 4):
        raise ValidationError("edge_matrices must be (n_nodes, n_categories, 4, 4)")
    n_r = mats.shape[1]
    pi = np.asarray(pi, dtype=float)
    if t.n_tips == 1:
        part = np.broadcast_to(tips[0], (n_r,) + tips[0].shape)
        return _root_loglik(part, 0.0, pi, w, n_r)
    trans = np.swapaxes(mats, -1, -2)
    parts: dict[int, tuple] = {}
    for v in t.postorder:
        if v < t.n_tips:
            parts[v] = (tips[v], 0.0)
            continue
        a_, b_ = int(t.left[v]), int(t.right[v])
        la, sa = parts.pop(a_)
        lb, sb = parts.pop(b_)
        parts[v] = _combine(trans[a_], la, sa, trans[b_], lb, sb)
    part, scale = parts[t.root]
    return _root_loglik(part, scale, pi, w, n_r)


class LikelihoodCache:
    """Partial likelihoods keyed by subtree structure.

    A key is ``(child key, edge code)`` for both children, sorted, where a
    tip's key is its index and an internal node's key is the integer id the
    cache issued when the entry was created. Ids are never reused, so equal
    keys always denote identical computations. ``max_entries`` counts
    (category, pattern) vectors; exceeding it wipes the store.
    """

    def __init__(self, max_entries: int | None = DEFAULT_MAX_ENTRIES):
        self.max_entries = max_entries
        self._store: dict[tuple, tuple] = {}
        self._next_id = 1 << 40
        self.entries = 0
        self.hits = 0
        self.misses = 0
        self.wipes = 0
        self.context = None

    def __len__(self):
        return len(self._store)

    def bind(self, context) -> None:
        if self.context is None:
            self.context = context
        elif self.context != context:
            raise ValidationError("cache already bound to a different model/grid context")

    def get(self, key):
        hit = self._store.get(key)
        if hit is None:
            self.misses += 1
        else:
            self.hits += 1
        return hit

    def put(self, key, part, scale) -> tuple:
        size = part.shape[0] * part.shape[1]
        if self.max_entries is not None and self.entries + size > self.max_entries:
            self.wipe()
        entry = (self._next_id, part, scale)
        self._next_id += 1
        self._store[key] = entry
        self.entries += size
        return entry

    def wipe(self) -> None:
        """Drop every stored entry; hit/miss counters are kept."""
        if self._store:
            self.wipes += 1
        self._store.clear()
        self.entries = 0

    def stats(self) -> dict:
        total = self.hits + self.misses
        return {"hits": self.hits, "misses": self.misses, "wipes": self.wipes,
                "stored": len(self._store), "entries": self.entries,
                "hit_rate": self.hits / total if total else 0.0}


def cache_wipe(cache: LikelihoodCache, policy_trigger=None) -> None:
    cache.wipe()


class MarginalLikelihood:
    """Log-likelihood of an alignment given a topology and clade partition.

    Edges inside a cluster use ``within_grid.matrices[iw]`` and all other
    edges ``between_grid.matrices[ib]``. Pass ``cache=None`` to disable
    memoization.
    """

    def __init__(self, a: Alignment, t: Topology, within_grid: MarginalTransitionGrid,
                 between_grid: MarginalTransitionGrid, rm: RateMatrix, dg: DiscreteGamma,
                 cache: LikelihoodCache | None = None):
        if within_grid.regime is not Regime.WITHIN or between_grid.regime is not Regime.BETWEEN:
            raise ValidationError("grids must be (within, between)")
        for g in (within_grid, between_grid):
            if g.matrices.shape[1:] != (dg.n_categories, 4, 4):
                raise ValidationError("grid rate categories do not match the discrete gamma")
        self.alignment = a
        self.topology = t
        self.within_grid = within_grid
        self.between_grid = between_grid
        self.pi = np.asarray(rm.pi)
        self.n_r = dg.n_categories
        self.tips, self.weights = tip_partials(a, t)
        self._gw = within_grid.size
        # transposed matrices indexed by edge code: within idx, then G_w + between idx
        self._trans = np.ascontiguousarray(np.swapaxes(
            np.concatenate([within_grid.matrices, between_grid.matrices]), -1, -2))
        self.cache = cache
        if cache is not None:
            cache.bind((id(within_grid), id(between_grid), id(a), rm.fingerprint()))

    def with_topology(self, t: Topology) -> "MarginalLikelihood":
        """Same model and cache on another topology over the same tips."""
        if t.labels != self.topology.labels:
            raise ValidationError("topology must keep the tip order")
        new = object.__new__(MarginalLikelihood)
        new.__dict__.update(self.__dict__)
        new.topology = t
        return new

    def edge_codes(self, mrcas, iw: int, ib: int) -> np.ndarray:
        if not (0 <= iw < self._gw and 0 <= ib < self.between_grid.size):
            raise ValidationError(f"grid indices out of range: ({iw}, {ib})")
        within = within_edges(self.topology, mrcas)
        return np.where(within, iw, self._gw + ib)

    def __call__(self, c, iw: int, ib: int) -> float:
        mrcas = mrcas_of(self.topology, c) if isinstance(c, ClusterAssignment) else c
        codes = self.edge_codes(mrcas, iw, ib).tolist()
        t = self.topology
        n = t.n_tips
        if n == 1:
            part = np.broadcast_to(self.tips[0], (self.n_r,) + self.tips[0].shape)
            return _root_loglik(part, 0.0, self.pi, self.weights, self.n_r)
        left, right = t.left, t.right
        trans, tips, cache = self._trans, self.tips, self.cache
        keys = list(range(n)) + [0] * (t.n_nodes - n)
        parts: dict[int, tuple] = {}

        def get(v):
            if v < n:
                return tips[v], 0.0
            return parts.pop(v)

        for v in t.internal_postorder:
            a_, b_ = int(left[v]), int(right[v])
            ka, kb = (keys[a_], codes[a_]), (keys[b_], codes[b_])
            if kb < ka:
                a_, b_, ka, kb = b_, a_, kb, ka
            if cache is None:
                la, sa = get(a_)
                lb, sb = get(b_)
                parts[v] = _combine(trans[ka[1]], la, sa, trans[kb[1]], lb, sb)
                continue
            key = ka + kb
            entry = cache.get(key)
            if entry is None:
                la, sa = get(a_)
                lb, sb = get(b_)
                entry = cache.put(key, *_combine(trans[ka[1]], la, sa, trans[kb[1]], lb, sb))
            else:
                parts.pop(a_, None)
                parts.pop(b_, None)
            keys[v] = entry[0]
            parts[v] = (entry[1], entry[2])
        part, scale = parts[t.root]
        return _root_loglik(part, scale, self.pi, self.weights, self.n_r)


def marginal_log_likelihood(a: Alignment, t: Topology, c: ClusterAssignment,
                            grids: tuple[MarginalTransitionGrid, MarginalTransitionGrid],
                            grid_choice: tuple[int, int], dg: DiscreteGamma, rm: RateMatrix,
                            cache: LikelihoodCache | None = None) -> float:
    """Functional wrapper around :class:`MarginalLikelihood`."""
    model = MarginalLikelihood(a, t, grids[0], grids[1], rm, dg, cache)
    return model(c, *grid_choice)
