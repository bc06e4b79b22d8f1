"""Synthetic clustered phylogenies and alignments.

A dataset is produced by drawing the number of clusters, a Dirichlet
concentration, cluster probabilities and sizes; building a random
within-cluster tree per cluster (exponential branch lengths) and a random
between-cluster tree over the clusters (log-normal branch lengths); grafting
each cluster tree onto its between-tree tip; and evolving a root sequence
down the result under GTR with discrete-gamma rate categories.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import gammaln, pdtr

from .errors import ValidationError
from .seqdata import IUPAC, Alignment, parse_fasta, write_fasta
from .substmodel import (SIM_PI_ATCG, SIM_Q_ATCG, build_gtr, discrete_gamma, from_atcg,
                         lognormal_params, matrix_exponential)
from .tree import ClusterAssignment, Topology, _N, _to_topology, write_newick


def _default_q():
    return from_atcg(SIM_Q_ATCG).tolist()


def _default_pi():
    return from_atcg(pi=SIM_PI_ATCG).tolist()


@dataclass(frozen=True)
class SimulationParams:
    n: int = 200
    poisson_mean: float = 50.0
    conc_mean: float = 10.0
    conc_sd: float = 2.0
    within_mean: float = 0.003
    between_mean: float = 0.008
    between_cv: float = 1.0
    n_categories: int = 5
    gamma_shape: float = 0.7589
    gamma_scale: float | None = None
    q: list = field(default_factory=_default_q)
    pi: list = field(default_factory=_default_pi)

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        for name in ("poisson_mean", "conc_mean", "within_mean", "between_mean", "between_cv",
                     "gamma_shape"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.conc_sd < 0:
            raise ValidationError("conc_sd must be non-negative")
        if self.n_categories < 1:
            raise ValidationError("n_categories must be >= 1")


@dataclass
class SimulatedDataset:
    alignment: Alignment
    topology: Topology
    truth: ClusterAssignment
    drawn: dict
    seed: object = None

    def write(self, stem) -> list[Path]:
        stem = Path(stem)
        paths = [stem.with_suffix(".fasta"), stem.with_suffix(".nwk"), stem.with_suffix(".json")]
        write_fasta(self.alignment, paths[0])
        paths[1].write_text(write_newick(self.topology) + "\n")
        payload = {"truth": dict(zip(self.topology.labels, self.truth.labels)),
                   "drawn": self.drawn, "seed": self.seed}
        paths[2].write_text(json.dumps(payload, indent=1) + "\n")
        return paths


def default_root_sequence() -> str:
    """Bundled 918-site stand-in root sequence (see data/README)."""
    text = resources.files("dmphyclus").joinpath("data/root_standin.fasta").read_text()
    a = parse_fasta(text)
    return a.sequence(a.labels[0])


def _make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def _random_nodes(names, rng) -> _N:
    """Uniform rooted binary topology by sequential addition onto random edges."""
    names = list(names)
    if not names:
        raise ValidationError("need at least one tip")
    first = _N(name=names[0])
    nodes = [first]
    parent: dict[int, _N | None] = {id(first): None}
    root = first
    for name in names[1:]:
        x = nodes[int(rng.integers(len(nodes)))]
        tip = _N(name=name)
        u = _N(children=[x, tip])
        p = parent[id(x)]
        if p is None:
            root = u
        else:
            p.children[p.children.index(x)] = u
        parent[id(u)] = p
        parent[id(x)] = u
        parent[id(tip)] = u
        nodes.extend((tip, u))
    return root


def random_topology(tips, seed=None) -> Topology:
    """Uniformly random labeled rooted binary topology (no branch lengths)."""
    if isinstance(tips, int):
        tips = [f"t{i + 1}" for i in range(tips)]
    return _to_topology(_random_nodes(tips, _make_rng(seed)))


def _all_nodes(root: _N):
    out, stack = [], [root]
    while stack:
        n = stack.pop()
        out.append(n)
        stack.extend(n.children)
    return out


def _evolve(t: Topology, rm, dg, root_codes: np.ndarray | None, n_sites: int, rng) -> np.ndarray:
    """Integer states (0..3, A,C,G,T) at every node, shape (n_nodes, n_sites)."""
    cats = rng.integers(dg.n_categories, size=n_sites)
    states = np.zeros((t.n_nodes, n_sites), dtype=np.int64)
    if root_codes is None:
        states[t.root] = rng.choice(4, size=n_sites, p=rm.pi)
    else:
        # ambiguous root characters are drawn from pi restricted to the allowed states
        for s, m in enumerate(root_codes):
            allowed = [b for b in range(4) if m >> b & 1]
            if len(allowed) == 1:
                states[t.root, s] = allowed[0]
            else:
                p = rm.pi[allowed] / rm.pi[allowed].sum()
                states[t.root, s] = allowed[int(rng.choice(len(allowed), p=p))]
    for v in t.preorder:
        if v == t.root:
            continue
        p = int(t.parent[v])
        cum = np.cumsum(matrix_exponential(rm, t.lengths[v] * dg.scalers), axis=-1)
        rows = cum[cats, states[p]]                   # (S, 4)
        u = rng.random(n_sites)
        states[v] = np.minimum((u[:, None] >= rows).sum(axis=1), 3)
    return states


def _truncated_poisson(mean: float, n: int, rng) -> int:
    """Poisson draw conditioned on 1 <= k <= n.

    Redraws while that is cheap; when the window holds almost no mass (say
    n=1 with mean 50) the conditional law is sampled directly instead.
    """
    if pdtr(n, mean) - np.exp(-mean) > 1e-3:
        k = int(rng.poisson(mean))
        while not 1 <= k <= n:
            k = int(rng.poisson(mean))
        return k
    k = np.arange(1, n + 1)
    logp = k * np.log(mean) - gammaln(k + 1)
    p = np.exp(logp - logp.max())
    return int(rng.choice(n, p=p / p.sum())) + 1


def generate_dataset(params: SimulationParams = SimulationParams(), root_sequence=None,
                     seed=None, n_sites: int | None = None,
                     label_format: str = "s{:03d}") -> SimulatedDataset:
    """Draw one clustered dataset.

    ``root_sequence`` is a nucleotide string (IUPAC allowed); ``None`` uses
    the bundled stand-in, and ``False`` draws the root from ``pi`` with
    ``n_sites`` sites.
    """
    rng = _make_rng(seed)
    rm = build_gtr(params.q, params.pi)
    dg = discrete_gamma(params.n_categories, params.gamma_shape, params.gamma_scale)
    if root_sequence is None:
        root_sequence = default_root_sequence()
    if root_sequence is False:
        if not n_sites:
            raise ValidationError("n_sites is required when the root is drawn from pi")
        root_codes = None
    else:
        try:
            root_codes = np.array([IUPAC[ch] for ch in root_sequence.upper()], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"root sequence has a non-IUPAC character {exc}") from None
        n_sites = len(root_codes)
    n = params.n

    k = _truncated_poisson(params.poisson_mean, n, rng)
    conc = float(rng.normal(params.conc_mean, params.conc_sd))
    while conc <= 0:
        conc = float(rng.normal(params.conc_mean, params.conc_sd))
    probs = rng.dirichlet(np.full(k, conc))
    sizes = rng.multinomial(n, probs)
    sizes = sizes[sizes > 0]

    names = [label_format.format(i + 1) for i in range(n)]
    order = rng.permutation(n)
    groups, start = [], 0
    for s in sizes:
        groups.append([names[i] for i in order[start:start + s]])
        start += s

    mu, sigma = lognormal_params(params.between_mean, params.between_cv)
    cluster_roots = []
    for g in groups:
        croot = _random_nodes(g, rng)
        for nd in _all_nodes(croot):
            if nd is not croot:
                nd.length = float(rng.exponential(params.within_mean))
        cluster_roots.append(croot)
    between = _random_nodes([f"#{j}" for j in range(len(groups))], rng)
    for nd in _all_nodes(between):
        if nd is not between:
            nd.length = float(rng.lognormal(mu, sigma))
    # graft: replace super-tip #j by cluster tree j, keeping the stem length
    lookup = {f"#{j}": r for j, r in enumerate(cluster_roots)}
    if not between.children:
        full = lookup[between.name]
    else:
        for nd in _all_nodes(between):
            for i, ch in enumerate(nd.children):
                if not ch.children:
                    sub = lookup[ch.name]
                    sub.length = ch.length
                    nd.children[i] = sub
        full = between
    full.length = None
    if full.children:
        for nd in _all_nodes(full):
            if nd is not full and nd.length is None:
                nd.length = 0.0
        t = _to_topology(full)
    else:
        t = Topology((full.name,), [-1], [-1], [-1], 0, np.zeros(1), None)

    truth_map = {lab: j + 1 for j, g in enumerate(groups) for lab in g}
    truth = ClusterAssignment(tuple(truth_map[lab] for lab in t.labels))

    states = _evolve(t, rm, dg, root_codes, n_sites, rng)
    codes = (1 << states[: t.n_tips]).astype(np.uint8)
    alignment = Alignment(t.labels, codes)
    drawn = {"n_clusters_drawn": k, "n_clusters": len(groups), "concentration": conc,
             "sizes": [len(g) for g in groups], "params": asdict(params)}
    seed_json = seed if isinstance(seed, (int, type(None))) else str(seed)
    return SimulatedDataset(alignment, t, truth, drawn, seed_json)
