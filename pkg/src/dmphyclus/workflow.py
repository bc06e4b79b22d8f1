"""Glue between a config mapping and the library: data checks, starting
partition, empirical grid centers, chain inputs, and simulation parameters."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import merge_config
from .errors import ValidationError
from .likelihood import within_edges
from .mcmc import ChainConfig, ChainInputs
from .priors import ClusterPriorParams
from .seqdata import Alignment, read_fasta
from .simulate import SimulationParams
from .substmodel import build_gtr, build_marginal_grid, discrete_gamma
from .tree import (ClusterAssignment, Topology, mrcas_of, remove_tip, root_with_outgroup,
                   select_starting_partition)

logger = logging.getLogger(__name__)

# fallbacks when a regime has no edges under the starting partition
FALLBACK_WITHIN = 0.003
FALLBACK_BETWEEN = 0.008


@dataclass
class PreparedRun:
    inputs: ChainInputs
    chain: ChainConfig
    outgroup: tuple[str, float | None] | None
    centers: tuple[float, float]


def check_labels(a: Alignment, t: Topology) -> None:
    """Alignment and tree must carry exactly the same labels."""
    in_tree, in_aln = set(t.labels), set(a.labels)
    problems = []
    missing = sorted(in_aln - in_tree)
    if missing:
        problems.append(f"tree is missing alignment label(s): {', '.join(missing[:5])}")
    extra = sorted(in_tree - in_aln)
    if extra:
        problems.append(f"alignment is missing tree label(s): {', '.join(extra[:5])}")
    if problems:
        raise ValidationError("; ".join(problems))


def regime_means(t: Topology, c: ClusterAssignment) -> tuple[float, float]:
    """Mean within-cluster and between-cluster edge lengths of ``t`` under ``c``.

    These are the empirical-Bayes grid centers. A regime without edges (all
    singletons, or a single cluster) falls back to the simulation defaults.
    """
    if t.lengths is None:
        raise ValidationError("tree has no branch lengths; set grid centers explicitly")
    w = within_edges(t, mrcas_of(t, c))
    nonroot = np.arange(t.n_nodes) != t.root
    lengths = np.asarray(t.lengths, dtype=float)
    wm = lengths[w & nonroot].mean() if (w & nonroot).any() else FALLBACK_WITHIN
    bm = lengths[~w & nonroot].mean() if (~w & nonroot).any() else FALLBACK_BETWEEN
    # zero-length edges can make a mean vanish; a grid needs a positive center
    return float(wm) if wm > 0 else FALLBACK_WITHIN, float(bm) if bm > 0 else FALLBACK_BETWEEN


def starting_partition(t: Topology, start_cfg: dict) -> ClusterAssignment:
    method = start_cfg["method"]
    if method == "singletons":
        return ClusterAssignment(tuple(range(1, t.n_tips + 1)))
    if method == "single":
        return ClusterAssignment((1,) * t.n_tips)
    return select_starting_partition(t, float(start_cfg["support_min"]),
                                     start_cfg["distance_grid"], start_cfg["linkage"])


def strip_outgroup(a: Alignment, t: Topology, label: str):
    """Root on ``label``, then drop it from both tree and alignment.

    Returns the reduced alignment and tree plus the outgroup's edge length,
    which is needed to graft it back onto a searched topology.
    """
    if label not in t.labels:
        raise ValidationError(f"outgroup {label!r} not found in tree")
    rooted = root_with_outgroup(t, label)
    v = rooted.labels.index(label)
    length = None if rooted.lengths is None else float(rooted.lengths[v])
    reduced = remove_tip(rooted, label)
    keep = [lab for lab in a.labels if lab != label]
    return a.subset(keep), reduced, length


def chain_config(cfg: dict, **overrides) -> ChainConfig:
    ch = dict(cfg["chain"])
    ch.update({k: v for k, v in overrides.items() if v is not None})
    return ChainConfig(iterations=int(ch["iterations"]), burn_in=int(ch["burn_in"]),
                       thinning=int(ch["thinning"]), seed=int(ch["seed"]),
                       alpha_radius=float(ch["alpha_radius"]), wipe_every=ch["wipe_every"],
                       check_every=ch["check_every"], log_every=ch["log_every"])


def prepare_run(alignment: Alignment, topology: Topology, cfg: dict | None = None) -> PreparedRun:
    """Everything ``run_chain`` needs, derived from data and a merged config."""
    cfg = merge_config(cfg) if cfg is None or "chain" not in cfg else cfg
    check_labels(alignment, topology)
    outgroup = None
    og = cfg["tree"]["outgroup"]
    if og:
        alignment, topology, og_len = strip_outgroup(alignment, topology, og)
        outgroup = (og, og_len)
    # keep alignment rows in tip order so tip i is alignment row i
    alignment = alignment.subset(list(topology.labels))

    m = cfg["model"]
    rm = build_gtr(m["rate_matrix"], m["limiting_probabilities"])
    dg = discrete_gamma(int(m["gamma_categories"]), float(m["gamma_shape"]), m["gamma_scale"])

    start = starting_partition(topology, cfg["start"])
    g = cfg["grid"]
    wc, bc = g["within_center"], g["between_center"]
    if wc is None or bc is None:
        ew, eb = regime_means(topology, start)
        wc = ew if wc is None else wc
        bc = eb if bc is None else bc
    logger.info("grid centers: within %.5g, between %.5g", wc, bc)
    common = dict(radius_fraction=float(g["radius"]), grid_size=int(g["size"]),
                  K=int(g["mc_samples"]), seed=g["seed"])
    within = build_marginal_grid(rm, dg, "within", float(wc), **common)
    between = build_marginal_grid(rm, dg, "between", float(bc), cv=float(g["between_cv"]),
                                  **common)

    p = cfg["prior"]
    eta, beta = float(p["alpha_shape"]), float(p["alpha_scale"])
    alpha0 = float(p["alpha_start"]) if p["alpha_start"] is not None else eta * beta
    prior = ClusterPriorParams(lam=float(p["poisson_rate"]), alpha=alpha0, eta=eta, beta=beta)
    inputs = ChainInputs(alignment, topology, rm, dg, within, between, prior, start=start)
    return PreparedRun(inputs, chain_config(cfg), outgroup, (float(wc), float(bc)))


def simulation_params(cfg: dict) -> SimulationParams:
    s = cfg["simulation"]
    return SimulationParams(
        n=int(s["n"]), poisson_mean=float(s["poisson_mean"]), conc_mean=float(s["conc_mean"]),
        conc_sd=float(s["conc_sd"]), within_mean=float(s["within_mean"]),
        between_mean=float(s["between_mean"]), between_cv=float(s["between_cv"]),
        n_categories=int(s["n_categories"]), gamma_shape=float(s["gamma_shape"]),
        gamma_scale=s["gamma_scale"], q=[list(map(float, r)) for r in s["rate_matrix"]],
        pi=[float(x) for x in s["limiting_probabilities"]])


def simulation_root(cfg: dict):
    """Root sequence for simulation: a FASTA's first record, or None for the bundled one."""
    path = cfg["simulation"]["root_fasta"]
    if not path:
        return None
    a = read_fasta(path)
    return a.sequence(a.labels[0])
