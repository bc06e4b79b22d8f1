"""Bayesian transmission-cluster detection on a fixed phylogeny.

Clusters are clades whose internal branches follow a short "within" length
regime; the rest of the tree follows a longer "between" regime. A
Dirichlet-multinomial prior on the partition and a Metropolis-Hastings
sampler over split-merge moves give a posterior over clade partitions.
"""
__version__ = "0.1.0"

from .errors import AlignmentShapeError, DomainError, ParseError, ValidationError
from .estimators import coclustering_matrix, linkage_estimate, map_estimate
from .evaluation import adjusted_rand_index, summarize_recovery
from .likelihood import LikelihoodCache, MarginalLikelihood, log_likelihood
from .mcmc import ChainConfig, ChainInputs, Trace, run_chain
from .priors import ClusterPriorParams, log_cluster_prior
from .seqdata import Alignment, parse_fasta, read_fasta
from .simulate import SimulationParams, generate_dataset
from .substmodel import build_gtr, build_marginal_grid, discrete_gamma, matrix_exponential
from .tree import ClusterAssignment, Topology, parse_newick, read_newick

__all__ = [
    "Alignment", "AlignmentShapeError", "ChainConfig", "ChainInputs", "ClusterAssignment",
    "ClusterPriorParams", "DomainError", "LikelihoodCache", "MarginalLikelihood", "ParseError",
    "SimulationParams", "Topology", "Trace", "ValidationError", "adjusted_rand_index",
    "build_gtr", "build_marginal_grid", "coclustering_matrix", "discrete_gamma",
    "generate_dataset", "linkage_estimate", "log_cluster_prior", "log_likelihood",
    "map_estimate", "matrix_exponential", "parse_fasta", "parse_newick", "read_fasta",
    "read_newick", "run_chain", "summarize_recovery",
]
