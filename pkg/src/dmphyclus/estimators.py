"""Point estimates of the cluster assignment from a trace."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ValidationError
from .mcmc import Trace
from .tree import ClusterAssignment


def map_estimate(trace: Trace) -> ClusterAssignment:
    """Retained sample with the highest log posterior (earliest on ties)."""
    if not len(trace):
        raise ValidationError("empty trace")
    return trace.assignment(int(np.argmax(trace.log_posterior)))


def coclustering_matrix(trace: Trace) -> np.ndarray:
    """Fraction of retained samples in which each pair shares a cluster."""
    if not len(trace):
        raise ValidationError("empty trace")
    labels = trace.label_matrix()
    n = labels.shape[1]
    freq = np.zeros((n, n))
    for row in labels:
        freq += row[:, None] == row[None, :]
    freq /= len(labels)
    np.fill_diagonal(freq, 1.0)
    return freq


def _components(adj: np.ndarray) -> ClusterAssignment:
    _, comp = connected_components(adj, directed=False)
    return ClusterAssignment(tuple(int(x) + 1 for x in comp))


def random_walk_components(adj: np.ndarray) -> ClusterAssignment:
    """Groups of nodes reachable from each other by random walks.

    Uses the support of powers of the walk matrix (with self loops), squared
    until it stops growing. On a graph made of disjoint cliques any
    random-walk community method recovers exactly these groups.
    """
    reach = (np.asarray(adj) > 0) | np.eye(len(adj), dtype=bool)
    while True:
        nxt = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    lab = [0] * len(adj)
    k = 0
    for i in range(len(adj)):
        if lab[i] == 0:
            k += 1
            for j in np.flatnonzero(reach[i]):
                lab[j] = k
    return ClusterAssignment(tuple(lab))


def linkage_estimate(trace: Trace, threshold: float, verify: bool = False) -> ClusterAssignment:
    """Components of the co-clustering graph thresholded at ``threshold``.

    A pair is linked when its co-clustering frequency is strictly greater
    than the threshold. At ``threshold=1`` nothing can exceed it, so pairs
    co-clustered in every sample are linked instead. ``verify=True``
    cross-checks the components against random-walk reachability.
    """
    if not 0 < threshold <= 1:
        raise ValidationError(f"threshold must be in (0, 1], got {threshold!r}")
    freq = coclustering_matrix(trace)
    adj = freq >= 1.0 if threshold == 1 else freq > threshold
    np.fill_diagonal(adj, False)
    out = _components(adj)
    if verify:
        assert random_walk_components(adj) == out
    return out


def always_coclustered(trace: Trace) -> ClusterAssignment:
    """Partition of pairs co-clustered in every retained sample."""
    freq = coclustering_matrix(trace)
    adj = freq >= 1.0
    np.fill_diagonal(adj, False)
    return _components(adj)


def write_assignment_json(c: ClusterAssignment, labels, path) -> None:
    Path(path).write_text(json.dumps(dict(zip(labels, c.labels)), indent=1) + "\n")


def read_assignment_json(path) -> tuple[tuple[str, ...], ClusterAssignment]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object label -> cluster id")
    return tuple(data), ClusterAssignment(tuple(int(v) for v in data.values()))


def write_coclustering_csv(freq: np.ndarray, labels, path) -> None:
    with open(path, "w") as fh:
        fh.write("," + ",".join(labels) + "\n")
        for lab, row in zip(labels, freq):
            fh.write(lab + "," + ",".join(f"{x:.6g}" for x in row) + "\n")
