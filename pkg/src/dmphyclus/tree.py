"""Rooted binary topologies and clade partitions.

Nodes are integers: tips are ``0..n-1`` (in the order of ``labels``) and
internal nodes follow. Per-node arrays describe the edge *above* each node
(``lengths``, ``supports``); the root's entries are unused. Clades are
represented as integer bitmasks over tip indices.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True, eq=False)
class Topology:
    labels: tuple[str, ...]
    left: np.ndarray
    right: np.ndarray
    parent: np.ndarray
    root: int
    lengths: np.ndarray | None = None
    supports: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        if n < 1:
            raise ValidationError("a topology needs at least one tip")
        if len(set(self.labels)) != n:
            raise ValidationError("tip labels must be unique")
        for name in ("left", "right", "parent"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.left) != 2 * n - 1:
            raise ValidationError(f"expected {2 * n - 1} nodes for {n} tips, got {len(self.left)}")
        for name in ("lengths", "supports"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=float).copy()
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.lengths is not None:
            nonroot = np.arange(len(self.left)) != self.root
            if np.any(self.lengths[nonroot] < 0):
                raise ValidationError("branch lengths must be non-negative")
        if np.any(self.left[:n] != -1):
            raise ValidationError("tips must be nodes 0..n-1")
        object.__setattr__(self, "labels", tuple(self.labels))

    # --- structure -------------------------------------------------------
    @property
    def n_tips(self) -> int:
        return len(self.labels)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_tip(self, v: int) -> bool:
        return v < self.n_tips

    def children(self, v: int) -> tuple[int, int] | tuple[()]:
        if v < self.n_tips:
            return ()
        return int(self.left[v]), int(self.right[v])

    def sibling(self, v: int) -> int:
        p = int(self.parent[v])
        if p < 0:
            raise ValidationError("the root has no sibling")
        return int(self.right[p]) if self.left[p] == v else int(self.left[p])

    @cached_property
    def postorder(self) -> tuple[int, ...]:
        out, stack = [], [(self.root, False)]
        while stack:
            v, done = stack.pop()
            if done or v < self.n_tips:
                out.append(v)
            else:
                stack.append((v, True))
                stack.append((int(self.right[v]), False))
                stack.append((int(self.left[v]), False))
        return tuple(out)

    @cached_property
    def preorder(self) -> tuple[int, ...]:
        out, stack = [], [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            if v >= self.n_tips:
                stack.append(int(self.right[v]))
                stack.append(int(self.left[v]))
        return tuple(out)

    @cached_property
    def internal_postorder(self) -> tuple[int, ...]:
        return tuple(v for v in self.postorder if v >= self.n_tips)

    @cached_property
    def clade_masks(self) -> tuple[int, ...]:
        masks = [0] * self.n_nodes
        for v in self.postorder:
            if v < self.n_tips:
                masks[v] = 1 << v
            else:
                masks[v] = masks[self.left[v]] | masks[self.right[v]]
        return tuple(masks)

    @cached_property
    def mask_to_node(self) -> dict[int, int]:
        return {m: v for v, m in enumerate(self.clade_masks)}

    @cached_property
    def clade_sizes(self) -> np.ndarray:
        return np.array([bin(m).count("1") for m in self.clade_masks], dtype=np.int64)

    def tips_below(self, v: int) -> list[int]:
        m = self.clade_masks[v]
        return [i for i in range(self.n_tips) if m >> i & 1]

    def clade_labels(self, v: int) -> frozenset[str]:
        return frozenset(self.labels[i] for i in self.tips_below(v))

    def clades(self) -> set[frozenset[str]]:
        """Label sets of all internal-node clades (the rooted topology)."""
        return {self.clade_labels(v) for v in range(self.n_tips, self.n_nodes)}

    def same_topology(self, other: "Topology") -> bool:
        return set(self.labels) == set(other.labels) and self.clades() == other.clades()

    def with_attributes(self, lengths=None, supports=None) -> "Topology":
        return Topology(self.labels, self.left, self.right, self.parent, self.root,
                        self.lengths if lengths is None else lengths,
                        self.supports if supports is None else supports)

    def __repr__(self):
        return f"Topology({write_newick(self)!r})"


# --- generic rooted tree used by parsing and rerooting ---------------------

@dataclass(eq=False)
class _N:
    name: str | None = None
    length: float | None = None
    support: float | None = None
    children: list = field(default_factory=list)


_TOKEN = re.compile(r"\s*('(?:[^']|'')*'|[(),:;]|[^(),:;\s]+)")


def _tokenize(text: str):
    pos = 0
    text = re.sub(r"\[[^\]]*\]", "", text)  # drop comments
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip():
                raise ParseError(f"unexpected character at offset {pos}")
            break
        pos = m.end()
        yield m.group(1)


def _parse_nodes(text: str) -> _N:
    tokens = list(_tokenize(text))
    if not tokens or tokens[-1] != ";":
        raise ParseError("Newick string must end with ';'")
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def node():
        nonlocal pos
        n = _N()
        if peek() == "(":
            pos += 1
            n.children.append(node())
            while peek() == ",":
                pos += 1
                n.children.append(node())
            if peek() != ")":
                raise ParseError(f"expected ')' at token {pos}, found {peek()!r}")
            pos += 1
        tok = peek()
        if tok is not None and tok not in "(),:;":
            n.name = tok[1:-1].replace("''", "'") if tok.startswith("'") else tok
            pos += 1
        if peek() == ":":
            pos += 1
            try:
                n.length = float(tokens[pos])
            except (IndexError, ValueError):
                raise ParseError(f"bad branch length at token {pos}") from None
            pos += 1
        return n

    root = node()
    if peek() != ";" or pos != len(tokens) - 1:
        raise ParseError(f"trailing tokens after tree at token {pos}")
    return root


def _postorder_nodes(root: _N):
    out, stack = [], [(root, False)]
    while stack:
        n, done = stack.pop()
        if done or not n.children:
            out.append(n)
        else:
            stack.append((n, True))
            stack.extend((c, False) for c in reversed(n.children))
    return out


def _assign_supports(root: _N):
    internals = [n for n in _postorder_nodes(root) if n.children and n is not root]
    vals = {}
    for n in internals:
        if n.name is not None:
            try:
                vals[id(n)] = float(n.name)
            except ValueError:
                pass
    if vals and max(vals.values()) > 1.0:
        vals = {k: v / 100.0 for k, v in vals.items()}
    for n in internals:
        if id(n) in vals:
            n.support = vals[id(n)]
        n.name = None
    if root.children:
        root.name = None


def _suppress_unary(root: _N) -> _N:
    for n in _postorder_nodes(root):
        new = []
        for c in n.children:
            while len(c.children) == 1:
                only = c.children[0]
                if c.length is not None or only.length is not None:
                    only.length = (c.length or 0.0) + (only.length or 0.0)
                if only.support is None:
                    only.support = c.support
                c = only
            new.append(c)
        n.children = new
    while len(root.children) == 1:
        root = root.children[0]
        root.length = None
    return root


def _binarize(root: _N, resolve: bool, allow_root_multifurcation: bool = False):
    for n in _postorder_nodes(root):
        if len(n.children) > 2:
            if n is root and allow_root_multifurcation:
                continue
            if not resolve:
                raise ParseError(f"polytomy with {len(n.children)} children; "
                                 "pass resolve_polytomies=True to resolve at zero length")
            kids = n.children
            while len(kids) > 2:
                joined = _N(length=0.0 if kids[0].length is not None else None,
                            children=[kids[0], kids[1]])
                kids = [joined] + kids[2:]
            n.children = kids


def _to_topology(root: _N) -> Topology:
    nodes = _postorder_nodes(root)
    tips = [n for n in nodes if not n.children]
    labels = []
    for t in tips:
        if t.name is None:
            raise ParseError("unlabeled tip")
        labels.append(t.name)
    if len(set(labels)) != len(labels):
        dup = sorted({x for x in labels if labels.count(x) > 1})
        raise ParseError(f"duplicate tip labels: {', '.join(dup)}")
    n = len(tips)
    index = {id(t): i for i, t in enumerate(tips)}
    nxt = n
    for nd in nodes:
        if nd.children:
            index[id(nd)] = nxt
            nxt += 1
    size = 2 * n - 1
    left = np.full(size, -1)
    right = np.full(size, -1)
    parent = np.full(size, -1)
    lengths = np.full(size, np.nan)
    supports = np.full(size, np.nan)
    any_len = any_sup = False
    for nd in nodes:
        i = index[id(nd)]
        if nd.children:
            if len(nd.children) != 2:
                raise ParseError("tree is not binary")
            a, b = (index[id(c)] for c in nd.children)
            left[i], right[i] = a, b
            parent[a] = parent[b] = i
        if nd.length is not None and nd is not root:
            lengths[i] = nd.length
            any_len = True
        if nd.support is not None:
            supports[i] = nd.support
            any_sup = True
    if any_len:
        lengths[np.isnan(lengths)] = 0.0
        lengths[index[id(root)]] = 0.0
    return Topology(tuple(labels), left, right, parent, index[id(root)],
                    lengths if any_len else None, supports if any_sup else None)


def _from_topology(t: Topology) -> _N:
    nodes = [None] * t.n_nodes
    for v in t.postorder:
        nd = _N()
        if v < t.n_tips:
            nd.name = t.labels[v]
        else:
            nd.children = [nodes[t.left[v]], nodes[t.right[v]]]
        if v != t.root:
            if t.lengths is not None:
                nd.length = float(t.lengths[v])
            if t.supports is not None and v >= t.n_tips and not math.isnan(t.supports[v]):
                nd.support = float(t.supports[v])
        nodes[v] = nd
    return nodes[t.root]


def _reroot(root: _N, outgroup: str) -> _N:
    """Place the root on the edge above tip ``outgroup``.

    Edge attributes (length, support) travel with the undirected edge; the
    outgroup edge is split in half. A degree-2 former root is suppressed.
    """
    parent_of = {}
    target = None
    for n in _postorder_nodes(root):
        for c in n.children:
            parent_of[id(c)] = n
        if not n.children and n.name == outgroup:
            target = n
    if target is None:
        raise ValidationError(f"outgroup {outgroup!r} not found in tree")
    if target is root:
        return root
    # neighbours with the attributes of the connecting edge
    nbrs: dict[int, list] = {}
    objs = {}
    for n in _postorder_nodes(root):
        objs[id(n)] = n
        nbrs.setdefault(id(n), [])
        for c in n.children:
            nbrs[id(n)].append((c, c.length, c.support))
            nbrs.setdefault(id(c), []).append((n, c.length, c.support))
    q = parent_of[id(target)]
    half = None if target.length is None else target.length / 2.0

    def orient(n: _N, came_from: _N, length, support) -> _N:
        new = _N(name=n.name, length=length, support=support)
        stack = [(n, came_from, new)]
        while stack:
            old, prev, cur = stack.pop()
            for nb, ln, sp in nbrs[id(old)]:
                if nb is prev:
                    continue
                child = _N(name=nb.name, length=ln, support=sp)
                cur.children.append(child)
                stack.append((nb, old, child))
        return new

    out = _N(name=target.name, length=half)
    rest = orient(q, target, half, target.support)
    new_root = _N(children=[out, rest])
    return _suppress_unary(new_root)


# --- public API --------------------------------------------------------------

def parse_newick(text: str, resolve_polytomies: bool = False,
                 outgroup: str | None = None) -> Topology:
    """Parse a Newick string into a binary :class:`Topology`.

    Numeric internal-node labels become supports (values above 1 are read as
    percentages). With ``outgroup`` the tree is rerooted on that tip's edge
    first, which also handles unrooted (trifurcating) input.
    """
    root = _parse_nodes(text.strip())
    _assign_supports(root)
    root = _suppress_unary(root)
    if outgroup is not None:
        root = _reroot(root, outgroup)
    _binarize(root, resolve_polytomies)
    return _to_topology(root)


def read_newick(path, **kw) -> Topology:
    return parse_newick(Path(path).read_text(), **kw)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_newick(t: Topology) -> str:
    parts = {}
    for v in t.postorder:
        if v < t.n_tips:
            lab = t.labels[v]
            s = f"'{lab}'" if re.search(r"[\s(),:;'\[\]]", lab) else lab
        else:
            s = f"({parts[t.left[v]]},{parts[t.right[v]]})"
            if t.supports is not None and v != t.root and not math.isnan(t.supports[v]):
                s += _fmt(t.supports[v])
        if v != t.root and t.lengths is not None:
            s += ":" + _fmt(t.lengths[v])
        parts[v] = s
    return parts[t.root] + ";"


def write_newick_file(t: Topology, path) -> None:
    Path(path).write_text(write_newick(t) + "\n")


def root_with_outgroup(t: Topology, outgroup_label: str) -> Topology:
    """Reroot so that ``outgroup_label`` is a direct child of the root."""
    if outgroup_label not in t.labels:
        raise ValidationError(f"outgroup {outgroup_label!r} not found in tree")
    v = t.labels.index(outgroup_label)
    if t.parent[v] == t.root:
        return t
    root = _reroot(_from_topology(t), outgroup_label)
    _binarize(root, resolve=False)
    return _to_topology(root)


def remove_tip(t: Topology, label: str) -> Topology:
    """Drop one tip and suppress its parent node."""
    if label not in t.labels:
        raise ValidationError(f"tip {label!r} not found in tree")
    if t.n_tips < 2:
        raise ValidationError("cannot remove the only tip")
    root = _from_topology(t)
    for n in _postorder_nodes(root):
        n.children = [c for c in n.children if not (not c.children and c.name == label)]
    return _to_topology(_suppress_unary(root))


def graft_outgroup(t: Topology, label: str, length: float | None = None) -> Topology:
    """Add tip ``label`` as the root's sibling (inverse of removing an outgroup)."""
    root = _from_topology(t)
    if t.lengths is not None:
        root.length = 0.0
    og = _N(name=label, length=length if t.lengths is not None else None)
    return _to_topology(_N(children=[og, root]))


def patristic_distances(t: Topology) -> np.ndarray:
    """Tip-to-tip path-length matrix."""
    if t.lengths is None:
        raise ValidationError("patristic distances need branch lengths")
    n = t.n_tips
    d = np.zeros((n, n))
    below: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for v in t.postorder:
        if v < n:
            below[v] = (np.array([v]), np.zeros(1))
            continue
        a, b = int(t.left[v]), int(t.right[v])
        ta, da = below.pop(a)
        tb, db = below.pop(b)
        da = da + t.lengths[a]
        db = db + t.lengths[b]
        block = da[:, None] + db[None, :]
        d[np.ix_(ta, tb)] = block
        d[np.ix_(tb, ta)] = block.T
        below[v] = (np.concatenate([ta, tb]), np.concatenate([da, db]))
    return d


def clade_diameters(t: Topology) -> np.ndarray:
    """Maximum pairwise patristic distance within each node's clade."""
    if t.lengths is None:
        raise ValidationError("clade diameters need branch lengths")
    height = np.zeros(t.n_nodes)
    diam = np.zeros(t.n_nodes)
    for v in t.internal_postorder:
        a, b = t.left[v], t.right[v]
        ha, hb = height[a] + t.lengths[a], height[b] + t.lengths[b]
        height[v] = max(ha, hb)
        diam[v] = max(diam[a], diam[b], ha + hb)
    return diam


# --- clade partitions --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Cluster index per tip, numbered 1..K in order of first appearance."""

    labels: tuple[int, ...]

    def __post_init__(self):
        raw = [int(x) for x in self.labels]
        remap: dict[int, int] = {}
        canon = tuple(remap.setdefault(x, len(remap) + 1) for x in raw)
        object.__setattr__(self, "labels", canon)

    @classmethod
    def from_groups(cls, groups, n: int) -> "ClusterAssignment":
        lab = [0] * n
        for k, g in enumerate(groups, 1):
            for i in g:
                lab[i] = k
        if 0 in lab:
            raise ValidationError("groups do not cover every tip")
        return cls(tuple(lab))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return max(self.labels) if self.labels else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters + 1)[1:]

    def groups(self) -> list[list[int]]:
        out = [[] for _ in range(self.n_clusters)]
        for i, k in enumerate(self.labels):
            out[k - 1].append(i)
        return out

    def as_array(self) -> np.ndarray:
        return np.array(self.labels, dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, ClusterAssignment):
            return NotImplemented
        return self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)


def mrcas_of(t: Topology, c: ClusterAssignment) -> tuple[int, ...]:
    """MRCA node of each cluster; raises if some cluster is not a clade."""
    if c.n != t.n_tips:
        raise ValidationError(f"assignment has {c.n} entries for {t.n_tips} tips")
    masks = [0] * c.n_clusters
    for i, k in enumerate(c.labels):
        masks[k - 1] |= 1 << i
    out = []
    for k, m in enumerate(masks, 1):
        v = t.mask_to_node.get(m)
        if v is None:
            raise ValidationError(f"cluster {k} is not a clade of the topology")
        out.append(v)
    return tuple(out)


def is_clade_partition(t: Topology, c: ClusterAssignment) -> bool:
    try:
        mrcas_of(t, c)
    except ValidationError:
        return False
    return True


def assignment_from_mrcas(t: Topology, mrcas) -> ClusterAssignment:
    lab = [0] * t.n_tips
    for k, v in enumerate(sorted(mrcas, key=lambda v: t.clade_masks[v] & -t.clade_masks[v]), 1):
        for i in t.tips_below(v):
            lab[i] = k
    if 0 in lab:
        raise ValidationError("MRCA set does not cover all tips")
    return ClusterAssignment(tuple(lab))


def project_partition(t: Topology, c: ClusterAssignment) -> ClusterAssignment:
    """Refine each cluster into the maximal clades it contains."""
    groups_mask = [0] * c.n_clusters
    for i, k in enumerate(c.labels):
        groups_mask[k - 1] |= 1 << i
    member = {}
    for k, m in enumerate(groups_mask):
        for i in range(t.n_tips):
            if m >> i & 1:
                member[i] = m
    mrcas = []
    masks = t.clade_masks
    for v in t.preorder:
        m = masks[v]
        tip = (m & -m).bit_length() - 1
        g = member[tip]
        p = int(t.parent[v])
        parent_ok = p >= 0 and (masks[p] & g) == masks[p]
        if (m & g) == m and not parent_ok:
            mrcas.append(v)
    return assignment_from_mrcas(t, mrcas)


def enumerate_clade_partitions(t: Topology) -> list[tuple[int, ...]]:
    """Every clade partition as a sorted tuple of MRCA nodes."""
    memo: dict[int, list[tuple[int, ...]]] = {}
    for v in t.postorder:
        if v < t.n_tips:
            memo[v] = [(v,)]
        else:
            a, b = int(t.left[v]), int(t.right[v])
            memo[v] = [(v,)] + [tuple(sorted(x + y)) for x in memo[a] for y in memo[b]]
    return memo[t.root]


def clade_partition_search(t: Topology, support_min: float, distance_max: float) -> ClusterAssignment:
    """Depth-first clade acceptance from the root.

    A node is accepted when its support is at least ``support_min`` and the
    largest patristic distance inside its clade is at most ``distance_max``;
    accepted clades stop the descent and tips reached become singletons. The
    root is treated as fully supported. Missing supports count as 0.
    """
    if t.supports is None and support_min > 0:
        raise ValidationError("clade support values are required for support_min > 0")
    diam = clade_diameters(t)
    sup = np.ones(t.n_nodes) if t.supports is None else np.nan_to_num(t.supports, nan=0.0)
    mrcas, stack = [], [t.root]
    while stack:
        v = stack.pop()
        s = 1.0 if v == t.root else sup[v]
        if v < t.n_tips or (s >= support_min and diam[v] <= distance_max):
            mrcas.append(v)
        else:
            stack.append(int(t.right[v]))
            stack.append(int(t.left[v]))
    return assignment_from_mrcas(t, mrcas)


def dunn_index(c: ClusterAssignment, distances: np.ndarray, linkage: str = "single") -> float:
    """Minimum inter-cluster distance over maximum cluster diameter."""
    groups = c.groups()
    if len(groups) < 2:
        raise ValidationError("Dunn index undefined for fewer than two clusters")
    d = np.asarray(distances, dtype=float)
    diam = max(d[np.ix_(g, g)].max() for g in groups)
    if diam <= 0:
        raise ValidationError("Dunn index undefined: every cluster has zero diameter")
    agg = {"single": np.min, "complete": np.max}[linkage]
    inter = min(agg(d[np.ix_(g, h)]) for i, g in enumerate(groups) for h in groups[i + 1:])
    return float(inter / diam)


def select_starting_partition(t: Topology, support_min: float, distance_grid,
                              linkage: str = "single") -> ClusterAssignment:
    """Clade partition maximizing the Dunn index over distance thresholds.

    Ties go to the smaller threshold. If no candidate has a defined index the
    partition from the largest threshold is returned with a warning.
    """
    grid = sorted(float(x) for x in distance_grid)
    if not grid:
        raise ValidationError("distance_grid must not be empty")
    d = patristic_distances(t)
    best, best_val = None, -np.inf
    for thr in grid:
        c = clade_partition_search(t, support_min, thr)
        try:
            val = dunn_index(c, d, linkage)
        except ValidationError:
            continue
        if val > best_val:
            best, best_val = c, val
    if best is None:
        warnings.warn("Dunn index undefined for every threshold; using the largest threshold")
        best = clade_partition_search(t, support_min, grid[-1])
    return best


# --- nearest-neighbour interchange ----------------------------------------

def internal_edges(t: Topology) -> list[int]:
    """Internal non-root nodes; each identifies the internal edge above it."""
    return [v for v in range(t.n_tips, t.n_nodes) if v != t.root]


def nni(t: Topology, v: int, which: int) -> Topology:
    """Swap child ``which`` (0 left, 1 right) of ``v`` with ``v``'s sibling."""
    if v < t.n_tips or v == t.root:
        raise ValidationError("NNI needs an internal non-root node")
    left, right, parent = t.left.copy(), t.right.copy(), t.parent.copy()
    p = int(parent[v])
    s = t.sibling(v)
    x = int(left[v] if which == 0 else right[v])
    if which == 0:
        left[v] = s
    else:
        right[v] = s
    if left[p] == s:
        left[p] = x
    else:
        right[p] = x
    parent[s] = v
    parent[x] = p
    supports = None
    if t.supports is not None:
        supports = t.supports.copy()
        supports[v] = np.nan
    return Topology(t.labels, left, right, parent, t.root, t.lengths, supports)


def nni_neighbors(t: Topology) -> list[Topology]:
    if t.n_tips < 4:
        return []
    return [nni(t, v, w) for v in internal_edges(t) for w in (0, 1)]
