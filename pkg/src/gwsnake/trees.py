"""Deterministic combinatorics of rooted ordered (planar) trees.

Nodes are identified by their depth-first (preorder) rank, which agrees
with the lexicographic order on the classical word encoding; the root is
rank 0.  Trees are immutable after construction and safe to share
across threads; all functions here are pure.

The module covers construction from child-count sequences, depth-first
walks, the height/contour encodings, ancestor-type ("lineage") vectors,
and the decomposition of a tree along the branches spanned by a set of
marked nodes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels

TREE_FORMAT_VERSION = 1


class LukasiewiczError(ValueError):
    """A child-count sequence that does not encode a tree.

    ``index`` is the first offending position: the first prefix whose
    partial sum of (count - 1) drops to -1 too early, or the final index
    when the total sum is wrong.
    """

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


def _flat_index(k: int, j: int) -> int:
    return k * (k - 1) // 2 + (j - 1)


def lineage_index_set(K: int) -> list[tuple[int, int]]:
    """The index pairs {(k, j): 1 <= j <= k <= K} in flat order."""
    return [(k, j) for k in range(1, K + 1) for j in range(1, k + 1)]


class PlanarTree:
    """A rooted ordered tree stored as parallel arrays over preorder ranks.

    Attributes
    ----------
    counts      : int64[n+1]  child count per node, preorder.
    parent      : int64[n+1]  parent rank; -1 for the root.
    depth       : int64[n+1]  edge distance to the root.
    child_index : int64[n+1]  1-based position among the parent's children.
    """

    __slots__ = ("counts", "parent", "depth", "child_index",
                 "_first_child", "_next_sibling")

    def __init__(self, counts: np.ndarray, _arrays=None):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or counts.shape[0] == 0:
            raise ValueError("child-count sequence must be non-empty and 1-D")
        if (counts < 0).any():
            raise ValueError("child counts must be non-negative")
        bad = int(_kernels.lukasiewicz_violation(counts))
        if bad >= 0:
            raise LukasiewiczError(
                bad, f"invalid Lukasiewicz sequence at index {bad}: "
                     f"partial sums must stay above -1 and end at -1")
        if _arrays is None:
            _arrays = _kernels.build_arrays(counts)
        parent, depth, child_index, first_child, next_sibling = _arrays
        self.counts = counts
        self.parent = parent
        self.depth = depth
        self.child_index = child_index
        self._first_child = first_child
        self._next_sibling = next_sibling
        for a in (self.counts, self.parent, self.depth, self.child_index,
                  self._first_child, self._next_sibling):
            a.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def n_nodes(self) -> int:
        return self.counts.shape[0]

    def children(self, v: int) -> list[int]:
        """Ranks of the children of v, in order."""
        out = []
        c = self._first_child[v]
        while c != -1:
            out.append(int(c))
            c = self._next_sibling[c]
        return out

    def ancestors(self, v: int) -> list[int]:
        """Strict ancestors of v, deepest first, ending at the root."""
        out = []
        while v != 0:
            v = int(self.parent[v])
            out.append(v)
        return out

    def ancestor_at_depth(self, v: int, d: int) -> int:
        """The ancestor (or v itself) of v at depth d."""
        if d > self.depth[v] or d < 0:
            raise ValueError("no ancestor at that depth")
        while self.depth[v] > d:
            v = int(self.parent[v])
        return int(v)

    def neveu_word(self, v: int) -> tuple[int, ...]:
        """The word of 1-based child indices from the root down to v."""
        word = []
        while v != 0:
            word.append(int(self.child_index[v]))
            v = int(self.parent[v])
        return tuple(reversed(word))

    def subtree_sizes(self) -> np.ndarray:
        return _kernels.subtree_sizes(self.parent)

    # -- serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return {"n_edges": self.n_edges,
                "child_counts": [int(c) for c in self.counts]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PlanarTree":
        t = cls(np.asarray(d["child_counts"], dtype=np.int64))
        if "n_edges" in d and int(d["n_edges"]) != t.n_edges:
            raise ValueError("n_edges does not match child_counts")
        return t

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "PlanarTree":
        return cls.from_dict(json.loads(s))

    def to_csv(self, labels: np.ndarray | None = None) -> str:
        """Node table CSV: rank, parent, depth, child_index [, label]."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["rank", "parent", "depth", "child_index"]
        if labels is not None:
            head.append("label")
        w.writerow(head)
        for v in range(self.n_nodes):
            row = [v, int(self.parent[v]), int(self.depth[v]),
                   int(self.child_index[v])]
            if labels is not None:
                row.append(repr(float(labels[v])))
            w.writerow(row)
        return buf.getvalue()

    def __eq__(self, other):
        return (isinstance(other, PlanarTree)
                and np.array_equal(self.counts, other.counts))

    def __hash__(self):
        return hash(self.counts.tobytes())

    def __repr__(self):
        if self.n_nodes <= 12:
            return f"PlanarTree({list(map(int, self.counts))})"
        return f"PlanarTree(<{self.n_edges} edges>)"


def build_from_child_counts(seq: Sequence[int] | np.ndarray) -> PlanarTree:
    """Tree whose preorder child counts are ``seq`` (a Lukasiewicz sequence)."""
    return PlanarTree(np.asarray(seq, dtype=np.int64))


@dataclass(frozen=True)
class LabeledTree:
    """A planar tree with one real label per node; root label is 0."""

    tree: PlanarTree
    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.float64)
        if lab.shape != (self.tree.n_nodes,):
            raise ValueError("labels must have one entry per node")
        if lab[0] != 0.0:
            raise ValueError("root label must be 0")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)


def depth_first_walk(tree: PlanarTree) -> np.ndarray:
    """Node ranks of the walk around the tree, length 2*n_edges + 1."""
    walk, _ = _kernels.contour_walk(tree.parent, tree._first_child,
                                    tree._next_sibling)
    return walk


def encodings(tree: PlanarTree) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Height, contour, and first-visit sequences of a tree.

    Returns (H, C, m_idx): H[k] is the depth of the k-th preorder node
    (k in [0, n]); C[t] is the depth along the depth-first walk
    (t in [0, 2n]); m_idx[k] is the first walk time at node k.  They are
    linked by m_idx[k] + H[k] = 2k.
    """
    walk, first_visit = _kernels.contour_walk(tree.parent, tree._first_child,
                                              tree._next_sibling)
    H = tree.depth.copy()
    C = tree.depth[walk]
    return H, C, first_visit


class LineageVector:
    """Counts of ancestor types (k, j): an ancestor with k children,
    descended through its j-th child.  Immutable; zero entries dropped."""

    __slots__ = ("_counts",)

    def __init__(self, counts: Mapping[tuple[int, int], int] | Iterable = ()):
        items = counts.items() if isinstance(counts, Mapping) else counts
        store = {}
        for (k, j), c in items:
            k, j, c = int(k), int(j), int(c)
            if not 1 <= j <= k:
                raise ValueError(f"invalid lineage index ({k}, {j})")
            if c < 0:
                raise ValueError("lineage counts must be non-negative")
            if c:
                store[(k, j)] = store.get((k, j), 0) + c
        self._counts = store

    def __getitem__(self, kj: tuple[int, int]) -> int:
        return self._counts.get(kj, 0)

    def items(self):
        return sorted(self._counts.items())

    def as_dict(self) -> dict[tuple[int, int], int]:
        return dict(self._counts)

    def total(self) -> int:
        return sum(self._counts.values())

    def __eq__(self, other):
        return isinstance(other, LineageVector) and self._counts == other._counts

    def __hash__(self):
        return hash(frozenset(self._counts.items()))

    def __bool__(self):
        return bool(self._counts)

    def __repr__(self):
        return f"LineageVector({dict(self.items())})"


def lineage(tree: PlanarTree, v: int, window: int | None = None) -> LineageVector:
    """Ancestor-type counts of node v.

    With ``window`` = l, only the l ancestors closest to v are counted
    (strict ancestors w with d(v, w) <= l), so the total is
    min(l, depth(v)); without it the total is depth(v).
    """
    if not 0 <= v < tree.n_nodes:
        raise ValueError(f"node rank {v} out of range")
    if window is not None and not 0 <= window <= tree.depth[v]:
        raise ValueError("window must lie in [0, depth(v)]")
    steps = tree.depth[v] if window is None else window
    out: dict[tuple[int, int], int] = {}
    cur = v
    for _ in range(steps):
        p = int(tree.parent[cur])
        key = (int(tree.counts[p]), int(tree.child_index[cur]))
        out[key] = out.get(key, 0) + 1
        cur = p
    return LineageVector(out)


def n1_n2(a: LineageVector) -> tuple[int, int]:
    """(sum (j-1) a_{k,j}, sum (k-j) a_{k,j}): the numbers of subtrees
    hanging left and right of a branch with content ``a``."""
    n1 = sum((j - 1) * c for (k, j), c in a.items())
    n2 = sum((k - j) * c for (k, j), c in a.items())
    return n1, n2


# ----------------------------------------------------------------------
# Spanned-branch decomposition
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SpannedBranch:
    """One branch of the spanned tree, from entity ``upper`` down to
    ``lower`` (T ranks); ``length`` strictly interior nodes, whose
    ancestor types form ``content``."""

    upper: int
    lower: int
    shape_upper: int
    shape_lower: int
    length: int
    content: LineageVector


@dataclass(frozen=True)
class SpannedDecomposition:
    """Decomposition of a tree along the branches spanned by marked nodes.

    The *entities* are: the root (always its own shape node, of degree
    one), the distinct deepest-common-ancestor ("branching") nodes of
    consecutive marked nodes, and the marked nodes themselves.  A
    branching node equal to the root gets a shape node of its own,
    attached below the root by an empty branch; a branching node equal
    to a marked node is merged with it.  Shape ranks enumerate entities
    in lexicographic order of their tree nodes.

    ``theta`` records, per shape node with children, the child count of
    its tree node and the child directions toward each shape child (0
    for the empty root-to-root branch).  ``sub_counts[l]`` counts the
    subtrees hanging off the spanned tree that the depth-first walk
    visits between marked nodes l and l+1 (gap 0 precedes the first
    marked node, gap kappa follows the last; gaps 1..kappa include the
    marked node itself), obtained by a direct scan.  ``fringe_sizes[l]``
    is the visit-time formula for the total node count of those
    subtrees.
    """

    marked_nodes: tuple[int, ...]
    branching_nodes: tuple[int, ...]
    shape: PlanarTree
    phi: dict[int, int]
    shape_rep: tuple[int, ...]
    shape_depth: tuple[int, ...]
    branches: tuple[SpannedBranch, ...]
    theta: dict[int, tuple[int, tuple[int, ...]]]
    sub_counts: tuple[int, ...]
    fringe_sizes: tuple[int, ...]

    @property
    def kappa(self) -> int:
        return len(self.marked_nodes)


def _deepest_common_ancestor(tree: PlanarTree, a: int, b: int) -> int:
    da, db = int(tree.depth[a]), int(tree.depth[b])
    while da > db:
        a = int(tree.parent[a]); da -= 1
    while db > da:
        b = int(tree.parent[b]); db -= 1
    while a != b:
        a = int(tree.parent[a])
        b = int(tree.parent[b])
    return a


def _is_ancestor(tree: PlanarTree, a: int, b: int) -> bool:
    """True iff a is a strict ancestor of b."""
    return (tree.depth[a] < tree.depth[b]
            and tree.ancestor_at_depth(b, int(tree.depth[a])) == a)


def _direction(tree: PlanarTree, w: int, v: int) -> int:
    """Child index of w through which v descends (v strict descendant)."""
    c = tree.ancestor_at_depth(v, int(tree.depth[w]) + 1)
    return int(tree.child_index[c])


def _branch_content(tree: PlanarTree, upper: int, lower: int) -> LineageVector:
    """Types over the strict interior of the branch from upper to lower."""
    out: dict[tuple[int, int], int] = {}
    cur = lower
    while cur != upper:
        p = int(tree.parent[cur])
        if p == upper:
            break
        key = (int(tree.counts[p]), int(tree.child_index[cur]))
        out[key] = out.get(key, 0) + 1
        cur = p
    return LineageVector(out)


def spanned_decomposition(tree: PlanarTree,
                          marks: Sequence[int]) -> SpannedDecomposition:
    """Decompose ``tree`` along the branches spanned by the marked ranks.

    ``marks`` must be strictly increasing ranks in (0, n]; the root is
    implicit (it bounds the first and last traversal gaps).
    """
    marks = [int(m) for m in marks]
    if len(marks) < 1:
        raise ValueError("at least one marked node is required")
    if any(m2 <= m1 for m1, m2 in zip(marks, marks[1:])):
        raise ValueError("marked ranks must be strictly increasing")
    if marks[0] <= 0 or marks[-1] > tree.n_edges:
        raise ValueError("marked ranks must lie in (0, n_edges]; the root "
                         "is marked implicitly")
    kappa = len(marks)

    branching = [_deepest_common_ancestor(tree, marks[i], marks[i + 1])
                 for i in range(kappa - 1)]
    # entity list: one slot for the root first, then the distinct tree
    # nodes of branching + marked in rank (= lexicographic) order.  A
    # branching node sitting at the root becomes the root's only child.
    others = sorted(set(branching) | set(marks))
    reps = [0] + others
    n_ent = len(reps)

    # shape parenthood: nearest proper ancestor entity, else the root.
    parent_ent = [-1] * n_ent
    for i in range(1, n_ent):
        r = reps[i]
        if r == 0:
            parent_ent[i] = 0
            continue
        best, bestd = 0, -1
        for j in range(1, n_ent):
            q = reps[j]
            if q != r and (q == 0 or _is_ancestor(tree, q, r)):
                if tree.depth[q] > bestd:
                    best, bestd = j, int(tree.depth[q])
        parent_ent[i] = best

    kids: list[list[int]] = [[] for _ in range(n_ent)]
    for i in range(1, n_ent):
        kids[parent_ent[i]].append(i)
    for lst in kids:
        lst.sort(key=lambda i: reps[i])

    # preorder of the entity tree; entities are rank-sorted so preorder
    # must reproduce 0..n_ent-1 (asserted below).
    order = []
    stack = [0]
    while stack:
        e = stack.pop()
        order.append(e)
        stack.extend(reversed(kids[e]))
    assert order == list(range(n_ent)), "entity order is not preorder"

    shape = build_from_child_counts([len(kids[e]) for e in range(n_ent)])

    phi = {reps[i]: i for i in range(1, n_ent)}
    shape_rep = tuple(reps)
    shape_depth = tuple(int(tree.depth[r]) for r in reps)

    branches = []
    for i in range(1, n_ent):
        p = parent_ent[i]
        u, v = reps[p], reps[i]
        if u == v:
            length, content = 0, LineageVector()
        else:
            length = int(tree.depth[v]) - int(tree.depth[u]) - 1
            content = _branch_content(tree, u, v)
        branches.append(SpannedBranch(u, v, p, i, length, content))

    theta = {}
    for e in range(n_ent):
        if not kids[e]:
            continue
        r = reps[e]
        dirs = []
        for c in kids[e]:
            rc = reps[c]
            dirs.append(0 if rc == r else _direction(tree, r, rc))
        theta[e] = (int(tree.counts[r]), tuple(dirs))

    sub_counts = tuple(_direct_sub_counts(tree, marks))
    fringe_sizes = tuple(_formula_fringe_sizes(tree, marks))

    return SpannedDecomposition(tuple(marks), tuple(sorted(set(branching))),
                                shape, phi, shape_rep, shape_depth,
                                tuple(branches), theta, sub_counts,
                                fringe_sizes)


def _path_between(tree: PlanarTree, a: int, b: int) -> list[int]:
    """Nodes of the tree path from a to b, inclusive."""
    z = _deepest_common_ancestor(tree, a, b)
    up = []
    cur = a
    while cur != z:
        up.append(cur)
        cur = int(tree.parent[cur])
    down = []
    cur = b
    while cur != z:
        down.append(cur)
        cur = int(tree.parent[cur])
    return up + [z] + list(reversed(down))


def _direct_sub_counts(tree: PlanarTree, marks: list[int]) -> list[int]:
    """#Sub_l per traversal gap, by scanning neighbors of the branches."""
    kappa = len(marks)
    out = []
    for l in range(kappa + 1):
        if l == 0:
            path = tree.ancestors(marks[0])  # deepest first, ends at root
            exclude = set(path) | {marks[0]}
            count = 0
            for w in path:
                for v in tree.children(w):
                    if v not in exclude and v < marks[0]:
                        count += 1
        elif l < kappa:
            u, unext = marks[l - 1], marks[l]
            path = _path_between(tree, u, unext)
            interior = path[1:-1]
            exclude = set(path)
            count = 1
            for w in interior:
                for v in tree.children(w):
                    if v not in exclude and u < v < unext:
                        count += 1
        else:
            u = marks[-1]
            path = tree.ancestors(u)
            exclude = set(path) | {u}
            count = 1
            for w in path:
                for v in tree.children(w):
                    if v not in exclude and v > u:
                        count += 1
        out.append(count)
    return out


def _formula_fringe_sizes(tree: PlanarTree, marks: list[int]) -> list[int]:
    """Visit-time formula for the per-gap fringe forest sizes."""
    n = tree.n_edges
    kappa = len(marks)
    out = []
    for l in range(kappa + 1):
        m_l = 0 if l == 0 else marks[l - 1]
        if l < kappa:
            m_next = marks[l]
            anchor = (0 if l == 0
                      else _deepest_common_ancestor(tree, marks[l - 1], m_next))
            drop = int(tree.depth[m_next]) - int(tree.depth[anchor])
        else:
            m_next = n
            drop = 0
        out.append((m_next - m_l + 1) - drop - (1 if l == 0 else 0))
    return out


def direct_fringe_sizes(tree: PlanarTree,
                        decomp: SpannedDecomposition) -> list[int]:
    """Per-gap fringe sizes as literal sums of hanging-subtree sizes.

    Meaningful when no marked node is an ancestor of another (otherwise
    the hanging subtrees overlap); used to cross-check ``fringe_sizes``.
    """
    tree_sizes = tree.subtree_sizes()
    marks = list(decomp.marked_nodes)
    kappa = len(marks)
    out = []
    for l in range(kappa + 1):
        total = 0
        if l == 0:
            path = tree.ancestors(marks[0])
            exclude = set(path) | {marks[0]}
            for w in path:
                for v in tree.children(w):
                    if v not in exclude and v < marks[0]:
                        total += int(tree_sizes[v])
        elif l < kappa:
            u, unext = marks[l - 1], marks[l]
            path = _path_between(tree, u, unext)
            exclude = set(path)
            total = int(tree_sizes[u])
            for w in path[1:-1]:
                for v in tree.children(w):
                    if v not in exclude and u < v < unext:
                        total += int(tree_sizes[v])
        else:
            u = marks[-1]
            path = tree.ancestors(u)
            exclude = set(path) | {u}
            total = int(tree_sizes[u])
            for w in path:
                for v in tree.children(w):
                    if v not in exclude and v > u:
                        total += int(tree_sizes[v])
        out.append(total)
    return out


def _shape_path_up(decomp: SpannedDecomposition, low: int, high: int) -> list[int]:
    """Shape nodes from ``low`` up to ``high``, inclusive (high an ancestor)."""
    shape = decomp.shape
    out = [low]
    cur = low
    while cur != high:
        cur = int(shape.parent[cur])
        if cur < 0:
            raise ValueError("not an ancestor in the shape")
        out.append(cur)
    return out


def formula_sub_counts(decomp: SpannedDecomposition) -> list[int]:
    """#Sub_l per gap from the decomposition data only.

    Adds the branch-content terms (left-hangers N1 down toward the next
    marked node, right-hangers N2 up from the previous one) to the
    branching-node terms read off ``theta``; no access to the tree.
    """
    shape = decomp.shape
    kappa = decomp.kappa
    # shape rank of each marked node, and of the deepest root entity
    marked_shape = [decomp.phi[m] for m in decomp.marked_nodes]
    anchor0 = 1 if (len(decomp.shape_rep) > 1 and decomp.shape_rep[1] == 0) else 0
    branch_at = {b.shape_lower: b for b in decomp.branches}

    def dca_shape(a: int, b: int) -> int:
        da, db = int(shape.depth[a]), int(shape.depth[b])
        while da > db:
            a = int(shape.parent[a]); da -= 1
        while db > da:
            b = int(shape.parent[b]); db -= 1
        while a != b:
            a, b = int(shape.parent[a]), int(shape.parent[b])
        return a

    def direction(z: int, toward: int) -> int:
        """Tree child index of shape node z toward shape descendant."""
        path = _shape_path_up(decomp, toward, z)
        child = path[-2]
        c, dirs = decomp.theta[z]
        return dirs[shape.children(z).index(child)]

    out = []
    for l in range(kappa + 1):
        if l == 0:
            a = anchor0
            low_prev, low_next = None, marked_shape[0]
            dir_prev = 0
        elif l < kappa:
            low_prev, low_next = marked_shape[l - 1], marked_shape[l]
            a = dca_shape(low_prev, low_next)
            dir_prev = 0 if a == low_prev else direction(a, low_prev)
        else:
            a = anchor0
            low_prev, low_next = marked_shape[-1], None
            dir_prev = 0 if a == low_prev else direction(a, low_prev)

        if l < kappa:
            dir_next = direction(a, low_next) if a != low_next else 0
        else:
            # the walk ends at the root as if past a sentinel last child
            dir_next = decomp.theta[a][0] + 1

        y = (1 if l != 0 else 0) + dir_next - dir_prev - 1
        nsum = 0
        if low_prev is not None and a != low_prev:
            up = _shape_path_up(decomp, low_prev, a)
            for z in up[1:-1]:
                y += decomp.theta[z][0] - direction(z, low_prev)
            for z in up[:-1]:
                _, n2 = n1_n2(branch_at[z].content)
                nsum += n2
        if low_next is not None and a != low_next:
            down = _shape_path_up(decomp, low_next, a)
            for z in down[1:-1]:
                y += direction(z, low_next) - 1
            for z in down[:-1]:
                n1, _ = n1_n2(branch_at[z].content)
                nsum += n1
        out.append(y + nsum)
    return out
