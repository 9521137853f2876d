"""Normalized path functionals of a (labeled) tree.

The height-type paths put their i-th value at i/n, the contour-type
paths at i/(2n); evaluation anywhere in [0,1] is piecewise-linear
interpolation.  Heights scale by n^(1/2), labels and the centered
ancestor-type field by n^(1/4).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .distributions import MomentSummary, OffspringDistribution
from .trees import (LabeledTree, PlanarTree, encodings, lineage_index_set)


@dataclass(frozen=True)
class PathFunction:
    """A piecewise-linear function on [0,1] with equispaced breakpoints."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] < 2:
            raise ValueError("a path needs at least two breakpoints")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_segments(self) -> int:
        return self.values.shape[0] - 1

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.values.shape[0])

    def __call__(self, s):
        return np.interp(s, self.grid(), self.values)

    def minimum(self, s: float, t: float) -> float:
        """Exact minimum of the path over [min(s,t), max(s,t)].

        The minimum of a piecewise-linear function is attained at a
        breakpoint or at an endpoint of the interval.
        """
        lo, hi = (s, t) if s <= t else (t, s)
        if not (0.0 <= lo and hi <= 1.0):
            raise ValueError("s and t must lie in [0, 1]")
        m = self.n_segments
        first = math.ceil(lo * m)
        last = math.floor(hi * m)
        best = min(float(self(lo)), float(self(hi)))
        if first <= last:
            inner = float(self.values[first:last + 1].min())
            best = min(best, inner)
        return best

    def to_csv(self, value_label: str = "value") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", value_label])
        g = self.grid()
        for x, y in zip(g, self.values):
            w.writerow([repr(float(x)), repr(float(y))])
        return buf.getvalue()


def path_min(p: PathFunction, s: float, t: float) -> float:
    """Minimum of p over [s ^ t, s v t] (the covariance kernel input)."""
    return p.minimum(s, t)


@dataclass(frozen=True)
class VectorPath:
    """One path per ancestor-type index (k, j), sharing breakpoints.

    ``values[i, q]`` is component q (flat index over
    {(k,j): 1 <= j <= k <= K}) at breakpoint i.
    """

    K: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        nI = self.K * (self.K + 1) // 2
        if v.ndim != 2 or v.shape[1] != nI:
            raise ValueError("component count does not match K")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def index_set(self) -> list[tuple[int, int]]:
        return lineage_index_set(self.K)

    def component(self, k: int, j: int) -> PathFunction:
        if not 1 <= j <= k <= self.K:
            raise ValueError(f"index ({k}, {j}) outside the index set")
        return PathFunction(self.values[:, k * (k - 1) // 2 + (j - 1)])

    def __call__(self, s) -> np.ndarray:
        g = np.linspace(0.0, 1.0, self.values.shape[0])
        return np.array([np.interp(s, g, self.values[:, q])
                         for q in range(self.values.shape[1])])

    def to_csv(self) -> str:
        """Columns ``s`` then ``g_k_j`` over the index set in flat order
        (k ascending, then j ascending)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s"] + [f"g_{k}_{j}" for k, j in self.index_set()])
        g = np.linspace(0.0, 1.0, self.values.shape[0])
        for i, x in enumerate(g):
            w.writerow([repr(float(x))] +
                       [repr(float(v)) for v in self.values[i]])
        return buf.getvalue()


@dataclass(frozen=True)
class SnakePaths:
    """The four normalized encodings of a labeled tree."""

    height: PathFunction
    contour_height: PathFunction
    labels: PathFunction
    contour_labels: PathFunction


def height_paths(tree: PlanarTree) -> tuple[PathFunction, PathFunction]:
    """(height path, contour height path), scaled by sqrt(n)."""
    n = tree.n_edges
    if n < 1:
        raise ValueError("paths need at least one edge")
    H, C, _ = encodings(tree)
    root_n = math.sqrt(n)
    return PathFunction(H / root_n), PathFunction(C / root_n)


def normalized_processes(lt: LabeledTree) -> SnakePaths:
    """Normalized height, contour, label, and contour-label paths."""
    tree = lt.tree
    n = tree.n_edges
    if n < 1:
        raise ValueError("paths need at least one edge")
    walk, _ = _kernels.contour_walk(tree.parent, tree._first_child,
                                    tree._next_sibling)
    root_n = math.sqrt(n)
    quarter = n ** 0.25
    return SnakePaths(
        height=PathFunction(tree.depth / root_n),
        contour_height=PathFunction(tree.depth[walk] / root_n),
        labels=PathFunction(lt.labels / quarter),
        contour_labels=PathFunction(lt.labels[walk] / quarter),
    )


def lineage_field_raw(tree: PlanarTree,
                      mu: OffspringDistribution) -> np.ndarray:
    """Unnormalized centered ancestor-type counts, shape (n+1, #I_K):
    row i is A_{u(i),.} - mu * depth(u(i))."""
    nI = mu.K * (mu.K + 1) // 2
    mu_flat = np.zeros(nI)
    for q, (k, j) in enumerate(lineage_index_set(mu.K)):
        mu_flat[q] = float(mu[k])
    return _kernels.lineage_field_raw(tree.counts, tree.parent,
                                      tree.child_index, tree.depth,
                                      mu_flat, nI)


def lineage_field(tree: PlanarTree, mu: OffspringDistribution) -> VectorPath:
    """The normalized ancestor-type fluctuation field: component (k, j)
    at i/n is (A_{u(i),k,j} - mu_k depth(u(i))) / n^(1/4), computed in
    one depth-first sweep with a running lineage stack."""
    n = tree.n_edges
    if n < 1:
        raise ValueError("paths need at least one edge")
    g = lineage_field_raw(tree, mu)
    return VectorPath(mu.K, g / n ** 0.25)


@dataclass(frozen=True)
class LabelSplit:
    """Label path split into the centered-displacement part (r1), the
    ancestor-fluctuation part (r2), and the depth drift; their sum is
    the label path exactly at breakpoints."""

    r1: PathFunction
    r2: PathFunction
    drift: PathFunction


def label_decomposition(lt: LabeledTree, ms: MomentSummary) -> LabelSplit:
    """Split the normalized label path along the displacement means.

    With w(v) = sum A_{v,k,j} m_{k,j} and gm the global mean:
    r1 = (labels - w)/n^(1/4) collects the centered displacements along
    each branch, r2 = (w - depth * gm)/n^(1/4) is the inner product of
    the fluctuation field with the means, drift = depth * gm / n^(1/4)
    (identically 0 for globally centered models).
    """
    tree = lt.tree
    n = tree.n_edges
    if n < 1:
        raise ValueError("paths need at least one edge")
    weight = ms.mean_flat()
    w = _kernels.weighted_lineage_sweep(tree.counts, tree.parent,
                                        tree.child_index, weight)
    gm = float(ms.global_mean)
    quarter = n ** 0.25
    drift_vals = tree.depth * gm
    return LabelSplit(
        r1=PathFunction((lt.labels - w) / quarter),
        r2=PathFunction((w - drift_vals) / quarter),
        drift=PathFunction(drift_vals / quarter),
    )


@dataclass(frozen=True)
class TreeDiagnostics:
    """Trend diagnostics for one tree (n >= 2 edges)."""

    n_edges: int
    max_height_increment: int
    increment_over_log_n: float
    last_node_depth: int
    last_depth_over_log_n: float
    concentration_stat: float
    height_contour_gap: float


def height_contour_gap(tree: PlanarTree) -> float:
    """sup over [0,1] of |contour height path - height path|.

    Both paths are piecewise linear on the half-step grid i/(2n), so
    the supremum is attained on that grid; the height path at
    half-integers is the mean of its neighbors.
    """
    n = tree.n_edges
    walk, _ = _kernels.contour_walk(tree.parent, tree._first_child,
                                    tree._next_sibling)
    root_n = math.sqrt(n)
    c = tree.depth[walk] / root_n
    h = tree.depth / root_n
    fine = np.empty(2 * n + 1)
    fine[0::2] = h
    fine[1::2] = 0.5 * (h[:-1] + h[1:])
    return float(np.abs(c - fine).max())


def diagnostics(tree: PlanarTree, mu: OffspringDistribution,
                windows: str = "pow2") -> TreeDiagnostics:
    """Per-tree diagnostics: max height increment and last-node depth
    (both against log n), ancestor-type concentration over depth
    windows, and the height/contour sup gap.

    ``windows`` = "pow2" checks dyadic window lengths plus the full
    window per node; "all" scans every window (quadratic).
    """
    n = tree.n_edges
    if n < 2:
        raise ValueError("diagnostics need n >= 2")
    log_n = math.log(n)
    inc = int(np.abs(np.diff(tree.depth)).max())
    last = int(tree.depth[n])
    nI = mu.K * (mu.K + 1) // 2
    mu_flat = np.zeros(nI)
    for q, (k, j) in enumerate(lineage_index_set(mu.K)):
        mu_flat[q] = float(mu[k])
    conc = float(_kernels.lineage_concentration(
        tree.counts, tree.parent, tree.child_index, tree.depth, mu_flat,
        nI, log_n, windows == "all"))
    return TreeDiagnostics(
        n_edges=n,
        max_height_increment=inc,
        increment_over_log_n=inc / log_n,
        last_node_depth=last,
        last_depth_over_log_n=last / log_n,
        concentration_stat=conc,
        height_contour_gap=height_contour_gap(tree),
    )
