"""Numba kernels for the traversal-heavy loops.

Everything here works on flat numpy arrays; the object layer lives in
``trees`` / ``processes``.  Node identity is the depth-first (preorder)
rank, so ``counts[v]`` is the number of children of the v-th node in
preorder and parents always precede children.

Lineage vectors are stored flat over the index set
``{(k, j): 1 <= j <= k <= K}`` with ``flat(k, j) = k(k-1)/2 + (j-1)``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def lukasiewicz_violation(counts):
    """First index violating the Lukasiewicz property, or -1 if valid.

    The partial sums s_i = sum_{j<=i} (counts[j] - 1) must stay > -1 for
    i < len-1 and end at exactly -1.  An early hit of -1 reports that
    index; a bad final sum reports the last index.
    """
    n1 = counts.shape[0]
    s = 0
    for i in range(n1 - 1):
        s += counts[i] - 1
        if s <= -1:
            return i
    s += counts[n1 - 1] - 1
    if s != -1:
        return n1 - 1
    return -1


@njit(cache=True)
def build_arrays(counts):
    """Structure arrays from preorder child counts (assumed valid).

    Returns (parent, depth, child_index, first_child, next_sibling);
    parent[0] = -1, child_index is 1-based, first_child/next_sibling are
    -1 where absent.
    """
    n1 = counts.shape[0]
    parent = np.full(n1, -1, np.int64)
    depth = np.zeros(n1, np.int64)
    child_index = np.zeros(n1, np.int64)
    first_child = np.full(n1, -1, np.int64)
    next_sibling = np.full(n1, -1, np.int64)
    prev_child = np.full(n1, -1, np.int64)
    stack_node = np.empty(n1, np.int64)
    stack_rem = np.empty(n1, np.int64)
    top = 0
    stack_node[0] = 0
    stack_rem[0] = counts[0]
    for v in range(1, n1):
        while stack_rem[top] == 0:
            top -= 1
        p = stack_node[top]
        parent[v] = p
        depth[v] = depth[p] + 1
        child_index[v] = counts[p] - stack_rem[top] + 1
        if prev_child[p] == -1:
            first_child[p] = v
        else:
            next_sibling[prev_child[p]] = v
        prev_child[p] = v
        stack_rem[top] -= 1
        top += 1
        stack_node[top] = v
        stack_rem[top] = counts[v]
    return parent, depth, child_index, first_child, next_sibling


@njit(cache=True)
def contour_walk(parent, first_child, next_sibling):
    """Depth-first walk around the tree.

    Returns (walk, first_visit): walk has length 2n+1 with
    walk[0] = walk[2n] = 0, first_visit[v] is the first walk time at v.
    """
    n1 = parent.shape[0]
    walk = np.empty(2 * n1 - 1, np.int64)
    first_visit = np.zeros(n1, np.int64)
    cursor = first_child.copy()
    cur = 0
    walk[0] = 0
    for t in range(1, 2 * n1 - 1):
        nxt = cursor[cur]
        if nxt != -1:
            cursor[cur] = next_sibling[nxt]
            cur = nxt
            first_visit[cur] = t
        else:
            cur = parent[cur]
        walk[t] = cur
    return walk, first_visit


@njit(cache=True)
def lineage_field_raw(counts, parent, child_index, depth, mu_flat, n_index):
    """Centered ancestor-type counts along the preorder sweep.

    g[v, flat(k, j)] = A_{u(v),k,j} - mu_k * depth(v), for every node v.
    A running lineage stack makes the sweep O(n * #indices).
    """
    n1 = counts.shape[0]
    g = np.zeros((n1, n_index), np.float64)
    acc = np.zeros(n_index, np.int64)
    path_node = np.empty(n1, np.int64)
    path_idx = np.empty(n1, np.int64)
    top = -1
    for v in range(1, n1):
        p = parent[v]
        while top >= 0 and path_node[top] != p:
            acc[path_idx[top]] -= 1
            top -= 1
        k = counts[p]
        fi = k * (k - 1) // 2 + (child_index[v] - 1)
        acc[fi] += 1
        top += 1
        path_node[top] = v
        path_idx[top] = fi
        d = depth[v]
        for q in range(n_index):
            g[v, q] = acc[q] - mu_flat[q] * d
    return g


@njit(cache=True)
def weighted_lineage_sweep(counts, parent, child_index, weight_flat):
    """w[v] = sum_{(k,j)} A_{u(v),k,j} * weight[flat(k,j)] for every node."""
    n1 = counts.shape[0]
    w = np.zeros(n1, np.float64)
    acc = 0.0
    path_node = np.empty(n1, np.int64)
    path_w = np.empty(n1, np.float64)
    top = -1
    for v in range(1, n1):
        p = parent[v]
        while top >= 0 and path_node[top] != p:
            acc -= path_w[top]
            top -= 1
        k = counts[p]
        fi = k * (k - 1) // 2 + (child_index[v] - 1)
        wv = weight_flat[fi]
        acc += wv
        top += 1
        path_node[top] = v
        path_w[top] = wv
        w[v] = acc
    return w


@njit(cache=True)
def labels_from_displacements(parent, disp):
    """Prefix-sum labels down the tree: lab[v] = lab[parent[v]] + disp[v]."""
    n1 = parent.shape[0]
    lab = np.zeros(n1, np.float64)
    for v in range(1, n1):
        lab[v] = lab[parent[v]] + disp[v]
    return lab


@njit(cache=True)
def subtree_sizes(parent):
    """Node count of the subtree rooted at each node."""
    n1 = parent.shape[0]
    size = np.ones(n1, np.int64)
    for v in range(n1 - 1, 0, -1):
        size[parent[v]] += size[v]
    return size


@njit(cache=True)
def lineage_concentration(counts, parent, child_index, depth, mu_flat,
                          n_index, log_n, all_windows):
    """max over nodes u, windows l, indices of |A_{u,l,k,j} - mu_k l| / sqrt(l log n).

    Windowed counts cover the l ancestors closest to u.  Windows are the
    powers of two up to depth(u) plus the full window; ``all_windows``
    switches to every l in [1, depth(u)] (quadratic, diagnostics only).
    Uses cumulative per-depth type counts along the current root path,
    valid in preorder because shallower rows are untouched by siblings.
    """
    n1 = counts.shape[0]
    maxd = 0
    for v in range(n1):
        if depth[v] > maxd:
            maxd = depth[v]
    cum = np.zeros((maxd + 1, n_index), np.int64)
    best = 0.0
    for v in range(1, n1):
        p = parent[v]
        h = depth[v]
        k = counts[p]
        fi = k * (k - 1) // 2 + (child_index[v] - 1)
        for q in range(n_index):
            cum[h, q] = cum[h - 1, q]
        cum[h, fi] += 1
        l = 1
        while l <= h:
            scale = 1.0 / np.sqrt(l * log_n)
            for q in range(n_index):
                dev = abs((cum[h, q] - cum[h - l, q]) - mu_flat[q] * l) * scale
                if dev > best:
                    best = dev
            if l == h:
                break
            if all_windows:
                l += 1
            else:
                l = l * 2 if l * 2 <= h else h
    return best
