"""Exact sampling of size-conditioned trees and of labels given a tree.

A conditioned tree is drawn in four steps: (1) the vector of offspring
counts (n_0..n_K) is drawn multinomially and rejected until it encodes
n edges; (2) the multiset is shuffled uniformly; (3) the unique cyclic
rotation that is a valid child-count (Lukasiewicz) sequence is found by
rotating past the first minimum of the partial sums; (4) the tree is
built.  Rejection happens on the (K+1)-dimensional count vector, so a
sample costs O(n + sqrt(n) K) in expectation.

Randomness is counter-based (Philox) under numpy's SeedSequence
spawning, so replica streams are reproducible and non-overlapping:
identical (master seed, stream index) gives bit-identical draws on a
given build.  Bit-compatibility across numpy versions is not promised;
statistical agreement is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .distributions import (DisplacementFamily, ModelValidationError,
                            OffspringDistribution, attainable_edge_count)
from .trees import LabeledTree, PlanarTree

GENERATOR_NAME = "numpy.random.Philox"
DEFAULT_MAX_ATTEMPTS = 10 ** 6


class BudgetExceededError(RuntimeError):
    """Count-vector rejection ran past the configured attempt cap."""

    def __init__(self, attempts: int, replica: int | None = None):
        where = "" if replica is None else f" (replica {replica})"
        super().__init__(
            f"rejection budget exceeded after {attempts} attempts{where}")
        self.attempts = attempts
        self.replica = replica


class UnattainableSizeError(ModelValidationError):
    """The requested edge count has probability zero under the model."""

    def __init__(self, n: int, span: int):
        super().__init__(
            f"a tree with {n} edges is unattainable under this offspring "
            f"law (support span d = {span}); attainable edge counts lie in "
            f"the semigroup generated by the supported arities")
        self.n = n
        self.span = span


@dataclass(frozen=True)
class SeedSpec:
    """Address of one reproducible random stream."""

    master_seed: int
    stream_index: int


def derive_stream(master_seed: int, replica_index: int) -> SeedSpec:
    """Stream address for one replica; distinct indices give
    non-overlapping streams (SeedSequence spawn keys)."""
    if replica_index < 0:
        raise ValueError("replica_index must be >= 0")
    return SeedSpec(int(master_seed), int(replica_index))


def generator(seed: SeedSpec | np.random.Generator) -> np.random.Generator:
    """Philox generator for a stream; passes an existing generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(seed.master_seed,
                                spawn_key=(seed.stream_index,))
    return np.random.Generator(np.random.Philox(ss))


def rotate_to_lukasiewicz(seq: np.ndarray) -> np.ndarray:
    """The unique rotation of ``seq`` (counts summing to len-1) that is a
    valid child-count sequence: start right after the first index
    attaining the minimum of the partial sums of (count - 1)."""
    seq = np.asarray(seq, dtype=np.int64)
    steps = np.cumsum(seq - 1)
    if steps[-1] != -1:
        raise ValueError("counts must sum to len(seq) - 1")
    pos = int(np.argmin(steps))  # argmin takes the first minimum
    return np.concatenate([seq[pos + 1:], seq[:pos + 1]])


def sample_offspring_counts(mu: OffspringDistribution, n: int,
                            rng: np.random.Generator,
                            max_attempts: int = DEFAULT_MAX_ATTEMPTS
                            ) -> np.ndarray:
    """Counts (n_0..n_K) of each arity among n+1 nodes, conditioned on
    encoding a tree (sum k n_k = n), by multinomial rejection."""
    probs = mu.float_probs()
    ks = np.arange(mu.K + 1)
    for attempt in range(1, max_attempts + 1):
        counts = rng.multinomial(n + 1, probs)
        if int(counts @ ks) == n:
            return counts
    raise BudgetExceededError(max_attempts)


def sample_conditioned_tree(mu: OffspringDistribution, n: int,
                            seed: SeedSpec | np.random.Generator,
                            max_attempts: int = DEFAULT_MAX_ATTEMPTS
                            ) -> PlanarTree:
    """One exact draw from the law of the tree conditioned on n edges."""
    if not attainable_edge_count(mu, n):
        raise UnattainableSizeError(n, mu.span)
    rng = generator(seed)
    if n == 0:
        return PlanarTree(np.zeros(1, dtype=np.int64))
    counts = sample_offspring_counts(mu, n, rng, max_attempts)
    seq = np.repeat(np.arange(mu.K + 1), counts)
    seq = rng.permutation(seq)
    seq = rotate_to_lukasiewicz(seq)
    return PlanarTree(seq)


def assign_labels(tree: PlanarTree, nu: DisplacementFamily,
                  seed: SeedSpec | np.random.Generator) -> LabeledTree:
    """Labels for a tree: the root gets 0 and every internal node draws
    one displacement vector for its children, independently."""
    rng = generator(seed)
    n1 = tree.n_nodes
    arities = sorted(set(int(k) for k in np.unique(tree.counts)) - {0})
    missing = [k for k in arities if k not in nu]
    if missing:
        raise ModelValidationError(
            f"no displacement law for arities {missing} present in the tree")
    u = rng.random(n1)
    atom_choice = np.zeros(n1, dtype=np.int64)
    tables: dict[int, np.ndarray] = {}
    for k in arities:
        pairs = nu[k]
        tables[k] = np.array([[float(x) for x in vec] for vec, _ in pairs])
        cum = np.cumsum([float(p) for _, p in pairs])
        nodes_k = np.nonzero(tree.counts == k)[0]
        atom_choice[nodes_k] = np.minimum(
            np.searchsorted(cum, u[nodes_k], side="right"), len(pairs) - 1)
    disp = np.zeros(n1)
    if n1 > 1:
        child = np.arange(1, n1)
        par = tree.parent[child]
        k_par = tree.counts[par]
        for k in arities:
            mask = k_par == k
            vs = child[mask]
            disp[vs] = tables[k][atom_choice[par[mask]],
                                 tree.child_index[vs] - 1]
    labels = _kernels.labels_from_displacements(tree.parent, disp)
    return LabeledTree(tree, labels)
