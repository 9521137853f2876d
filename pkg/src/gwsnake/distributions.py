"""Offspring and displacement laws, moments, and exact size/walk laws.

Probabilities live in one of two worlds: exact ``fractions.Fraction``
arithmetic (the verification world, where every identity is an equality)
and 64-bit floats (the Monte Carlo world).  A distribution built from
rational inputs stays rational through every derived law here.

The left-to-right random walk has increments distributed like (number
of children - 1); its point masses give tree and forest size laws via
the cycle-lemma ("Otter") formula P(forest of k trees has n nodes)
= (k/n) P(W_n = -k).
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .trees import LineageVector, lineage_index_set

Prob = Union[Fraction, float]

CRITICALITY_TOL = 1e-12


class ModelValidationError(ValueError):
    """A model violating the standing hypotheses or a malformed model file."""


def _parse_number(x, *, context: str) -> Prob:
    """Exact Fraction from int/str inputs, float passthrough for floats."""
    if isinstance(x, bool):
        raise ModelValidationError(f"{context}: booleans are not numbers")
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, str):
        try:
            return Fraction(x)
        except (ValueError, ZeroDivisionError) as e:
            raise ModelValidationError(f"{context}: cannot parse {x!r}") from e
    if isinstance(x, float):
        return x
    raise ModelValidationError(f"{context}: unsupported value {x!r}")


class OffspringDistribution:
    """A critical offspring law with bounded support.

    ``probs[k]`` is the probability of k children, k = 0..K with K
    minimal.  Exactly rational when every entry is a Fraction.  The
    constructor enforces non-degeneracy (mu_0 + mu_1 != 1) and
    criticality (mean exactly 1, or within 1e-12 in float mode) unless
    ``unchecked`` is set.
    """

    __slots__ = ("probs", "exact")

    def __init__(self, probs: Sequence, unchecked: bool = False):
        vals = [_parse_number(p, context="offspring probability")
                for p in probs]
        while len(vals) > 1 and vals[-1] == 0:
            vals.pop()
        if any(p < 0 for p in vals):
            raise ModelValidationError("offspring probabilities must be >= 0")
        exact = all(isinstance(p, Fraction) for p in vals)
        total = sum(vals)
        if exact:
            if total != 1:
                raise ModelValidationError(
                    f"offspring probabilities sum to {total}, not 1")
        elif abs(float(total) - 1.0) > CRITICALITY_TOL:
            raise ModelValidationError(
                f"offspring probabilities sum to {float(total)!r}, not 1")
        self.probs = tuple(vals) if exact else tuple(float(v) for v in vals)
        self.exact = exact
        if unchecked:
            return
        mass01 = self.probs[0] + (self.probs[1] if self.K >= 1 else 0)
        if mass01 == 1:
            raise ModelValidationError(
                "degenerate offspring law: mu_0 + mu_1 = 1")
        mean = self.mean
        if exact:
            if mean != 1:
                raise ModelValidationError(
                    f"offspring law is not critical: mean = {mean}")
        elif abs(float(mean) - 1.0) > CRITICALITY_TOL:
            raise ModelValidationError(
                f"offspring law is not critical: mean = {float(mean)!r}")

    @property
    def K(self) -> int:
        return len(self.probs) - 1

    @property
    def mean(self) -> Prob:
        return sum(k * p for k, p in enumerate(self.probs))

    @property
    def sigma2(self) -> Prob:
        m = self.mean
        return sum(k * k * p for k, p in enumerate(self.probs)) - m * m

    @property
    def span(self) -> int:
        """gcd of the supported positive child counts."""
        d = 0
        for k, p in enumerate(self.probs):
            if k >= 1 and p > 0:
                d = math.gcd(d, k)
        if d == 0:
            raise ModelValidationError("offspring law has no positive support")
        return d

    def supported(self) -> list[int]:
        return [k for k, p in enumerate(self.probs) if p > 0]

    def float_probs(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs])

    def __getitem__(self, k: int) -> Prob:
        if 0 <= k <= self.K:
            return self.probs[k]
        return Fraction(0) if self.exact else 0.0

    def __eq__(self, other):
        return (isinstance(other, OffspringDistribution)
                and self.probs == other.probs)

    def __hash__(self):
        return hash(self.probs)

    def __repr__(self):
        return f"OffspringDistribution({list(self.probs)})"


class DisplacementFamily:
    """Finite-support displacement laws, one per supported arity.

    ``atoms[k]`` is a list of (vector, probability) pairs where each
    vector gives the k label increments from a node to its children.
    """

    __slots__ = ("atoms",)

    def __init__(self, atoms: Mapping[int, Sequence]):
        store: dict[int, tuple] = {}
        for k, pairs in atoms.items():
            k = int(k)
            if k < 1:
                raise ModelValidationError("displacement arity must be >= 1")
            parsed = []
            total = Fraction(0)
            for vec, p in pairs:
                vec = tuple(_parse_number(x, context=f"displacement (k={k})")
                            for x in vec)
                if len(vec) != k:
                    raise ModelValidationError(
                        f"displacement vector for arity {k} has {len(vec)} "
                        f"coordinates")
                p = _parse_number(p, context=f"displacement prob (k={k})")
                if p < 0:
                    raise ModelValidationError("displacement prob < 0")
                parsed.append((vec, p))
                total += Fraction(p) if not isinstance(p, Fraction) else p
            if isinstance(total, Fraction) and all(
                    isinstance(p, Fraction) for _, p in parsed):
                if total != 1:
                    raise ModelValidationError(
                        f"displacement probs for arity {k} sum to {total}")
            elif abs(float(total) - 1.0) > CRITICALITY_TOL:
                raise ModelValidationError(
                    f"displacement probs for arity {k} sum to {float(total)}")
            store[k] = tuple(parsed)
        self.atoms = store

    def arities(self) -> list[int]:
        return sorted(self.atoms)

    def __getitem__(self, k: int):
        return self.atoms[k]

    def __contains__(self, k: int) -> bool:
        return k in self.atoms


@dataclass(frozen=True)
class MomentSummary:
    """Derived moments of an (offspring, displacement) pair.

    Per index (k, j): mean, variance and raw second moment of the j-th
    coordinate of the arity-k displacement.  Globally: the weighted mean
    sum(mu_k m_{k,j}), the weighted raw second moment sum(mu_k E Y^2)
    (the label-variance constant), the offspring variance, and the span.
    """

    K: int
    m_kj: dict
    s2_kj: dict
    second_kj: dict
    global_mean: Prob
    global_second: Prob
    sigma2_mu: Prob
    span: int
    mean_is_zero: bool
    degenerate: bool

    def mean_flat(self) -> np.ndarray:
        out = np.zeros(len(lineage_index_set(self.K)))
        for i, kj in enumerate(lineage_index_set(self.K)):
            out[i] = float(self.m_kj.get(kj, 0))
        return out


def moments(mu: OffspringDistribution, nu: DisplacementFamily) -> MomentSummary:
    """Moment summary; raises if some supported arity has no displacement."""
    m_kj, s2_kj, second_kj = {}, {}, {}
    zero = Fraction(0)
    gmean, gsecond = zero, zero
    for k in mu.supported():
        if k == 0:
            continue
        if k not in nu:
            raise ModelValidationError(
                f"no displacement law for supported arity {k}")
        for j in range(1, k + 1):
            m = sum(p * vec[j - 1] for vec, p in nu[k])
            sec = sum(p * vec[j - 1] * vec[j - 1] for vec, p in nu[k])
            m_kj[(k, j)] = m
            second_kj[(k, j)] = sec
            s2_kj[(k, j)] = sec - m * m
            gmean = gmean + mu[k] * m
            gsecond = gsecond + mu[k] * sec
    if isinstance(gmean, Fraction):
        mean_is_zero = gmean == 0
    else:
        mean_is_zero = abs(float(gmean)) <= CRITICALITY_TOL
    return MomentSummary(K=mu.K, m_kj=m_kj, s2_kj=s2_kj, second_kj=second_kj,
                         global_mean=gmean, global_second=gsecond,
                         sigma2_mu=mu.sigma2, span=mu.span,
                         mean_is_zero=mean_is_zero,
                         degenerate=(gsecond == 0))


def multinomial_pmf(h: int, mu: OffspringDistribution, a: LineageVector) -> Prob:
    """P(M = a) for the multinomial of h ancestor types with cell
    probabilities p_{k,j} = mu_k on {(k,j): 1 <= j <= k <= K}.

    Criticality makes (p_{k,j}) a probability vector.  Returns 0 when
    the counts do not sum to h or hit an unsupported type.
    """
    if h < 0 or a.total() != h:
        return Fraction(0) if mu.exact else 0.0
    coef = math.factorial(h)
    prob = Fraction(1) if mu.exact else 1.0
    for (k, j), c in a.items():
        if k > mu.K or mu[k] == 0:
            return Fraction(0) if mu.exact else 0.0
        coef //= math.factorial(c)
        prob = prob * mu[k] ** c
    return coef * prob


@dataclass(frozen=True)
class WalkLaw:
    """Point masses of the n-step walk with increments (offspring - 1)."""

    n: int
    pmf: dict

    def __getitem__(self, l: int) -> Prob:
        return self.pmf.get(l, Fraction(0))

    def support(self) -> list[int]:
        return sorted(self.pmf)


def _convolve(a: dict, b: dict) -> dict:
    out: dict = {}
    for x, px in a.items():
        for y, py in b.items():
            key = x + y
            cur = out.get(key)
            out[key] = px * py if cur is None else cur + px * py
    return out


@lru_cache(maxsize=None)
def walk_pmf(mu: OffspringDistribution, n: int) -> WalkLaw:
    """Exact pmf of W_n by iterated convolution (squaring on the dyadic
    decomposition of n)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    step = {k - 1: p for k, p in enumerate(mu.probs) if p > 0}
    one = Fraction(1) if mu.exact else 1.0
    result: dict = {0: one}
    base = step
    m = n
    while m:
        if m & 1:
            result = _convolve(result, base)
        m >>= 1
        if m:
            base = _convolve(base, base)
    return WalkLaw(n, result)


def forest_size_pmf(mu: OffspringDistribution, k: int, n: int) -> Prob:
    """P(a forest of k independent trees has n nodes in total).

    Cycle-lemma formula (k/n) P(W_n = -k) for k >= 1; the empty forest
    has size 0 with probability one.
    """
    zero = Fraction(0) if mu.exact else 0.0
    if k < 0 or n < 0:
        raise ValueError("k and n must be >= 0")
    if k == 0:
        return (Fraction(1) if mu.exact else 1.0) if n == 0 else zero
    if n < k:
        return zero
    return Fraction(k, n) * walk_pmf(mu, n)[-k] if mu.exact \
        else (k / n) * walk_pmf(mu, n)[-k]


def tree_size_pmf(mu: OffspringDistribution, n: int) -> Prob:
    """P(the tree has n nodes)."""
    return forest_size_pmf(mu, 1, n)


def clt_gap(mu: OffspringDistribution, n: int) -> float:
    """Sup distance between the lattice-normalized walk pmf and the
    Gaussian density, a quantity that tends to 0 as n grows.

    Computes sup over l in -n + span*Z (within the walk's range) of
    |sqrt(n)/d * P(W_n = l) - exp(-l^2 / (2 sigma^2 n)) / (sqrt(2 pi) sigma)|.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    law = walk_pmf(mu, n)
    d = mu.span
    sigma = math.sqrt(float(mu.sigma2))
    root_n = math.sqrt(n)
    gap = 0.0
    for l in range(-n, n * (mu.K - 1) + 1, d):
        p = float(law.pmf.get(l, 0))
        gauss = math.exp(-l * l / (2.0 * sigma * sigma * n)) / (
            math.sqrt(2.0 * math.pi) * sigma)
        gap = max(gap, abs(root_n / d * p - gauss))
    return gap


def jh_membership(a: LineageVector, h: int, mu: OffspringDistribution) -> bool:
    """Whether (N1(a), N2(a)) lies in the concentration window
    [sigma^2 h / 2 - h^(2/3), sigma^2 h / 2 + h^(2/3)]^2."""
    if a.total() != h:
        raise ValueError("lineage total must equal h")
    from .trees import n1_n2
    n1, n2 = n1_n2(a)
    center = float(mu.sigma2) * h / 2.0
    half = h ** (2.0 / 3.0)
    lo, hi = center - half, center + half
    return lo <= n1 <= hi and lo <= n2 <= hi


def attainable_edge_count(mu: OffspringDistribution, n: int) -> bool:
    """Whether a tree with n edges (n+1 nodes) has positive probability.

    n+1 nodes need child counts summing to n, i.e. n in the numerical
    semigroup generated by the supported positive arities; membership
    uses the minimal-representative-per-residue table.
    """
    if n < 0:
        return False
    if n == 0:
        return True
    gens = [k for k in mu.supported() if k >= 1]
    if not gens:
        return False
    return n >= _semigroup_threshold(tuple(gens))[n % gens[0]]


@lru_cache(maxsize=None)
def _semigroup_threshold(gens: tuple[int, ...]) -> tuple[int, ...]:
    """Minimal semigroup element per residue class mod the smallest
    generator (infinity encoded as a huge sentinel)."""
    g0 = gens[0]
    INF = float("inf")
    best = [INF] * g0
    best[0] = 0
    # Dijkstra over residues; edge r -> (r + g) % g0 with weight g
    heap = [(0, 0)]
    while heap:
        dist, r = heapq.heappop(heap)
        if dist > best[r]:
            continue
        for g in gens:
            nd = dist + g
            nr = nd % g0
            if nd < best[nr]:
                best[nr] = nd
                heapq.heappush(heap, (nd, nr))
    return tuple(int(b) if b != INF else 1 << 62 for b in best)


# ----------------------------------------------------------------------
# Model files
# ----------------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Model:
    """An offspring law with an optional displacement family."""

    mu: OffspringDistribution
    nu: DisplacementFamily | None
    name: str = ""

    @property
    def exact(self) -> bool:
        return self.mu.exact

    def to_dict(self) -> dict:
        def enc(x):
            return str(x) if isinstance(x, Fraction) else x
        d: dict = {"mu": {"probs": [enc(p) for p in self.mu.probs]}}
        if self.nu is not None:
            d["nu"] = {
                str(k): [{"v": [enc(x) for x in vec], "p": enc(p)}
                         for vec, p in pairs]
                for k, pairs in self.nu.atoms.items()}
        if self.name:
            d["name"] = self.name
        return d


def parse_model(d: Mapping) -> Model:
    """Model from its JSON dict form.

    ``{"mu": {"probs": [...]}, "nu": {"2": [{"v": [1,-1], "p": "1"}]}}``
    with probabilities as "p/q" or decimal strings (exact) or floats.
    """
    try:
        probs = d["mu"]["probs"]
    except (KeyError, TypeError) as e:
        raise ModelValidationError("model is missing mu.probs") from e
    mu = OffspringDistribution(probs, unchecked=bool(d.get("unchecked", False)))
    nu = None
    if "nu" in d and d["nu"] is not None:
        atoms = {}
        for k, pairs in d["nu"].items():
            try:
                atoms[int(k)] = [(pair["v"], pair["p"]) for pair in pairs]
            except (KeyError, TypeError, ValueError) as e:
                raise ModelValidationError(
                    f"malformed displacement entry for arity {k}") from e
        nu = DisplacementFamily(atoms)
    return Model(mu=mu, nu=nu, name=str(d.get("name", "")))


def load_model(path: str | Path) -> Model:
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ModelValidationError(f"model file {path} is not JSON") from e
    return parse_model(d)
