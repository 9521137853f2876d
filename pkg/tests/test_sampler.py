import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwsnake.distributions import DisplacementFamily, ModelValidationError
from gwsnake.oracle import enumerate_trees
from gwsnake.sampler import (BudgetExceededError, SeedSpec,
                             UnattainableSizeError, assign_labels,
                             derive_stream, generator, rotate_to_lukasiewicz,
                             sample_conditioned_tree)
from gwsnake.trees import PlanarTree


class TestCycleShift:
    def test_unit_case(self):
        out = rotate_to_lukasiewicz(np.array([0, 0, 2]))
        assert list(out) == [2, 0, 0]

    def test_bad_total(self):
        with pytest.raises(ValueError):
            rotate_to_lukasiewicz(np.array([1, 1]))

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_rotation_is_valid_and_unique(self, body):
        # pad to make the counts sum to len - 1
        while sum(body) > len(body) - 1:
            body.append(0)
        while sum(body) < len(body) - 1:
            body.pop()
        seq = np.array(body or [0], dtype=np.int64)
        rotated = rotate_to_lukasiewicz(seq)
        PlanarTree(rotated)  # construction asserts validity
        # uniqueness: no other rotation is valid
        valid = 0
        n1 = seq.shape[0]
        for shift in range(n1):
            cand = np.roll(seq, -shift)
            steps = np.cumsum(cand - 1)
            if steps[-1] == -1 and (steps[:-1] > -1).all():
                valid += 1
        assert valid == 1


class TestConditionedSampling:
    def test_forced_two_edge_tree(self, binary_mu):
        for stream in range(5):
            t = sample_conditioned_tree(binary_mu, 2,
                                        derive_stream(123, stream))
            assert list(t.counts) == [2, 0, 0]

    def test_zero_edges(self, binary_mu):
        t = sample_conditioned_tree(binary_mu, 0, derive_stream(1, 0))
        assert t.n_edges == 0

    def test_unattainable_size_names_span(self, binary_mu):
        with pytest.raises(UnattainableSizeError) as e:
            sample_conditioned_tree(binary_mu, 3, derive_stream(1, 0))
        assert e.value.span == 2
        assert "d = 2" in str(e.value)

    def test_budget_error_carries_attempts(self, binary_mu):
        with pytest.raises(BudgetExceededError) as e:
            sample_conditioned_tree(binary_mu, 1000, derive_stream(1, 0),
                                    max_attempts=1)
        assert e.value.attempts == 1

    def test_binary_n4_frequencies(self, binary_mu):
        R = 10_000
        rng = generator(derive_stream(42, 0))
        cnt = Counter(tuple(sample_conditioned_tree(binary_mu, 4, rng).counts)
                      for _ in range(R))
        assert set(cnt) == {(2, 2, 0, 0, 0), (2, 0, 2, 0, 0)}
        se = math.sqrt(0.25 / R)
        for freq in cnt.values():
            assert abs(freq / R - 0.5) <= 3 * se

    def test_three_point_matches_oracle_law(self, three_point_mu):
        R = 10_000
        ens = enumerate_trees(three_point_mu, 4)
        law = {tuple(t.counts): float(w)
               for t, w in zip(ens.trees, ens.conditional_weights())}
        rng = generator(derive_stream(7, 0))
        cnt = Counter(
            tuple(sample_conditioned_tree(three_point_mu, 4, rng).counts)
            for _ in range(R))
        assert set(cnt) <= set(law)
        for counts, p in law.items():
            se = math.sqrt(p * (1 - p) / R)
            assert abs(cnt[counts] / R - p) <= 4 * se, counts


class TestStreams:
    def test_determinism(self, binary_mu):
        a = sample_conditioned_tree(binary_mu, 100, derive_stream(9, 4))
        b = sample_conditioned_tree(binary_mu, 100, derive_stream(9, 4))
        assert a == b

    def test_streams_differ(self):
        g0 = generator(derive_stream(5, 0))
        g1 = generator(derive_stream(5, 1))
        assert not np.array_equal(g0.random(1000), g1.random(1000))

    def test_spec_is_value_like(self):
        assert derive_stream(3, 4) == SeedSpec(3, 4)
        with pytest.raises(ValueError):
            derive_stream(3, -1)

    def test_replica_independence(self, binary_mu):
        # total-height statistics across paired replicas are uncorrelated
        pairs = 1000
        tot = np.empty((pairs, 2))
        for i in range(pairs):
            for j in range(2):
                t = sample_conditioned_tree(binary_mu, 100,
                                            derive_stream(77, 2 * i + j))
                tot[i, j] = t.depth.max()
        corr = np.corrcoef(tot[:, 0], tot[:, 1])[0, 1]
        assert abs(corr) < 0.05


class TestLabels:
    def test_deterministic_displacements(self, binary_mu, det_nu):
        t = sample_conditioned_tree(binary_mu, 50, derive_stream(1, 0))
        lt = assign_labels(t, det_nu, derive_stream(1, 1))
        for v in range(1, t.n_nodes):
            step = 1.0 if t.child_index[v] == 1 else -1.0
            assert lt.labels[v] == lt.labels[t.parent[v]] + step

    def test_single_node(self, det_nu):
        t = PlanarTree(np.zeros(1, dtype=np.int64))
        lt = assign_labels(t, det_nu, derive_stream(0, 0))
        assert list(lt.labels) == [0.0]

    def test_missing_arity(self, three_point_mu, det_nu):
        from gwsnake.sampler import sample_conditioned_tree
        t = sample_conditioned_tree(three_point_mu, 10, derive_stream(2, 0))
        if 1 in set(int(c) for c in t.counts):
            with pytest.raises(ModelValidationError):
                assign_labels(t, det_nu, derive_stream(2, 1))

    def test_uniform_pair_frequency(self, binary_mu):
        nu = DisplacementFamily({2: [((1, -1), "1/2"), ((-1, 1), "1/2")]})
        t = PlanarTree(np.array([2, 0, 0]))
        R = 10_000
        rng = generator(derive_stream(11, 0))
        hits = sum(assign_labels(t, nu, rng).labels[1] == 1.0
                   for _ in range(R))
        assert abs(hits / R - 0.5) <= 0.015

    def test_mixed_atoms_expectation(self, binary_mu):
        # E[l(1)] = 1, E[l(2)] = -1 under the half/half (2,-1)/(0,-1) law
        nu = DisplacementFamily({2: [((2, -1), "1/2"), ((0, -1), "1/2")]})
        t = PlanarTree(np.array([2, 0, 0]))
        R = 10_000
        rng = generator(derive_stream(13, 0))
        acc = np.zeros(3)
        for _ in range(R):
            acc += assign_labels(t, nu, rng).labels
        assert abs(acc[1] / R - 1.0) < 0.05
        assert acc[2] / R == -1.0
