import itertools
import math
from fractions import Fraction

import pytest

from gwsnake.distributions import (DisplacementFamily,
                                   ModelValidationError,
                                   OffspringDistribution,
                                   attainable_edge_count, clt_gap,
                                   forest_size_pmf, jh_membership, load_model,
                                   moments, multinomial_pmf, parse_model,
                                   tree_size_pmf, walk_pmf)
from gwsnake.oracle import all_lineage_vectors
from gwsnake.trees import LineageVector


class TestOffspringDistribution:
    def test_criticality_enforced(self):
        with pytest.raises(ModelValidationError):
            OffspringDistribution(["1/2", "1/2"])  # mean 1/2
        OffspringDistribution(["1/2", "1/2"], unchecked=True)

    def test_degenerate_rejected(self):
        with pytest.raises(ModelValidationError):
            OffspringDistribution(["0", "1"])  # mu_0 + mu_1 = 1

    def test_float_mode_tolerance(self):
        OffspringDistribution([0.5, 0.0, 0.5])
        with pytest.raises(ModelValidationError):
            OffspringDistribution([0.5, 0.0, 0.5 + 1e-6])

    def test_minimal_support_bound(self):
        mu = OffspringDistribution(["1/2", "0", "1/2", "0", "0"])
        assert mu.K == 2

    def test_derived_quantities(self, binary_mu, three_point_mu):
        assert binary_mu.sigma2 == 1
        assert binary_mu.span == 2
        assert three_point_mu.sigma2 == Fraction(1, 2)
        assert three_point_mu.span == 1


class TestMoments:
    def test_binary_deterministic(self, binary_mu, det_nu):
        ms = moments(binary_mu, det_nu)
        assert ms.global_mean == 0 and ms.mean_is_zero
        assert ms.global_second == 1  # the label-variance constant
        assert ms.m_kj == {(2, 1): 1, (2, 2): -1}
        assert ms.s2_kj == {(2, 1): 0, (2, 2): 0}

    def test_zero_displacements_degenerate(self, binary_mu):
        nu = DisplacementFamily({2: [((0, 0), 1)]})
        ms = moments(binary_mu, nu)
        assert ms.global_mean == 0 and ms.global_second == 0
        assert ms.degenerate

    def test_uniform_pair(self, binary_mu):
        nu = DisplacementFamily({2: [((1, -1), "1/2"), ((-1, 1), "1/2")]})
        ms = moments(binary_mu, nu)
        assert ms.global_mean == 0
        assert ms.global_second == 1
        assert ms.m_kj == {(2, 1): 0, (2, 2): 0}
        assert ms.s2_kj == {(2, 1): 1, (2, 2): 1}

    def test_missing_arity(self, three_point_mu, det_nu):
        with pytest.raises(ModelValidationError):
            moments(three_point_mu, det_nu)  # no law for arity 1

    def test_variance_identity(self, binary_mu):
        # global second moment = sum mu_k (variance + mean^2), exactly
        nu = DisplacementFamily({2: [((2, -1), "1/2"), ((0, -1), "1/2")]})
        ms = moments(binary_mu, nu)
        lhs = ms.global_second
        rhs = sum(binary_mu[k] * (ms.s2_kj[(k, j)] + ms.m_kj[(k, j)] ** 2)
                  for (k, j) in ms.m_kj)
        assert lhs == rhs == Fraction(3, 2)


class TestMultinomialPmf:
    def test_hand_values(self, binary_mu):
        assert multinomial_pmf(2, binary_mu, LineageVector({(2, 1): 2})) == \
            Fraction(1, 4)
        assert multinomial_pmf(0, binary_mu, LineageVector()) == 1
        assert multinomial_pmf(
            3, binary_mu, LineageVector({(2, 1): 2, (2, 2): 1})) == \
            Fraction(3, 8)

    def test_off_support(self, binary_mu):
        assert multinomial_pmf(1, binary_mu, LineageVector({(1, 1): 1})) == 0
        assert multinomial_pmf(2, binary_mu, LineageVector({(2, 1): 1})) == 0

    @pytest.mark.parametrize("h", range(7))
    def test_sums_to_one(self, h, binary_mu, three_point_mu):
        wide = OffspringDistribution(["1/2", "1/6", "1/6", "1/6"])
        for mu in (binary_mu, three_point_mu, wide):
            total = sum(multinomial_pmf(h, mu, a)
                        for a in all_lineage_vectors(mu, h))
            assert total == 1


class TestWalkAndSizes:
    def test_walk_pmf_exact(self, binary_mu):
        law = walk_pmf(binary_mu, 5)
        assert sum(law.pmf.values()) == 1
        assert law[-1] == Fraction(10, 32)
        # span-2 support: P(W_n = l) = 0 unless l = -n mod 2
        assert all((l + 5) % 2 == 0 for l in law.support())

    def test_tree_size_examples(self, binary_mu):
        assert tree_size_pmf(binary_mu, 5) == Fraction(1, 16)
        assert tree_size_pmf(binary_mu, 1) == Fraction(1, 2)
        assert tree_size_pmf(binary_mu, 4) == 0

    def test_forest_conventions(self, binary_mu):
        assert forest_size_pmf(binary_mu, 0, 0) == 1
        assert forest_size_pmf(binary_mu, 0, 3) == 0
        assert forest_size_pmf(binary_mu, 2, 1) == 0  # n < k

    def test_forest_vs_enumeration(self, binary_mu, three_point_mu):
        from gwsnake.oracle import enumerate_trees
        for mu in (binary_mu, three_point_mu):
            size = {s: enumerate_trees(mu, s - 1).total for s in range(1, 9)}
            for k in (1, 2, 3):
                for n in range(k, 9):
                    direct = sum(
                        math.prod(size.get(x, Fraction(0)) for x in parts)
                        for parts in itertools.product(range(1, 9), repeat=k)
                        if sum(parts) == n)
                    assert direct == forest_size_pmf(mu, k, n), (k, n)


class TestCltGap:
    def test_decreasing_along_powers(self, binary_mu):
        gaps = [clt_gap(binary_mu, n) for n in (16, 64, 256)]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_n1_finite(self, binary_mu):
        assert math.isfinite(clt_gap(binary_mu, 1))

    def test_regression_pin_n1024(self, binary_mu):
        gap = clt_gap(binary_mu, 1024)
        assert gap < 0.05
        # frozen from the first run of the exact convolution
        assert abs(gap - 9.738611375997852e-05) < 1e-12


class TestJhWindow:
    def test_degenerate_h0(self, binary_mu):
        assert jh_membership(LineageVector(), 0, binary_mu)

    def test_inside_and_outside(self, binary_mu):
        inside = LineageVector({(2, 1): 32, (2, 2): 32})
        assert jh_membership(inside, 64, binary_mu)
        outside = LineageVector({(2, 1): 64})
        assert not jh_membership(outside, 64, binary_mu)

    def test_total_mismatch(self, binary_mu):
        with pytest.raises(ValueError):
            jh_membership(LineageVector({(2, 1): 2}), 3, binary_mu)


class TestAttainability:
    def test_span_two(self, binary_mu):
        assert [n for n in range(9) if attainable_edge_count(binary_mu, n)] \
            == [0, 2, 4, 6, 8]

    def test_gap_below_frobenius(self):
        mu = OffspringDistribution(["5/12", "0", "1/4", "1/3"],
                                   unchecked=True)  # supports {2, 3}
        attainable = [n for n in range(8) if attainable_edge_count(mu, n)]
        assert attainable == [0, 2, 3, 4, 5, 6, 7]  # 1 is not 2a+3b


class TestModelFiles:
    def test_parse_and_echo(self, tmp_path):
        doc = {"name": "binary-deterministic",
               "mu": {"probs": ["1/2", "0", "1/2"]},
               "nu": {"2": [{"v": [1, -1], "p": "1"}]}}
        model = parse_model(doc)
        assert model.exact
        assert model.mu[2] == Fraction(1, 2)
        assert model.nu[2][0][0] == (Fraction(1), Fraction(-1))
        assert parse_model(model.to_dict()).to_dict() == model.to_dict()
        p = tmp_path / "m.json"
        import json
        p.write_text(json.dumps(doc))
        assert load_model(p).to_dict() == model.to_dict()

    def test_decimal_strings_are_exact(self):
        model = parse_model({"mu": {"probs": ["0.5", "0", "0.5"]}})
        assert model.exact and model.mu[0] == Fraction(1, 2)

    def test_float_probs_are_inexact(self):
        model = parse_model({"mu": {"probs": [0.5, 0.0, 0.5]}})
        assert not model.exact

    def test_malformed(self):
        with pytest.raises(ModelValidationError):
            parse_model({"mu": {}})
        with pytest.raises(ModelValidationError):
            parse_model({"mu": {"probs": ["1/2", "x"]}})
        with pytest.raises(ModelValidationError):
            parse_model({"mu": {"probs": ["1/2", "0", "1/2"]},
                         "nu": {"2": [{"v": [1], "p": "1"}]}})
