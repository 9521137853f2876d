import pytest

from gwsnake.distributions import (DisplacementFamily, Model,
                                   OffspringDistribution)


@pytest.fixture(scope="session")
def binary_mu():
    return OffspringDistribution(["1/2", "0", "1/2"])


@pytest.fixture(scope="session")
def three_point_mu():
    # critical, sigma^2 = 1/2, span 1
    return OffspringDistribution(["1/4", "1/2", "1/4"])


@pytest.fixture(scope="session")
def det_nu():
    # deterministic displacements: +1 to the left child, -1 to the right
    return DisplacementFamily({2: [((1, -1), 1)]})


@pytest.fixture(scope="session")
def binary_det_model(binary_mu, det_nu):
    return Model(binary_mu, det_nu, name="binary-deterministic")


def random_trees(mu, n, count, seed):
    """Sampled conditioned trees for property-style tests."""
    from gwsnake.sampler import derive_stream, generator, \
        sample_conditioned_tree
    rng = generator(derive_stream(seed, 0))
    return [sample_conditioned_tree(mu, n, rng) for _ in range(count)]
