import numpy as np
import pytest

from pbnas.bench import synthetic_benchmark
from pbnas.search import search_space_for
from pbnas.space import SpaceSpec

DEFAULT_SPEC = SpaceSpec(num_layers=5, num_op_types=3)
DEFAULT_SEED = 0


@pytest.fixture(scope="session")
def default_bench():
    """The default desk-scale synthetic benchmark (L=5, d=3)."""
    return synthetic_benchmark(DEFAULT_SPEC, seed=DEFAULT_SEED)


@pytest.fixture(scope="session")
def default_space(default_bench):
    return search_space_for(default_bench)


@pytest.fixture(scope="session")
def default_space_errors(default_bench, default_space):
    val, test = default_bench.eval_means(default_space.archs)
    return val, test


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
