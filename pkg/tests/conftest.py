import pytest

from recbench.data import synthetic_dataset
from recbench.dataio import SplitSpec, split_global


@pytest.fixture(scope="session")
def small_split():
    return split_global(synthetic_dataset(n_users=20, n_items=40, per_user=8, seed=1), SplitSpec(seed=0))


@pytest.fixture(scope="session")
def small_view(small_split):
    return small_split.training_view()
