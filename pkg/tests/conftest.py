import pytest

from boa import dataset as ds
from boa.featurizer import FeaturizerSpec
from boa.gridworld import EnvSpec
from boa.harness import Artifacts, index_for
from boa.policies import fit_tabular_bc


@pytest.fixture(scope="session")
def hallway():
    return EnvSpec("hallway")


@pytest.fixture(scope="session")
def hallway_data(hallway):
    return ds.record(hallway, 20, seed=7)


@pytest.fixture(scope="session")
def hallway_featurizer(hallway):
    return FeaturizerSpec.for_env(hallway, seed=0)


@pytest.fixture(scope="session")
def hallway_artifacts(hallway_data, hallway_featurizer, hallway):
    index = index_for(hallway_data, hallway_featurizer)
    policy = fit_tabular_bc(hallway_data.pairs(), hallway.num_actions)
    return Artifacts(index, policy, hallway_featurizer)
