import numpy as np
import pytest

from latent_bridge import toyworld


SMALL = dict(latent_dim=6, obs_dim=12, voxel_dim=24, attribute_count=2, n_train=400,
             n_test_stimuli=6, trials_per_test=(5, 9), seed=3)


@pytest.fixture(scope="session")
def small_world():
    return toyworld.build_world(toyworld.WorldConfig(**SMALL))


@pytest.fixture(scope="session")
def small_dataset(small_world):
    return toyworld.build_dataset(small_world)


@pytest.fixture(scope="session")
def noiseless_world():
    return toyworld.build_world(toyworld.WorldConfig(noise_std=0.0, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = request.config.stash.setdefault(_LOG_KEY, [])
    return lines


_LOG_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LOG_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
