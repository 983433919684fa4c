import numpy as np
import pytest
from hypothesis import settings

from ptnoise.encoder import EncoderConfig
from ptnoise.numeric import kernels
from ptnoise.world import WorldConfig, generate_world, sample_dataset

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run the test once per available kernel backend."""
    prev = kernels.BACKEND
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def tiny_config():
    enc = EncoderConfig(token_dim=4, embed_dim=4, context_len=3)
    return WorldConfig(class_count=3, shots_per_class=4, test_per_class=10, pool_per_class=8,
                       encoder=enc, seed=5)


@pytest.fixture(scope="session")
def small_world():
    enc = EncoderConfig(token_dim=8, embed_dim=8, context_len=4)
    return generate_world(WorldConfig(class_count=4, shots_per_class=8, test_per_class=30,
                                      pool_per_class=20, encoder=enc, seed=3))


@pytest.fixture(scope="session")
def default_world():
    return generate_world(WorldConfig(seed=0))


@pytest.fixture(scope="session")
def default_train(default_world):
    return sample_dataset(default_world, "train")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance-criterion verdicts, echoed in the terminal summary so they show
# up without ``-s``.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
