import numpy as np
import pytest
from hypothesis import settings

from edd.data import DatasetConfig, build_dataset
from edd.network import ArchitectureConfig

settings.register_profile("default", deadline=None)
settings.load_profile("default")

TINY = dict(
    conv=((3, 3, 1), (4, 3, 2), (4, 3, 1), (5, 2, 1)),
    tap_pool=(1, 2, 1, 1),
    class_hidden=(6,),
    image_size=12,
)


def tiny_arch(**kw) -> ArchitectureConfig:
    return ArchitectureConfig(**{**TINY, **kw})


@pytest.fixture(scope="session")
def tiny_split():
    return build_dataset(config=DatasetConfig(n_train=40, n_test=16, seed=5, image_size=12))


@pytest.fixture(scope="session")
def small_split():
    return build_dataset(config=DatasetConfig(n_train=64, n_test=16, seed=1))


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, filled by test_acceptance and echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
