import pytest
from hypothesis import HealthCheck, settings

from heavenly.catalog import build_system, load_catalog

settings.register_profile(
    "kernel",
    max_examples=200,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("kernel")


@pytest.fixture(scope="session")
def mixed():
    return build_system("mixed")


@pytest.fixture(scope="session")
def husain():
    return build_system("husain")


@pytest.fixture(scope="session")
def mixed_cat(mixed):
    return load_catalog(mixed)


@pytest.fixture(scope="session")
def husain_cat(husain):
    return load_catalog(husain)
