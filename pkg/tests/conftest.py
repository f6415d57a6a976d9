import pytest
from hypothesis import settings

from igff.analytics import FieldParams
from igff.field import FieldModel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def worked():
    return FieldParams((2.0, 1.0), (0.5, 1.0))


@pytest.fixture(scope="session")
def model8(worked):
    return FieldModel(8, worked)


@pytest.fixture(scope="session")
def model4(worked):
    return FieldModel(4, worked)
