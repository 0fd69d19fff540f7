import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


class FixedRng:
    """Returns preset uniforms in order; used to drive tie-break branches."""

    def __init__(self, *values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)
