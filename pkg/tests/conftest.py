import numpy as np
import pytest

import voldiff as vd


@pytest.fixture(scope="session")
def linear_1000():
    return vd.linear_schedule(1000)


@pytest.fixture(scope="session")
def small_case():
    """24^3 phantom shared by read-only tests."""
    return vd.generate(vd.PhantomSpec(grid=(24, 24, 24), lesion_radius_mm=1.5, seed=5))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
