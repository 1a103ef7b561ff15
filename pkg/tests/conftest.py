import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from otstab import dataio


@pytest.fixture(scope="session")
def toy():
    """The seeded two-Gaussian sample every end-to-end test starts from."""
    return dataio.generate_toy(seed=7)


@pytest.fixture(scope="session")
def toy_logistic(toy):
    return dataio.fit_toy_logistic(toy)
