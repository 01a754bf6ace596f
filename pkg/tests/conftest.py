import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from privfed.problems import make_logistic, make_quadratic  # noqa: E402


@pytest.fixture(scope="session")
def quad_small():
    """Shared small quadratic instance (N=3 silos, exactly known optimum)."""
    return make_quadratic(N=3, n=20, d=4, mu=1.0, beta=5.0, hetero_scale=1.0,
                          seed=11)


@pytest.fixture(scope="session")
def quad_kappa10():
    """The acceptance-scale quadratic: N=5, n=50, d=10, kappa=10."""
    return make_quadratic(N=5, n=50, d=10, mu=1.0, beta=10.0,
                          hetero_scale=1.0, seed=42)


@pytest.fixture(scope="session")
def logistic_small():
    return make_logistic(N=4, n=30, d=5, label_by_silo=True, radius=3.0,
                         seed=5)
