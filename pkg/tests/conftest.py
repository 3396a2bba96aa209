import math

import numpy as np
import pytest

from cusplab.geometry import CuspDomain, RectangleDomain
from cusplab import spectral as spec
from cusplab import analysis as an


@pytest.fixture(scope="session")
def cusp():
    return CuspDomain(2.0)


@pytest.fixture(scope="session")
def unit_square():
    return RectangleDomain(1.0, 1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def cusp_solution_small(cusp):
    """Quick k=30 solve used by several spectral/analysis tests."""
    return spec.solve_spectrum(cusp, 20.0, 160, 64, 30)


@pytest.fixture(scope="session")
def cusp_marginals_small(cusp, cusp_solution_small):
    sol = cusp_solution_small
    return [spec.marginal_density(cusp, sol.grid, p) for p in sol.pairs]


@pytest.fixture(scope="session")
def production_solution(cusp):
    """The k=200 production solve shared by the heavy acceptance criteria."""
    import time
    t0 = time.time()
    sol = spec.solve_spectrum(cusp, 20.0, 360, 120, 200)
    sol.wall_seconds = time.time() - t0
    return sol


@pytest.fixture(scope="session")
def production_marginals(cusp, production_solution):
    sol = production_solution
    return [spec.marginal_density(cusp, sol.grid, p) for p in sol.pairs]
