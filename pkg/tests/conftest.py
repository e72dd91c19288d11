import numpy as np
import pytest

from relocopt import ModelParams, WageProfile, solve_extremal

# frozen from an independent scipy.solve_bvp collocation of the (x, y, a)
# system with lambda1 as a free parameter, T = 10 baseline
BASELINE_ORACLE = {
    "lambda1": 1.708208312878396,
    "alpha": 1.0421081025443952,
    "aT": 0.342703340709165,
    "XT": 0.4997795963263364,
    "J": 9.900458575970449,
}


@pytest.fixture(scope="session")
def quad():
    return WageProfile.quadratic()


@pytest.fixture(scope="session")
def base():
    return ModelParams()


@pytest.fixture(scope="session")
def base_extremal(base, quad):
    return solve_extremal(base, quad)


@pytest.fixture(scope="session")
def double_peak():
    kn = np.linspace(0.0, 1.0, 11)
    return WageProfile.tabulated(kn, kn * (1 - kn) * (0.2 + 6.0 * (kn - 0.5) ** 2))
