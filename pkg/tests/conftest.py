import math

import pytest

from doobtube.geometry import WidthProfile
from doobtube.harmonic import build_grid, solve_h


@pytest.fixture(scope="session")
def strip_field():
    """f = 1 with the closed end well behind the start, delta = 1/8."""
    prof = WidthProfile.constant(1.0, a=-3.0)
    return solve_h(build_grid(prof, 0.125, 24, 0.0))


@pytest.fixture(scope="session")
def half_field():
    """f = (1+v)^(-1/2), delta = 1/32, far wall beyond v = 10."""
    prof = WidthProfile.power(0.5)
    return solve_h(build_grid(prof, 1 / 32, 60, 1.0))


@pytest.fixture(scope="session")
def tiny_field():
    prof = WidthProfile.constant(1.0)
    return solve_h(build_grid(prof, 0.25, 4, 1.0, min_width_cells=2))


STRIP_KAPPA = lambda delta: math.acosh(2.0 - math.cos(math.pi * delta / 2)) / delta  # noqa: E731
