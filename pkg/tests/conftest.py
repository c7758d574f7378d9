import numpy as np
import pytest

from speclab.geometry import ExponentialProfile, PolynomialProfile, QuasiPolynomialProfile


@pytest.fixture
def flat():
    return PolynomialProfile(k=0.0, n=2)


@pytest.fixture
def poly24():
    return PolynomialProfile(k=2.0, n=4)


@pytest.fixture
def exp12():
    return ExponentialProfile(alpha=1.0, n=2)


@pytest.fixture
def quasi():
    return QuasiPolynomialProfile(beta=0.25, n=2)


def sine_coefficients(rng, modes=8, complex_valued=True):
    coef = rng.standard_normal(modes)
    if complex_valued:
        coef = coef + 1j * rng.standard_normal(modes)
    return coef


def sine_series(coef, grid):
    """Evaluate a fixed Dirichlet-compatible sine series on a grid."""
    t = grid.nodes
    u = np.zeros(grid.m, dtype=complex)
    for k, c in enumerate(coef):
        u += c * np.sin((k + 1) * np.pi * t / grid.t_max)
    return u


def band_limited_section(rng, grid, modes=8, complex_valued=True):
    """Random smooth Dirichlet-compatible section: a short sine series."""
    return sine_series(sine_coefficients(rng, modes, complex_valued), grid)
