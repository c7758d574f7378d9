"""speclab: numerical spectral laboratory for radial Dirac-type operators
on warped-product model ends."""

__version__ = "0.1.0"

from .geometry import (
    ExponentialProfile,
    PolynomialProfile,
    QuasiPolynomialProfile,
    TabulatedProfile,
    ball_volume,
    check_growth_condition,
    check_subexponential,
    eval_profile,
    radial_density,
    radial_ricci,
    warping_profile,
)
from .operators import (
    DIRAC_SQUARED,
    SCALAR_LAPLACIAN,
    RadialGrid,
    RadialSection,
    assemble_operator,
    apply_dirac,
    apply_dirac_squared,
    eig_sym_tridiag,
    spectrum_window,
    weighted_norm,
)

__all__ = [
    "__version__",
    "ExponentialProfile",
    "PolynomialProfile",
    "QuasiPolynomialProfile",
    "TabulatedProfile",
    "ball_volume",
    "check_growth_condition",
    "check_subexponential",
    "eval_profile",
    "radial_density",
    "radial_ricci",
    "warping_profile",
    "DIRAC_SQUARED",
    "SCALAR_LAPLACIAN",
    "RadialGrid",
    "RadialSection",
    "assemble_operator",
    "apply_dirac",
    "apply_dirac_squared",
    "eig_sym_tridiag",
    "spectrum_window",
    "weighted_norm",
]
