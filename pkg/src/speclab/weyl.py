"""Approximate-eigenspinor families, their L^p quotients, and the generalized
Weyl criterion functional for the radial model.

All cutoffs are built from the quintic smoothstep s(x) = 10x^3 - 15x^4 + 6x^5,
whose slope bound 15/8 and curvature bound 10/sqrt(3) make every stated
derivative constraint hold with margin while keeping results bit-reproducible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, SupportError
from .geometry import (
    WarpingProfile,
    eval_profile,
    log_radial_density,
    profile_is_nondecreasing,
    radial_density,
)
from .operators import (
    DIRAC_SQUARED,
    SCALAR_LAPLACIAN,
    RadialGrid,
    RadialSection,
    _central_derivative,
    apply_dirac_squared,
    assemble_operator,
    connection_coefficient,
    effective_potential,
    weighted_norm,
)

SMOOTHSTEP_SLOPE = 15.0 / 8.0
SMOOTHSTEP_CURVATURE = 10.0 / math.sqrt(3.0)

# overflow guard: magnitudes are renormalized once their common log exceeds this
_LOG_GUARD = 250.0


def smoothstep(x):
    """C^2 ramp 10x^3 - 15x^4 + 6x^5 clamped to [0, 1]."""
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


def smoothstep_prime(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.clip(x, 0.0, 1.0)
    return np.where(inside, 30.0 * xc**2 * (1.0 - xc) ** 2, 0.0)


def smoothstep_second(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.clip(x, 0.0, 1.0)
    return np.where(inside, 60.0 * xc * (1.0 - xc) * (1.0 - 2.0 * xc), 0.0)


# ---------------------------------------------------------------------------
# cutoff families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffEtaT:
    """Cutoff supported on [T, 4T], equal to 1 on [2T, 3T], with |eta'| <= 2/T."""

    T: float
    grid: RadialGrid
    values: np.ndarray
    derivative: np.ndarray


def cutoff_eta(T: float, grid: RadialGrid) -> CutoffEtaT:
    """Sample the plateau cutoff and its derivative on the grid."""
    if T <= 0:
        raise DomainError("T must be > 0")
    if 4.0 * T >= grid.t_max:
        raise SupportError(f"cutoff support [T, 4T] = [{T}, {4 * T}] exceeds T_max = {grid.t_max}")
    t = grid.nodes
    up = (t - T) / T
    down = (4.0 * T - t) / T
    values = np.where(t < 2.0 * T, smoothstep(up), np.where(t > 3.0 * T, smoothstep(down), 1.0))
    values = np.where((t < T) | (t > 4.0 * T), 0.0, values)
    deriv = np.where(
        (t >= T) & (t <= 2.0 * T),
        smoothstep_prime(up) / T,
        np.where((t >= 3.0 * T) & (t <= 4.0 * T), -smoothstep_prime(down) / T, 0.0),
    )
    assert float(np.max(np.abs(deriv))) <= 2.0 / T + 1e-15
    return CutoffEtaT(T=float(T), grid=grid, values=values, derivative=deriv)


@dataclass(frozen=True)
class CutoffChi:
    """Scaled annulus cutoff chi(t / R) with plateau [x/R, y/R] and unit ramps.

    Requires x > 2R and y > x + 2R; |chi'| and |chi''| (in the scaled variable)
    are bounded by the absolute smoothstep constants 15/8 and ~5.77.
    """

    R: float
    x: float
    y: float
    grid: RadialGrid
    values: np.ndarray
    derivative: np.ndarray
    second: np.ndarray

    @property
    def support(self):
        return (self.x - self.R, self.y + self.R)


def cutoff_chi(R: float, x: float, y: float, grid: RadialGrid) -> CutoffChi:
    """Sample chi(t/R) on the grid, enforcing the annulus parameter inequalities."""
    if R <= 0:
        raise DomainError("R must be > 0")
    if not x > 2.0 * R:
        raise DomainError(f"annulus cutoff requires x > 2R, got x = {x}, R = {R}")
    if not y > x + 2.0 * R:
        raise DomainError(f"annulus cutoff requires y > x + 2R, got y = {y}, x = {x}, R = {R}")
    if y + R >= grid.t_max:
        raise SupportError(f"cutoff support reaches {y + R} but T_max = {grid.t_max}")
    s = grid.nodes / R
    s_lo, s_hi = x / R, y / R
    up = s - (s_lo - 1.0)
    down = (s_hi + 1.0) - s
    values = np.where(s < s_lo, smoothstep(up), np.where(s > s_hi, smoothstep(down), 1.0))
    values = np.where((s < s_lo - 1.0) | (s > s_hi + 1.0), 0.0, values)
    deriv = np.where(
        (s >= s_lo - 1.0) & (s <= s_lo),
        smoothstep_prime(up),
        np.where((s >= s_hi) & (s <= s_hi + 1.0), -smoothstep_prime(down), 0.0),
    )
    second = np.where(
        (s >= s_lo - 1.0) & (s <= s_lo),
        smoothstep_second(up),
        np.where((s >= s_hi) & (s <= s_hi + 1.0), smoothstep_second(down), 0.0),
    )
    assert float(np.max(np.abs(deriv))) <= SMOOTHSTEP_SLOPE + 1e-12
    assert float(np.max(np.abs(second))) <= SMOOTHSTEP_CURVATURE + 1e-9
    return CutoffChi(R=float(R), x=float(x), y=float(y), grid=grid, values=values,
                     derivative=deriv, second=second)


def default_chi_schedule(i: int):
    """Annulus parameters R_i = 2^i, x_i = 3 * 2^i, y_i = 2 x_i."""
    r = 2.0**i
    return r, 3.0 * r, 6.0 * r


# ---------------------------------------------------------------------------
# warped-end test spinors and their exact residuals
# ---------------------------------------------------------------------------


def warped_test_spinor(
    lam: float, T: float, grid: RadialGrid, profile: WarpingProfile, sign: int = 1
) -> RadialSection:
    """Oscillating plateau section u = eta_T(t) exp(-sign i lam t)."""
    eta = cutoff_eta(T, grid)
    phase = np.exp(-1j * sign * lam * grid.nodes)
    return RadialSection(eta.values * phase, grid, radial_density(profile, grid.nodes))


def dirac_residual_exact(
    lam: float, T: float, grid: RadialGrid, profile: WarpingProfile, sign: int = 1
) -> RadialSection:
    """Closed-form radial coefficient of (D - lam) applied to the test spinor.

    Equals sign * i (a eta_T + eta_T') exp(-sign i lam t); the oscillation
    cancels exactly, leaving only the connection and ramp terms.
    """
    eta = cutoff_eta(T, grid)
    a = np.asarray(connection_coefficient(profile, grid.nodes))
    phase = np.exp(-1j * sign * lam * grid.nodes)
    values = sign * 1j * (a * eta.values + eta.derivative) * phase
    return RadialSection(values, grid, radial_density(profile, grid.nodes))


def weyl_quotient_p(
    lam: float,
    T: float,
    p,
    grid: RadialGrid,
    profile: WarpingProfile,
    sign: int = 1,
):
    """Weyl quotient ||(D - lam) psi_T||_p / ||psi_T||_p and its closed-form bound.

    For p = 1 and nondecreasing f the analytic bound
    7 f^(n-1)(4T) / (T f^(n-1)(2T)) is returned alongside; otherwise the bound
    slot is None (a notice is emitted when monotonicity fails).
    """
    psi = warped_test_spinor(lam, T, grid, profile, sign)
    res = dirac_residual_exact(lam, T, grid, profile, sign)
    quotient = weighted_norm(res, p) / weighted_norm(psi, p)
    bound = None
    if p == 1:
        if profile_is_nondecreasing(profile):
            bound = 7.0 * math.exp(
                log_radial_density(profile, 4.0 * T) - log_radial_density(profile, 2.0 * T)
            ) / T
        else:
            warnings.warn(
                "analytic quotient bound suppressed: profile is not nondecreasing",
                UserWarning,
                stacklevel=2,
            )
    return quotient, bound


def conjugated_test_spinor(
    z: complex, T: float, grid: RadialGrid, profile: WarpingProfile, sign: int = 1
):
    """Weight-conjugated section u = eta_T f^(-(n-1)/2) e^(-sign i z t) and residual.

    The conjugation makes the residual exact for every profile:
    (D - z) u = sign * i * f^(-(n-1)/2) eta_T' e^(-sign i z t).  When the
    common magnitude leaves floating-point range, both sections are scaled by
    a shared factor recorded in ``log_scale`` (quotients are unaffected).
    """
    eta = cutoff_eta(T, grid)
    t = grid.nodes
    logmag = -0.5 * np.asarray(log_radial_density(profile, t)) + sign * z.imag * t
    peak = float(logmag.max())
    shift = peak if abs(peak) > _LOG_GUARD else 0.0
    mag = np.exp(logmag - shift)
    phase = np.exp(-1j * sign * z.real * t)
    rho = radial_density(profile, t)
    section = RadialSection(eta.values * mag * phase, grid, rho, log_scale=shift)
    residual = RadialSection(sign * 1j * eta.derivative * mag * phase, grid, rho, log_scale=shift)
    return section, residual


def conjugated_quotient(
    z: complex, T: float, p, grid: RadialGrid, profile: WarpingProfile, sign: int = 1
) -> float:
    section, residual = conjugated_test_spinor(z, T, grid, profile, sign)
    return weighted_norm(residual, p) / weighted_norm(section, p)


# ---------------------------------------------------------------------------
# spectral region map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuotientTrace:
    """One parameter sweep: quotients, optional analytic bounds, fitted slope."""

    params: tuple
    quotients: tuple
    bounds: Optional[tuple]
    slope: float


@dataclass(frozen=True)
class RegionCell:
    z: complex
    quotients: tuple
    slope: float
    classification: str


def _fit_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    good = np.isfinite(y) & (y > 0)
    if good.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[good]), np.log(y[good]), 1)[0])


def spectral_region_map(
    profile: WarpingProfile,
    p,
    z_values: Sequence[complex],
    t_list: Sequence[float],
    grid: RadialGrid,
    slope_threshold: float = -0.5,
    sign: int = 1,
):
    """Classify each z as 'decays' or 'stalls' from the T-sweep of quotients.

    'decays' needs a fitted log-log slope <= slope_threshold and a
    monotonically decreasing tail (last half of the sweep).  Fewer than four
    sweep points cannot be classified and raise a domain error.
    """
    t_arr = [float(T) for T in t_list]
    if len(t_arr) < 4 or any(b <= a for a, b in zip(t_arr, t_arr[1:])):
        raise DomainError("region map needs an increasing T list with >= 4 entries (inconclusive otherwise)")
    cells = []
    for z in z_values:
        z = complex(z)
        quotients = [conjugated_quotient(z, T, p, grid, profile, sign) for T in t_arr]
        slope = _fit_slope(t_arr, quotients)
        tail = quotients[len(quotients) // 2 :]
        monotone = all(b <= a * (1 + 1e-12) for a, b in zip(tail, tail[1:]))
        decays = bool(slope <= slope_threshold and monotone)
        cells.append(
            RegionCell(
                z=z,
                quotients=tuple(quotients),
                slope=slope,
                classification="decays" if decays else "stalls",
            )
        )
    return cells


# ---------------------------------------------------------------------------
# generalized Weyl criterion
# ---------------------------------------------------------------------------


def build_eta_i(lam: float, chi: CutoffChi, grid: RadialGrid) -> RadialSection:
    """Oscillating annulus section u = chi(t / R) exp(i sqrt(lam) t)."""
    if lam < 0:
        raise DomainError("lam must be >= 0")
    if chi.grid is not grid and (chi.grid.h != grid.h or chi.grid.m != grid.m):
        raise DomainError("cutoff was sampled on a different grid")
    u = chi.values * np.exp(1j * math.sqrt(lam) * grid.nodes)
    return RadialSection(u, grid)


def generalized_weyl_quotient(
    lam: float, section: RadialSection, profile: WarpingProfile, grid: RadialGrid = None
) -> float:
    """The criterion functional ||psi||_inf ||(D^2 - lam) psi||_1 / ||psi||_2^2."""
    grid = grid or section.grid
    u = section.values
    if not np.any(u):
        raise DomainError("zero section")
    resid = apply_dirac_squared(section, profile)
    resid = RadialSection(resid.values - lam * u, grid, resid.rho)
    sup = float(np.max(np.abs(u)))
    l1 = weighted_norm(resid, 1)
    l2 = weighted_norm(RadialSection(u, grid, resid.rho), 2)
    return sup * l1 / l2**2


@dataclass(frozen=True)
class EtaFamilyRecord:
    """One annulus scale of the criterion sweep, with the decomposition terms.

    ``bound_terms`` reports the three raw ingredients of the upper estimate
    (sup |q| on the support, 1/R_i, and the scalar cutoff quotient); the
    absolute constants multiplying the first two are left at 1 since they are
    not pinned by the construction.
    """

    i: int
    R: float
    quotient: float
    bound_terms: dict


def eta_family_quotients(
    lam: float,
    profile: WarpingProfile,
    grid: RadialGrid,
    i_list: Sequence[int],
    schedule=default_chi_schedule,
) -> list:
    """Sweep the generalized Weyl quotient over the annulus schedule."""
    op0 = assemble_operator(profile, grid, SCALAR_LAPLACIAN)
    records = []
    for i in i_list:
        r_i, x_i, y_i = schedule(i)
        chi = cutoff_chi(r_i, x_i, y_i, grid)
        eta = build_eta_i(lam, chi, grid)
        quotient = generalized_weyl_quotient(lam, eta, profile, grid)

        t = grid.nodes
        on_support = (t >= chi.support[0]) & (t <= chi.support[1])
        sup_q = float(np.max(np.abs(np.asarray(effective_potential(profile, t))[on_support])))
        rho = radial_density(profile, t)
        delta_eta = op0.apply(eta.values) - lam * eta.values
        eta_term = float(
            np.sum(np.abs(delta_eta) * rho) * grid.h / (np.sum(np.abs(eta.values) ** 2 * rho) * grid.h)
        )
        records.append(
            EtaFamilyRecord(
                i=int(i),
                R=r_i,
                quotient=quotient,
                bound_terms={"sup_q_on_support": sup_q, "inv_R": 1.0 / r_i, "cutoff_quotient": eta_term},
            )
        )
    return records


def leibniz_identity_check(
    eta_values,
    phi_coeff: RadialSection,
    lam: float,
    profile: WarpingProfile,
    grid: RadialGrid,
) -> float:
    """Residual of the product rule (D^2 - lam)(eta phi) = eta D^2 phi - 2 eta' phi' + (Delta eta - lam eta) phi.

    The left side uses the assembled D^2 on the product; the right side is
    assembled termwise with the scalar weighted Laplacian and central
    derivatives.  Returns the sup-norm defect over the interior rows (the two
    end rows encode the Dirichlet extension, not the identity), which is
    O(h^2) for smooth data.
    """
    eta = np.asarray(eta_values, dtype=complex)
    if eta.shape != (grid.m,):
        raise DomainError("eta must be sampled on the grid")
    phi = phi_coeff.values
    product = RadialSection(eta * phi, grid)
    lhs = apply_dirac_squared(product, profile).values - lam * eta * phi

    d2phi = apply_dirac_squared(phi_coeff, profile).values
    op0 = assemble_operator(profile, grid, SCALAR_LAPLACIAN)
    eta_p = _central_derivative(eta, grid.h)
    phi_p = _central_derivative(phi, grid.h)
    rhs = eta * d2phi - 2.0 * eta_p * phi_p + (op0.apply(eta) - lam * eta) * phi
    return float(np.max(np.abs(lhs - rhs)[1:-1]))


@dataclass(frozen=True)
class HarmonicFamilyCertificate:
    """Constant far-field section and the sup of |q| certifying D^2 phi_R -> 0."""

    R: float
    section: RadialSection
    certificate: float


def asymptotically_harmonic_family(
    profile: WarpingProfile, R: float, grid: RadialGrid, n_audit: int = 4097
) -> HarmonicFamilyCertificate:
    """Unit section on [R, T_max] with certificate sup_{t >= R} |q(t)|.

    The section is constant with unit modulus and zero radial derivative, so
    |D^2 phi_R| = |q| on its support; the certificate decays with R exactly
    when the effective potential does.
    """
    if not 0 <= R < grid.t_max:
        raise DomainError(f"R must lie in [0, T_max), got {R}")
    t = grid.nodes
    values = np.where(t >= R, 1.0 + 0.0j, 0.0j)
    audit = np.linspace(R, grid.t_max, n_audit)
    certificate = float(np.max(np.abs(np.asarray(effective_potential(profile, audit)))))
    return HarmonicFamilyCertificate(
        R=float(R),
        section=RadialSection(values, grid, radial_density(profile, t)),
        certificate=certificate,
    )


@dataclass(frozen=True)
class WangScalingResult:
    """1/R-scaling audit of the oscillating annulus family.

    ``residual_ratios`` holds ||(Delta - lam) eta_R||_1 / ||eta_R||_1 and
    ``gradient_ratios`` the envelope-derivative ratio |||eta_R|'||_1 /
    ||eta_R||_1 (the oscillation contributes a scale-free term and is not part
    of the audited estimate).  Pass requires both log-log slopes in
    [-1.3, -0.7].
    """

    r_list: tuple
    residual_ratios: tuple
    gradient_ratios: tuple
    residual_slope: float
    gradient_slope: float
    passed: bool


def wang_scaling_check(
    lam: float,
    r_list: Sequence[float],
    profile: WarpingProfile,
    grid: RadialGrid,
    slope_range=(-1.3, -0.7),
) -> WangScalingResult:
    """Measure the c/R scaling of the scalar cutoff estimates on the annulus family."""
    op0 = assemble_operator(profile, grid, SCALAR_LAPLACIAN)
    rho = radial_density(profile, grid.nodes)
    res_ratios = []
    grad_ratios = []
    for R in r_list:
        chi = cutoff_chi(R, 3.0 * R, 6.0 * R, grid)
        eta = build_eta_i(lam, chi, grid)
        l1 = float(np.sum(np.abs(eta.values) * rho) * grid.h)
        resid = op0.apply(eta.values) - lam * eta.values
        res_ratios.append(float(np.sum(np.abs(resid) * rho) * grid.h) / l1)
        env_prime = chi.derivative / R
        grad_ratios.append(float(np.sum(np.abs(env_prime) * rho) * grid.h) / l1)
    s_res = _fit_slope(r_list, res_ratios)
    s_grad = _fit_slope(r_list, grad_ratios)
    lo, hi = slope_range
    passed = bool(lo <= s_res <= hi and lo <= s_grad <= hi)
    return WangScalingResult(
        r_list=tuple(float(R) for R in r_list),
        residual_ratios=tuple(res_ratios),
        gradient_ratios=tuple(grad_ratios),
        residual_slope=s_res,
        gradient_slope=s_grad,
        passed=passed,
    )
