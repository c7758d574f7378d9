"""Heat semigroup and resolvent calculus for the discretized operators.

Everything is driven by one full eigendecomposition of the symmetric
tridiagonal matrix per operator (memoized, write-once): semigroups, resolvent
powers, and the Laplace-transform cross-check all share it.  Matrices act on
flat coordinates w = (rho h)^(1/2) u; kernels against the measure rho dt are
recovered by H(t_j, t_k) = E_jk / (sqrt(rho_j rho_k) h).
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaincc, gammainccinv

from .errors import DomainError, ResolventError, SlowConvergenceError
from .geometry import WarpingProfile, eval_profile, mu, windowed_volume
from .operators import (
    DIRAC_SQUARED,
    SCALAR_LAPLACIAN,
    RadialGrid,
    ReducedOperator,
    assemble_operator,
    eig_sym_tridiag,
    full_interval,
)

_decomposition_cache = weakref.WeakKeyDictionary()
_heat_cache = weakref.WeakKeyDictionary()


def spectral_decomposition(op: ReducedOperator):
    """Full (values, vectors) eigendecomposition of the operator, memoized.

    One Newton-Schulz step polishes the inverse-iteration basis to machine
    orthonormality so downstream entrywise kernel checks are not limited by
    eigenvector cross-talk.
    """
    cached = _decomposition_cache.get(op)
    if cached is not None:
        return cached
    tol = 1e-9 * max(1.0, op.scale)
    vals, vecs = eig_sym_tridiag(
        op.diag, op.offdiag, full_interval(op), tol=tol, want_vectors=True
    )
    if vals.size != op.m:
        raise ResolventError(
            f"full decomposition found {vals.size} of {op.m} eigenvalues"
        )
    # QR polish: residual cross-talk from near-degenerate band-edge pairs only
    # rotates within those pairs, which functional calculus cannot see.
    vecs, r = np.linalg.qr(vecs)
    vecs = vecs * np.sign(np.diag(r))
    result = (vals, vecs)
    _decomposition_cache[op] = result
    return result


@dataclass(eq=False)
class SemigroupMatrix:
    """Dense flat-coordinate e^(-tau L) built from the full eigendecomposition."""

    tau: float
    matrix: np.ndarray
    source: ReducedOperator
    commutation_residual: float


def heat_matrix(op: ReducedOperator, tau: float) -> SemigroupMatrix:
    """Spectral-calculus semigroup E = V exp(-tau Lambda) V^T (cached per tau)."""
    if tau <= 0:
        raise DomainError("tau must be > 0")
    per_op = _heat_cache.setdefault(op, {})
    key = float(tau)
    if key in per_op:
        return per_op[key]
    vals, vecs = spectral_decomposition(op)
    e = (vecs * np.exp(-tau * vals)) @ vecs.T
    e = 0.5 * (e + e.T)
    le = _tridiag_times_dense(op.diag, op.offdiag, e)
    resid = float(np.max(np.abs(le - le.T)))
    sm = SemigroupMatrix(tau=key, matrix=e, source=op, commutation_residual=resid)
    per_op[key] = sm
    return sm


def _tridiag_times_dense(diag, offdiag, m):
    out = diag[:, None] * m
    out[:-1] += offdiag[:, None] * m[1:]
    out[1:] += offdiag[:, None] * m[:-1]
    return out


def kernel_matrix(op: ReducedOperator, tau: float) -> np.ndarray:
    """Heat kernel H(t_j, t_k, tau) against the measure rho dt."""
    e = heat_matrix(op, tau).matrix
    s = np.sqrt(op.rho)
    return e / (s[:, None] * s[None, :] * op.h)


def heat_kernel_value(op: ReducedOperator, tau: float, j: int, k: int) -> float:
    """Single kernel entry H(t_j, t_k, tau); symmetric in (j, k)."""
    if not (0 <= j < op.m and 0 <= k < op.m):
        raise DomainError("kernel indices out of range")
    e = heat_matrix(op, tau).matrix
    return float(e[j, k] / (math.sqrt(op.rho[j] * op.rho[k]) * op.h))


# ---------------------------------------------------------------------------
# domination and p -> p growth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DominationResult:
    """Entrywise comparison |H_{D^2}| <= e^(K1 tau) h_Delta across the tau list."""

    k1: float
    tau_list: tuple
    max_violation: float
    max_normalized_violation: float
    passed: bool


def domination_check(
    profile: WarpingProfile,
    grid: RadialGrid,
    tau_list: Sequence[float],
    tol_rel: float = 1e-8,
) -> DominationResult:
    """Check that the scalar heat kernel (times e^(K1 tau)) dominates entrywise."""
    op2 = assemble_operator(profile, grid, DIRAC_SQUARED)
    op0 = assemble_operator(profile, grid, SCALAR_LAPLACIAN)
    worst = -math.inf
    worst_norm = -math.inf
    for tau in tau_list:
        h2 = np.abs(kernel_matrix(op2, tau))
        h0 = math.exp(op2.k1 * tau) * kernel_matrix(op0, tau)
        scale = float(np.max(h0))
        violation = float(np.max(h2 - h0))
        worst = max(worst, violation)
        worst_norm = max(worst_norm, violation / scale)
    return DominationResult(
        k1=op2.k1,
        tau_list=tuple(float(t) for t in tau_list),
        max_violation=worst,
        max_normalized_violation=worst_norm,
        passed=bool(worst_norm <= tol_rel),
    )


@dataclass(frozen=True)
class PNormGrowthResult:
    p: object
    k1: float
    tau_list: tuple
    values: tuple
    max_value: float
    passed: bool


def pnorm_growth_check(
    op: ReducedOperator, tau_list: Sequence[float], p, tol: float = 1e-8
) -> PNormGrowthResult:
    """Audit ||e^(-tau L)||_{p->p, rho} <= e^(K1 tau) for p in {1, inf}.

    The weighted operator norm is evaluated on the matrix acting in weighted
    coordinates; the p = inf case is the transpose-duality surrogate of the
    dual-of-L^1 definition.
    """
    if p not in (1, math.inf, np.inf):
        raise DomainError("p must be 1 or inf")
    s = np.sqrt(op.rho)
    values = []
    for tau in tau_list:
        if tau == 0:
            values.append(1.0)
            continue
        e = heat_matrix(op, tau).matrix
        if p == 1:
            # max_k sum_j |E^w_jk| rho_j / rho_k with E^w_jk = E_jk s_k / s_j
            norm = float(np.max((np.abs(e) * (s[:, None] / s[None, :])).sum(axis=0)))
        else:
            # max_j sum_k |E^w_jk|; coincides with the p = 1 norm by the
            # symmetry of E (transpose duality)
            norm = float(np.max((np.abs(e) * (s[None, :] / s[:, None])).sum(axis=1)))
        values.append(norm * math.exp(-op.k1 * tau))
    worst = max(values)
    return PNormGrowthResult(
        p="inf" if p != 1 else 1,
        k1=op.k1,
        tau_list=tuple(float(t) for t in tau_list),
        values=tuple(values),
        max_value=worst,
        passed=bool(worst <= 1.0 + tol),
    )


# ---------------------------------------------------------------------------
# kernel bound fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSampleSpec:
    """Declared sample set for kernel-bound fits.

    Centers are taken on a fixed physical stride so fits are comparable
    across grid refinements; entries below ``noise_floor_rel`` times the
    per-tau kernel maximum are excluded (they sit at eigendecomposition
    roundoff, not at kernel scale).
    """

    sample_dt: float = 0.5
    d_max_fraction: float = 0.8
    noise_floor_rel: float = 1e-10

    def indices(self, grid_like) -> np.ndarray:
        h, m = grid_like.h, grid_like.m
        t_max = (m + 1) * h
        raw = np.arange(self.sample_dt, t_max - self.sample_dt / 2, self.sample_dt)
        idx = np.unique(np.clip(np.round(raw / h).astype(int) - 1, 0, m - 1))
        return idx

    def describe(self) -> dict:
        return {
            "sample_dt": self.sample_dt,
            "d_max_fraction": self.d_max_fraction,
            "noise_floor_rel": self.noise_floor_rel,
        }


@dataclass(frozen=True)
class KernelBoundFit:
    """Fitted constants of one kernel bound form and the sample description."""

    form: str
    constants: dict
    max_violation: float
    passed: bool
    sample: dict


def ricci_lower_bound(profile: WarpingProfile, t_max: float, n_audit: int = 4097) -> float:
    """K0 = sup of max(0, (n-1) f''/f) on [0, t_max], so Ric >= -K0 there."""
    t = np.linspace(0.0, t_max, n_audit)
    f, _, fpp = eval_profile(profile, t)
    return float(np.max(np.clip((profile.n - 1) * fpp / f, 0.0, None)))


def _gather_kernel_samples(op, tau_list, spec):
    """Flattened (log|H|, d, tau, j-index, k-index) arrays over the sample set."""
    idx = spec.indices(op)
    t = (idx + 1) * op.h
    d = np.abs(t[:, None] - t[None, :])
    t_max = (op.m + 1) * op.h
    base_mask = d <= spec.d_max_fraction * t_max
    rows = []
    for tau in tau_list:
        sub = np.abs(kernel_matrix(op, tau))[np.ix_(idx, idx)]
        floor = spec.noise_floor_rel * float(sub.max())
        mask = base_mask & (sub >= floor)
        jj, kk = np.nonzero(mask)
        rows.append(
            (np.log(sub[mask]), d[mask], np.full(mask.sum(), float(tau)), idx[jj], idx[kk])
        )
    logh = np.concatenate([r[0] for r in rows])
    dd = np.concatenate([r[1] for r in rows])
    tt = np.concatenate([r[2] for r in rows])
    ji = np.concatenate([r[3] for r in rows])
    ki = np.concatenate([r[4] for r in rows])
    return logh, dd, tt, ji, ki


def gaussian_bound_fit(
    profile: WarpingProfile,
    grid: RadialGrid,
    tau_list: Sequence[float],
    delta: float = 0.05,
    spec: KernelSampleSpec = KernelSampleSpec(),
    c4_points: int = 13,
    c5_points: int = 11,
) -> KernelBoundFit:
    """Least log-violation fit of the Gaussian heat-kernel bound.

    Searches C4 in [4(1+delta), 16] and C5 in [0, 10] for the smallest C3 with

        |H(x, y, tau)| <= C3 V(x, sqrt(tau))^(-1/2) V(y, sqrt(tau))^(-1/2)
                          exp(-d^2/(C4 tau) + C5 sqrt(K0 tau) + K1 tau)

    on the declared sample set.
    """
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    op2 = assemble_operator(profile, grid, DIRAC_SQUARED)
    k0 = ricci_lower_bound(profile, grid.t_max)
    k1 = op2.k1
    logh, dd, tt, ji, ki = _gather_kernel_samples(op2, tau_list, spec)

    nodes = grid.nodes
    vol_log = {}
    for tau in sorted({float(t) for t in tau_list}):
        v = np.asarray(windowed_volume(profile, nodes, math.sqrt(tau)))
        vol_log[tau] = np.log(v)
    half_log_v = np.array(
        [0.5 * (vol_log[tau][j] + vol_log[tau][k]) for tau, j, k in zip(tt, ji, ki)]
    )

    base = logh + half_log_v - k1 * tt
    c4_grid = np.linspace(4.0 * (1.0 + delta), 16.0, c4_points)
    c5_grid = np.linspace(0.0, 10.0, c5_points)
    best = (math.inf, math.nan, math.nan)
    d2_over_t = dd * dd / tt
    sqrt_k0t = np.sqrt(k0 * tt)
    for c4 in c4_grid:
        partial = base + d2_over_t / c4
        for c5 in c5_grid:
            ln_c3 = float(np.max(partial - c5 * sqrt_k0t))
            if ln_c3 < best[0]:
                best = (ln_c3, float(c4), float(c5))
    c3 = math.exp(best[0])
    sample = spec.describe() | {"n_samples": int(dd.size), "tau_list": [float(t) for t in tau_list]}
    return KernelBoundFit(
        form="heatg",
        constants={"C3": c3, "C4": best[1], "C5": best[2], "K0": k0, "K1": k1},
        max_violation=0.0,
        passed=bool(math.isfinite(c3)),
        sample=sample,
    )


def evaluate_gaussian_bound(
    profile: WarpingProfile,
    grid: RadialGrid,
    tau_list: Sequence[float],
    c3: float,
    c4: float,
    c5: float,
    spec: KernelSampleSpec = KernelSampleSpec(),
) -> float:
    """Max log-violation of the Gaussian bound at prescribed constants."""
    op2 = assemble_operator(profile, grid, DIRAC_SQUARED)
    k0 = ricci_lower_bound(profile, grid.t_max)
    logh, dd, tt, ji, ki = _gather_kernel_samples(op2, tau_list, spec)
    nodes = grid.nodes
    vol_log = {}
    for tau in sorted({float(t) for t in tau_list}):
        vol_log[tau] = np.log(np.asarray(windowed_volume(profile, nodes, math.sqrt(tau))))
    half_log_v = np.array(
        [0.5 * (vol_log[tau][j] + vol_log[tau][k]) for tau, j, k in zip(tt, ji, ki)]
    )
    rhs = math.log(c3) - half_log_v - dd * dd / (c4 * tt) + c5 * np.sqrt(k0 * tt) + op2.k1 * tt
    return float(np.max(logh - rhs))


def mu_form_bound_fit(
    profile: WarpingProfile,
    grid: RadialGrid,
    beta: float,
    tau_list: Sequence[float],
    spec: KernelSampleSpec = KernelSampleSpec(),
    alpha_grid: np.ndarray = None,
) -> KernelBoundFit:
    """Fit (C, alpha < 0) in |H| <= C mu(x)^2 sup{tau^(-n/2), 1} e^(-beta d) e^(-(alpha+1) tau)."""
    if beta <= 0:
        raise DomainError("beta must be > 0")
    if alpha_grid is None:
        alpha_grid = np.linspace(-6.0, -0.05, 48)
    op2 = assemble_operator(profile, grid, DIRAC_SQUARED)
    logh, dd, tt, ji, ki = _gather_kernel_samples(op2, tau_list, spec)
    n = profile.n
    mu_all = np.asarray(mu(profile, grid.nodes))
    log_mu2 = 2.0 * np.log(mu_all)
    log_shape = np.log(np.maximum(tt ** (-n / 2.0), 1.0))
    base = logh - log_mu2[ji] - log_shape + beta * dd
    best = (math.inf, math.nan)
    for alpha in alpha_grid:
        ln_c = float(np.max(base + (alpha + 1.0) * tt))
        if ln_c < best[0]:
            best = (ln_c, float(alpha))
    c = math.exp(best[0])
    sample = spec.describe() | {"n_samples": int(dd.size), "tau_list": [float(t) for t in tau_list]}
    return KernelBoundFit(
        form="heat42",
        constants={"C": c, "alpha": best[1], "beta": float(beta)},
        max_violation=0.0,
        passed=bool(math.isfinite(c) and best[1] < 0),
        sample=sample,
    )


# ---------------------------------------------------------------------------
# resolvent powers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolventKernelResult:
    matrix: np.ndarray
    fit: Optional[KernelBoundFit]


def resolvent_power_kernel(
    op: ReducedOperator,
    xi: complex,
    power: int,
    profile: WarpingProfile = None,
    spec: KernelSampleSpec = KernelSampleSpec(),
) -> ResolventKernelResult:
    """Matrix (L - xi)^(-power) and the off-diagonal decay fit of its kernel.

    The fit estimates (C, eps) in |G(x, y)| <= C mu(x) mu(y) e^(-eps d) by a
    least-squares slope in log space over the declared samples; it passes when
    the decay rate eps is positive.  The fit is skipped (None) when no profile
    is supplied or too few samples are available.
    """
    if power < 1:
        raise DomainError("power must be >= 1")
    vals, vecs = spectral_decomposition(op)
    tol = 1e-9 * max(1.0, op.scale)
    gap = float(np.min(np.abs(vals - xi)))
    if gap <= 10.0 * tol:
        raise ResolventError(f"xi = {xi} is within {gap:.3g} of the spectrum")
    weights = (vals - xi) ** (-float(power))
    g = (vecs * weights) @ vecs.T

    fit = None
    if profile is not None and op.m >= 8:
        s = np.sqrt(op.rho)
        kernel = g / (s[:, None] * s[None, :] * op.h)
        idx = spec.indices(op)
        t = (idx + 1) * op.h
        d = np.abs(t[:, None] - t[None, :])
        sub = np.abs(kernel)[np.ix_(idx, idx)]
        t_max = (op.m + 1) * op.h
        d_max = spec.d_max_fraction * t_max
        # the decay rate is a far-field quantity: the polynomial prefactor of
        # the power kernel would contaminate a near-diagonal regression
        d_min = 0.2 * d_max
        mask = (d <= d_max) & (d >= d_min) & (sub >= spec.noise_floor_rel * sub.max())
        mu_s = np.asarray(mu(profile, t))
        log_mu = np.log(mu_s)
        y = np.log(sub[mask]) - (log_mu[:, None] + log_mu[None, :])[mask]
        dd = d[mask]
        if np.unique(dd).size >= 4:
            slope = float(np.polyfit(dd, y, 1)[0])
            eps = -slope
            c = float(np.exp(np.max(y + eps * dd)))
            fit = KernelBoundFit(
                form="res1",
                constants={"C": c, "eps": eps, "power": int(power), "xi": str(xi)},
                max_violation=0.0,
                passed=bool(eps > 0),
                sample=spec.describe() | {"n_samples": int(dd.size), "d_min": d_min},
            )
    return ResolventKernelResult(matrix=g, fit=fit)


def resolvent_laplace_check(
    op: ReducedOperator,
    alpha: float,
    power: int,
    tau_max: float,
    steps: int = 64,
) -> float:
    """Validate (L - alpha)^(-power/2) = 1/Gamma(power/2) int_0^inf e^(-tL) t^(power/2-1) e^(alpha t) dt.

    Both sides share the eigenbasis, so the comparison reduces to the scalar
    transforms on the spectrum; the integral is evaluated by Gauss-Legendre
    panels geometrically graded towards 0 and truncated at tau_max.  The
    normalizing constant 1/Gamma(power/2) is pinned by the 1x1 oracles.
    Returns the maximal relative error over the spectrum.
    """
    if power < 2 or power % 2 != 0:
        raise DomainError("power must be a positive even integer")
    if steps < 4:
        raise DomainError("steps must be >= 4")
    vals, _ = spectral_decomposition(op)
    s = power / 2.0
    gap = float(vals.min()) - alpha
    if gap <= 0:
        raise ResolventError(f"alpha = {alpha} is not strictly below the spectrum")
    tail = float(gammaincc(s, gap * tau_max))
    if tail > 1e-9:
        needed = float(gammainccinv(s, 1e-10) / gap)
        raise SlowConvergenceError(
            f"truncation at tau_max = {tau_max} leaves a relative tail {tail:.3g}; "
            f"use tau_max >= {needed:.3g}",
            required_tau_max=needed,
        )

    x16, w16 = np.polynomial.legendre.leggauss(16)
    edges = np.concatenate(([0.0], np.geomspace(tau_max * 1e-12, tau_max, steps)))
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x16[None, :]).ravel()
    wts = (half[:, None] * w16[None, :]).ravel()

    decay = np.exp(-np.outer(vals - alpha, nodes))
    integrand = nodes ** (s - 1.0) * wts
    integral = decay @ integrand / math.gamma(s)
    exact = (vals - alpha) ** (-s)
    return float(np.max(np.abs(integral - exact) / np.abs(exact)))
