"""Warping profiles, radial volumes, and volume-growth audits for the model end.

The model manifold is N x [0, oo) with metric f(t)^2 g_N + dt^2.  The
cross-section volume is normalized to 1, so every weighted quantity reduces
to integrals against the radial density rho(t) = f(t)^(n-1).  Metric balls
are replaced by their radial shadow [t0 - r, t0 + r] (clamped at 0), which
has the same growth class as the true balls in this geometry.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, PreconditionError


class QuadratureAccuracyWarning(UserWarning):
    """The quadrature step does not comfortably resolve the profile variation."""


# ---------------------------------------------------------------------------
# warping profiles
# ---------------------------------------------------------------------------


def _as_same_kind(t, *values):
    """Return floats for scalar input, arrays otherwise."""
    if np.ndim(t) == 0:
        out = tuple(float(np.asarray(v).reshape(-1)[0]) for v in values)
    else:
        out = tuple(np.asarray(v, dtype=float) for v in values)
    return out if len(out) > 1 else out[0]


@dataclass(frozen=True)
class PolynomialProfile:
    """f(t) = (1 + t)**k with k >= 0."""

    k: float
    n: int
    family: str = field(default="polynomial", init=False)

    def __post_init__(self):
        if self.k < 0:
            raise DomainError(f"polynomial profile needs k >= 0, got {self.k}")
        _check_dim(self.n)

    def _eval(self, t):
        base = 1.0 + t
        f = base**self.k
        fp = self.k * base ** (self.k - 1) if self.k != 0 else np.zeros_like(base)
        fpp = (
            self.k * (self.k - 1) * base ** (self.k - 2)
            if self.k not in (0.0, 1.0)
            else np.zeros_like(base)
        )
        return f, fp, fpp

    def _log_f(self, t):
        return self.k * np.log1p(t)

    def params(self):
        return {"k": self.k}


@dataclass(frozen=True)
class QuasiPolynomialProfile:
    """f(t)**(n-1) = exp(beta * ln(1+t)**2) with beta > 0."""

    beta: float
    n: int
    family: str = field(default="quasi_polynomial", init=False)

    def __post_init__(self):
        if self.beta <= 0:
            raise DomainError(f"quasi-polynomial profile needs beta > 0, got {self.beta}")
        _check_dim(self.n)

    def _eval(self, t):
        w = np.log1p(t)
        c = self.beta / (self.n - 1)
        g = c * w * w
        gp = 2.0 * c * w / (1.0 + t)
        gpp = 2.0 * c * (1.0 - w) / (1.0 + t) ** 2
        f = np.exp(g)
        return f, gp * f, (gpp + gp * gp) * f

    def _log_f(self, t):
        w = np.log1p(t)
        return self.beta / (self.n - 1) * w * w

    def params(self):
        return {"beta": self.beta}


@dataclass(frozen=True)
class ExponentialProfile:
    """f(t) = exp(alpha * t) with alpha > 0."""

    alpha: float
    n: int
    family: str = field(default="exponential", init=False)

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError(f"exponential profile needs alpha > 0, got {self.alpha}")
        _check_dim(self.n)

    def _eval(self, t):
        f = np.exp(self.alpha * t)
        return f, self.alpha * f, self.alpha * self.alpha * f

    def _log_f(self, t):
        return self.alpha * np.asarray(t, dtype=float)

    def params(self):
        return {"alpha": self.alpha}


@dataclass(eq=False)
class TabulatedProfile:
    """Profile interpolated from strictly positive samples of f on a grid.

    A clamped cubic spline is used (end slopes estimated by one-sided
    second-order differences); first and second derivatives come from the
    spline.  Evaluation outside the tabulated range is a domain error.
    """

    t_samples: np.ndarray
    f_samples: np.ndarray
    n: int
    family: str = field(default="tabulated", init=False)

    def __post_init__(self):
        from scipy.interpolate import CubicSpline

        t = np.asarray(self.t_samples, dtype=float)
        f = np.asarray(self.f_samples, dtype=float)
        if t.ndim != 1 or t.size < 4 or f.shape != t.shape:
            raise DomainError("tabulated profile needs >= 4 matching (t, f) samples")
        if not np.all(np.diff(t) > 0):
            raise DomainError("tabulated t samples must be strictly increasing")
        if t[0] < 0:
            raise DomainError("tabulated t samples must be >= 0")
        if not np.all(f > 0):
            raise DomainError("tabulated f samples must be strictly positive")
        _check_dim(self.n)
        self.t_samples = t
        self.f_samples = f
        s0 = (-3 * f[0] + 4 * f[1] - f[2]) / (t[2] - t[0])
        s1 = (3 * f[-1] - 4 * f[-2] + f[-3]) / (t[-1] - t[-3])
        self._spline = CubicSpline(t, f, bc_type=((1, s0), (1, s1)))

    def _eval(self, t):
        if np.any(t < self.t_samples[0] - 1e-12) or np.any(t > self.t_samples[-1] + 1e-12):
            raise DomainError("evaluation outside the tabulated range")
        return self._spline(t), self._spline(t, 1), self._spline(t, 2)

    def _log_f(self, t):
        return np.log(self._eval(t)[0])

    def params(self):
        return {"t_min": float(self.t_samples[0]), "t_max": float(self.t_samples[-1])}


WarpingProfile = Union[PolynomialProfile, QuasiPolynomialProfile, ExponentialProfile, TabulatedProfile]

_FAMILIES = {
    "polynomial": PolynomialProfile,
    "quasi_polynomial": QuasiPolynomialProfile,
    "exponential": ExponentialProfile,
    "tabulated": TabulatedProfile,
}


def _check_dim(n):
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise DomainError(f"manifold dimension n must be an integer >= 2, got {n!r}")


def warping_profile(family: str, n: int, **params) -> WarpingProfile:
    """Factory used by the harness config layer."""
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise DomainError(f"unknown profile family {family!r}") from None
    return cls(n=n, **params)


def eval_profile(profile: WarpingProfile, t):
    """Return (f, f', f'') at t; vectorized over array input.

    Derivatives are analytic for the closed-form families and spline
    derivatives for tabulated profiles.  Negative t is a domain error.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"profile argument must be finite and >= 0, got {t!r}")
    f, fp, fpp = profile._eval(arr)
    return _as_same_kind(t, f, fp, fpp)


def radial_density(profile: WarpingProfile, t):
    """Weighted measure density rho(t) = f(t)**(n-1) (cross-section volume = 1)."""
    f, _, _ = eval_profile(profile, t)
    return f ** (profile.n - 1)


def log_radial_density(profile: WarpingProfile, t):
    """log rho(t); avoids overflow for fast-growing profiles."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise DomainError("t must be >= 0")
    return _as_same_kind(t, (profile.n - 1) * profile._log_f(arr))


def profile_is_nondecreasing(profile: WarpingProfile, t_max: float = None) -> bool:
    """Check monotonicity of f (analytically for closed forms, sampled otherwise)."""
    if isinstance(profile, (PolynomialProfile, QuasiPolynomialProfile, ExponentialProfile)):
        return True
    return bool(np.all(np.diff(profile.f_samples) >= 0))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_MAX_PANELS = 400_000


def _simpson_panels(length: float, max_step: float) -> int:
    n = int(math.ceil(max(length, 1e-300) / max_step))
    n = max(n, 8)
    n = min(n, _MAX_PANELS)
    return n + (n % 2)


def _density_rows(profile, a, b, max_step):
    """Composite-Simpson integrals of rho over rows of intervals [a_i, b_i]."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    length = np.maximum(b - a, 0.0)
    n = _simpson_panels(float(length.max()), max_step)
    s = np.linspace(0.0, 1.0, n + 1)
    x = a[:, None] + length[:, None] * s[None, :]
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    rho = radial_density(profile, x)
    return (rho * w).sum(axis=1) * (length / (3.0 * n))


def _warn_if_underresolved(profile, t_max: float, step: float):
    t = np.linspace(0.0, max(t_max, step), 257)
    f, fp, _ = eval_profile(profile, t)
    ratio = np.abs(fp) * step / f
    if np.any(ratio > 0.1):
        worst = float(t[int(np.argmax(ratio))])
        warnings.warn(
            f"quadrature step {step:g} under-resolves the profile near t={worst:g} "
            f"(|f'|h/f = {float(ratio.max()):.3g} > 0.1)",
            QuadratureAccuracyWarning,
            stacklevel=3,
        )


def ball_volume(profile: WarpingProfile, r: float, max_step: float = 0.02) -> float:
    """V(r) = integral of rho over [0, r] by composite Simpson quadrature."""
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r}")
    if r == 0:
        return 0.0
    _warn_if_underresolved(profile, r, min(max_step, r / 8))
    return float(_density_rows(profile, 0.0, r, max_step)[0])


def windowed_volume(profile: WarpingProfile, t0, r: float, max_step: float = 0.02):
    """Radial-shadow ball volume: integral of rho over [max(0, t0-r), t0+r]."""
    t0 = np.asarray(t0, dtype=float)
    if np.any(t0 < 0) or r < 0:
        raise DomainError("center and radius must be >= 0")
    lo = np.clip(t0 - r, 0.0, None)
    hi = t0 + r
    vals = _density_rows(profile, lo, hi, max_step)
    return _as_same_kind(t0, vals)


def mu(profile: WarpingProfile, t0, max_step: float = 0.02):
    """Normalization mu(t0) = V(t0, 1)**(-1/2) entering kernel-decay bounds."""
    v = windowed_volume(profile, t0, 1.0, max_step)
    return _as_same_kind(t0, np.asarray(v, dtype=float) ** -0.5)


# ---------------------------------------------------------------------------
# growth audits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthVerdict:
    """Outcome of a uniformly-subexponential volume growth audit.

    ``fitted_c`` is the minimal admissible constant over the audit grid
    (clamped to >= 1), ``divergence_trend`` the slope of log fitted_c against
    log r_max over nested audits.  The audit passes when the constant is
    finite and stops growing as the radius range is extended.
    """

    epsilon: float
    fitted_c: float
    r_max: float
    passed: bool
    divergence_trend: float


def _loglog_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    good = (x > 0) & (y > 0) & np.isfinite(y)
    if good.sum() < 2:
        return math.inf
    return float(np.polyfit(np.log(x[good]), np.log(y[good]), 1)[0])


def check_subexponential(
    profile: WarpingProfile,
    epsilon: float,
    r_grid: Sequence[float],
    center_grid: Sequence[float],
    slope_tol: float = 0.1,
    max_step: float = 0.05,
) -> GrowthVerdict:
    """Audit V(t0, r) <= C * V(t0, 1) * exp(eps * r) over a finite grid.

    The sup over all centers is approximated by the supplied center grid;
    nested prefixes of the radius grid provide the stabilization trend.
    """
    if epsilon <= 0:
        raise DomainError("epsilon must be > 0")
    r = np.sort(np.asarray(r_grid, dtype=float))
    centers = np.asarray(center_grid, dtype=float)
    if r.size == 0 or centers.size == 0:
        raise DomainError("radius and center grids must be nonempty")

    v1 = np.asarray(windowed_volume(profile, centers, 1.0, max_step))
    ratios = np.empty((centers.size, r.size))
    for i, radius in enumerate(r):
        v = np.asarray(windowed_volume(profile, centers, float(radius), max_step))
        ratios[:, i] = v / (v1 * math.exp(min(epsilon * radius, 700.0)))
    prefix = np.maximum(np.maximum.accumulate(ratios.max(axis=0)), 1.0)

    tail = max(3, r.size // 4)
    trend = _loglog_slope(r[-tail:], prefix[-tail:])
    fitted = float(prefix[-1])
    passed = bool(np.isfinite(fitted) and trend <= slope_tol)
    return GrowthVerdict(
        epsilon=float(epsilon),
        fitted_c=fitted,
        r_max=float(r[-1]),
        passed=passed,
        divergence_trend=trend,
    )


@dataclass(frozen=True)
class GrowthConditionResult:
    """Samples of g(t) = f^(n-1)(2t) / (t f^(n-1)(t)) and the tail verdict."""

    t: np.ndarray
    values: np.ndarray
    to_zero: bool


def check_growth_condition(profile: WarpingProfile, t_list: Sequence[float]) -> GrowthConditionResult:
    """Evaluate the warped-end decay quotient g and classify its tail.

    Verdict rule: the last quarter of the samples must be non-increasing and
    the final value must drop below 0.1x the first value.
    """
    t = np.asarray(t_list, dtype=float)
    if np.any(t <= 0):
        raise DomainError("growth-condition samples require t > 0")
    g = np.exp(log_radial_density(profile, 2.0 * t) - log_radial_density(profile, t)) / t
    tail = max(2, t.size // 4)
    seg = g[-tail:]
    monotone = bool(np.all(np.diff(seg) <= 1e-12 * np.abs(seg[:-1])))
    to_zero = monotone and bool(g[-1] < 0.1 * g[0])
    return GrowthConditionResult(t=t, values=g, to_zero=to_zero)


def radial_ricci(profile: WarpingProfile, t):
    """Radial Ricci curvature of the warped metric: -(n-1) f''(t) / f(t)."""
    f, _, fpp = eval_profile(profile, np.asarray(t, dtype=float))
    return _as_same_kind(t, -(profile.n - 1) * fpp / f)


@dataclass(frozen=True)
class RicciDecayAudit:
    """delta(t) = f''/f samples, the scale-invariant product delta * t^2, and tail trend."""

    t: np.ndarray
    delta: np.ndarray
    delta_times_t2: np.ndarray
    decreasing_tail: bool


def ricci_decay_audit(profile: WarpingProfile, t_list: Sequence[float]) -> RicciDecayAudit:
    """Companion audit for hypotheses of the form Ric >= -(n-1) delta(t).

    delta * t^2 is reported raw; no admissibility threshold is enforced
    because the dimensional constant in the hypothesis is left free.
    """
    t = np.asarray(t_list, dtype=float)
    f, _, fpp = eval_profile(profile, t)
    delta = fpp / f
    tail = max(2, t.size // 4)
    seg = np.abs(delta[-tail:])
    decreasing = bool(np.all(np.diff(seg) <= 1e-12 + 1e-9 * seg[:-1]))
    return RicciDecayAudit(t=t, delta=delta, delta_times_t2=delta * t * t, decreasing_tail=decreasing)


@dataclass(frozen=True)
class BishopAudit:
    """Volume-comparison audit record.

    ``fitted_c`` is the minimal constant making
        V(x, R)/V(x, r) <= (R/r)^n exp(C sqrt(K0) R)
    hold over all sampled centers and pairs; ``c_prefix`` tracks it over
    nested pair prefixes (sorted by R) for the stabilization check.  The
    companion constants audit the mu^2 comparison and the inverse-volume
    bound in the same run.
    """

    k0: float
    fitted_c: float
    c_prefix: tuple
    passed: bool
    mu_comparison_cbar: float
    mu_comparison_c: float
    inverse_volume_c: float


def bishop_check(
    profile: WarpingProfile,
    k0: float,
    pairs: Sequence[tuple],
    centers: Sequence[float] = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0),
    slope_tol: float = 0.1,
    max_step: float = 0.05,
) -> BishopAudit:
    """Audit the Bishop-type volume comparison and its mu-form consequences."""
    if k0 < 0:
        raise DomainError("k0 must be >= 0")
    pairs = sorted((float(r), float(R)) for r, R in pairs)
    if not pairs or any(not (0 < r <= R) for r, R in pairs):
        raise DomainError("pairs must satisfy 0 < r <= R")
    centers = np.asarray(sorted(centers), dtype=float)
    n = profile.n

    # hypothesis: radial Ricci >= -k0 on the audited range
    t_hi = float(centers.max() + max(R for _, R in pairs) + 1.0)
    t_audit = np.linspace(0.0, t_hi, 2049)
    ric = np.asarray(radial_ricci(profile, t_audit))
    bad = ric < -k0 * (1 + 1e-9) - 1e-12
    if np.any(bad):
        t_bad = float(t_audit[int(np.argmax(bad))])
        raise PreconditionError(
            f"radial Ricci {float(ric[bad][0]):.6g} < -k0 = {-k0:.6g} at t = {t_bad:.6g}"
        )

    sqrt_k0 = math.sqrt(k0)
    radii = sorted({x for p in pairs for x in p} | {1.0})
    vols = {rad: np.asarray(windowed_volume(profile, centers, rad, max_step)) for rad in radii}

    c_prefix = []
    c_run = 0.0
    ok = True
    for r, R in pairs:
        ratio = vols[R] / vols[r]
        bound0 = (R / r) ** n
        if k0 > 0:
            with np.errstate(divide="ignore"):
                req = np.log(ratio / bound0) / (sqrt_k0 * R)
            c_run = max(c_run, float(np.max(req)), 0.0)
        elif np.any(ratio > bound0 * (1 + 1e-12)):
            ok = False
            c_run = math.inf
        c_prefix.append(c_run)
    fitted_c = c_prefix[-1]

    # same stabilization rule as the subexponential audit: the fitted constant
    # must stop growing (in log-log slope) as the pair range is extended
    tail = max(3, len(c_prefix) // 4)
    slope = _loglog_slope([R for _, R in pairs][-tail:], c_prefix[-tail:])
    stable = fitted_c == 0.0 or (math.isfinite(fitted_c) and slope <= slope_tol)
    passed = bool(ok and math.isfinite(fitted_c) and stable)

    # mu(y)^2 <= C mu(x)^2 exp(Cbar (sqrt(K0)+1) d(x,y)), with mu = V(.,1)^(-1/2)
    lnv1 = np.log(vols[1.0])
    dmat = np.abs(centers[:, None] - centers[None, :])
    dlnv = lnv1[:, None] - lnv1[None, :]
    off = dmat > 0
    cbar = max(0.0, float(np.max(dlnv[off] / dmat[off]))) / (sqrt_k0 + 1.0) if off.any() else 0.0
    mu_c = float(np.exp(np.max(dlnv[off] - cbar * (sqrt_k0 + 1.0) * dmat[off]))) if off.any() else 1.0

    # V(x, r)^(-1) <= C mu(x)^2 sup{r^(-n), 1}
    inv_c = max(
        float(np.max(vols[1.0] / (vols[rad] * max(rad ** -n, 1.0)))) for rad in radii
    )

    return BishopAudit(
        k0=float(k0),
        fitted_c=fitted_c,
        c_prefix=tuple(c_prefix),
        passed=passed,
        mu_comparison_cbar=cbar,
        mu_comparison_c=mu_c,
        inverse_volume_c=inv_c,
    )


@dataclass(frozen=True)
class SturmIntegralAudit:
    """Doubling audit of sup_x of the mu-weighted exponential integral."""

    beta: float
    t_audits: tuple
    estimates: tuple
    sup_value: float
    finite: bool


def sturm_integral(
    profile: WarpingProfile,
    beta: float,
    center_grid: Sequence[float],
    t_audit: float = 40.0,
    doublings: int = 2,
    quad_step: float = 0.05,
    rel_tol: float = 0.05,
) -> SturmIntegralAudit:
    """Estimate sup_x int mu(x) mu(s) exp(-beta |x - s|) rho(s) ds.

    The integral is truncated to [0, T] and T is doubled ``doublings`` times;
    the verdict is finite iff the estimate stabilizes under the last doubling.
    """
    if beta <= 0:
        raise DomainError("beta must be > 0")
    centers = np.asarray(center_grid, dtype=float)
    if centers.size == 0:
        raise DomainError("center grid must be nonempty")
    mu_c = np.asarray(mu(profile, centers, max_step=quad_step))

    horizons = [t_audit * 2**j for j in range(doublings + 1)]
    estimates = []
    for horizon in horizons:
        n = _simpson_panels(horizon, quad_step)
        s = np.linspace(0.0, horizon, n + 1)
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= horizon / (3.0 * n)
        mu_s = np.asarray(mu(profile, s, max_step=quad_step))
        rho_s = radial_density(profile, s)
        kernel = np.exp(-beta * np.abs(centers[:, None] - s[None, :]))
        integrals = kernel @ (w * mu_s * rho_s)
        estimates.append(float(np.max(mu_c * integrals)))

    finite = bool(
        np.isfinite(estimates[-1])
        and estimates[-1] - estimates[-2] <= max(rel_tol * estimates[-2], 1e-12)
    )
    return SturmIntegralAudit(
        beta=float(beta),
        t_audits=tuple(horizons),
        estimates=tuple(estimates),
        sup_value=estimates[-1],
        finite=finite,
    )
