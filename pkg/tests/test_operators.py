import math

import numpy as np
import pytest

from conftest import band_limited_section
from speclab.errors import AccuracyError, DomainError
from speclab.geometry import ExponentialProfile, PolynomialProfile, radial_density
from speclab.operators import (
    DIRAC_SQUARED,
    SCALAR_LAPLACIAN,
    RadialGrid,
    RadialSection,
    apply_dirac,
    apply_dirac_squared,
    assemble_operator,
    connection_coefficient,
    effective_potential,
    eig_sym_tridiag,
    kato_pointwise_check,
    spectrum_window,
    weighted_norm,
    _sturm_counts,
)
from speclab.weyl import weyl_quotient_p


def flat_dirichlet_eigenvalues(h, m):
    """Closed-form spectrum of the (2, -1)/h^2 tridiagonal: the discrete oracle."""
    return (2.0 / h**2) * (1.0 - np.cos(np.arange(1, m + 1) * np.pi / (m + 1)))


# --- grid and norms -----------------------------------------------------------


def test_grid_t_max_exact():
    g = RadialGrid.from_spacing(50.0, 0.01)
    assert g.t_max == pytest.approx(50.0, abs=1e-12)
    assert (g.m + 1) * g.h == pytest.approx(g.t_max, abs=0)
    g2 = RadialGrid.from_node_count(40.0, 2000)
    assert g2.m == 2000 and g2.t_max == pytest.approx(40.0)


def test_grid_rejects_bad_args():
    with pytest.raises(DomainError):
        RadialGrid(h=0.0, m=10)
    with pytest.raises(DomainError):
        RadialGrid(h=0.1, m=2)


def test_weighted_norm_flat_l1(flat):
    g = RadialGrid.from_spacing(10.0, 0.005)
    sec = RadialSection(np.ones(g.m, dtype=complex), g, radial_density(flat, g.nodes))
    assert weighted_norm(sec, 1) == pytest.approx(10.0, abs=2 * g.h)


def test_weighted_norm_sup(flat):
    g = RadialGrid.from_spacing(1.0, 0.001)
    sec = RadialSection(g.nodes.astype(complex), g, radial_density(flat, g.nodes))
    assert weighted_norm(sec, math.inf) == pytest.approx(1.0, abs=2 * g.h)


def test_weighted_norm_l2_matches_volume():
    p = PolynomialProfile(k=2.0, n=2)
    g = RadialGrid.from_spacing(1.0, 0.0005)
    sec = RadialSection(np.ones(g.m, dtype=complex), g, radial_density(p, g.nodes))
    assert weighted_norm(sec, 2) == pytest.approx(math.sqrt(7 / 3), abs=6 * g.h)


def test_weighted_norm_requires_weights(flat):
    g = RadialGrid.from_spacing(1.0, 0.01)
    bare = RadialSection(np.ones(g.m, dtype=complex), g)
    with pytest.raises(DomainError):
        weighted_norm(bare, 2)
    assert weighted_norm(bare, 2, profile=flat) > 0


# --- coefficients -------------------------------------------------------------


def test_connection_coefficient_closed_forms():
    assert connection_coefficient(ExponentialProfile(alpha=1.0, n=2), 3.3) == pytest.approx(0.5)
    assert connection_coefficient(PolynomialProfile(k=2.0, n=4), 0.0) == pytest.approx(3.0)
    assert connection_coefficient(PolynomialProfile(k=0.0, n=4), 1.0) == 0.0


def test_effective_potential_closed_forms():
    p = PolynomialProfile(k=2.0, n=4)
    for t in (0.0, 1.0, 4.0):
        assert effective_potential(p, t) == pytest.approx(-6.0 / (1 + t) ** 2, rel=1e-12)
    assert effective_potential(ExponentialProfile(alpha=1.0, n=2), 2.0) == pytest.approx(-0.25)
    # k=1, n=2: q = 1 / (4 (1+t)^2)
    assert effective_potential(PolynomialProfile(k=1.0, n=2), 3.0) == pytest.approx(
        1.0 / (4 * 16), rel=1e-12
    )


# --- first-order action -------------------------------------------------------


def test_apply_dirac_discrete_symbol(flat):
    lam = 2.0
    g = RadialGrid.from_spacing(20.0, 0.01)
    t = g.nodes
    sec = RadialSection(np.exp(-1j * lam * t), g, radial_density(flat, t))
    out = apply_dirac(sec, flat)
    symbol = lam * math.sin(lam * g.h) / (lam * g.h)
    expected = symbol * np.exp(-1j * lam * t)
    assert np.max(np.abs(out.values[1:-1] - expected[1:-1])) < 1e-10


def test_apply_dirac_on_constant(poly24):
    g = RadialGrid.from_spacing(20.0, 0.01)
    sec = RadialSection(np.ones(g.m, dtype=complex), g, radial_density(poly24, g.nodes))
    out = apply_dirac(sec, poly24)
    expected = 3j / (1 + g.nodes)
    assert np.max(np.abs(out.values - expected)) < 1e-12
    out_minus = apply_dirac(sec, poly24, sign=-1)
    assert np.max(np.abs(out_minus.values + expected)) < 1e-12


def test_apply_dirac_coarse_grid_errors(poly24):
    g = RadialGrid.from_spacing(10.0, 0.5)  # a(0+) ~ 3, a h ~ 1 > 0.5
    sec = RadialSection(np.ones(g.m, dtype=complex), g, radial_density(poly24, g.nodes))
    with pytest.raises(AccuracyError):
        apply_dirac(sec, poly24)


# --- second-order action ------------------------------------------------------


def test_apply_dirac_squared_flat_eigenfunction(flat):
    g = RadialGrid.from_spacing(10.0, 0.01)
    t = g.nodes
    u = np.sin(np.pi * t / g.t_max).astype(complex)
    out = apply_dirac_squared(RadialSection(u, g), flat)
    assert np.max(np.abs(out.values - (np.pi / g.t_max) ** 2 * u)) < 2e-5


def test_apply_dirac_squared_constant_gives_potential(poly24):
    g = RadialGrid.from_spacing(20.0, 0.01)
    sec = RadialSection(np.ones(g.m, dtype=complex), g)
    out = apply_dirac_squared(sec, poly24)
    q = -6.0 / (1 + g.nodes) ** 2
    # interior nodes: the stencil sees a constant; the two end nodes see the
    # Dirichlet boundary
    assert np.max(np.abs(out.values[1:-1] - q[1:-1])) < 1e-11
    flat0 = PolynomialProfile(k=0.0, n=2)
    out0 = apply_dirac_squared(sec, flat0)
    assert np.max(np.abs(out0.values[1:-1])) < 1e-12


def test_composition_consistency_random_sections(poly24):
    rng = np.random.default_rng(11)
    errs = []
    for h in (0.02, 0.01):
        g = RadialGrid.from_spacing(10.0, h)
        worst = 0.0
        for _ in range(50):
            u = band_limited_section(rng, g)
            sec = RadialSection(u, g, radial_density(poly24, g.nodes))
            ddu = apply_dirac(apply_dirac(sec, poly24), poly24)
            d2u = apply_dirac_squared(sec, poly24)
            # one-sided ends of the first-order stencil differ; compare interior
            worst = max(worst, float(np.max(np.abs(ddu.values[2:-2] - d2u.values[2:-2]))))
        errs.append(worst)
    assert errs[0] < 300.0 * 0.02**2
    assert 2.5 < errs[0] / errs[1] < 6.0


def test_discrete_self_adjointness(poly24):
    rng = np.random.default_rng(3)
    g = RadialGrid.from_spacing(10.0, 0.02)
    op = assemble_operator(poly24, g, DIRAC_SQUARED)
    rho_h = op.rho * g.h
    for _ in range(10):
        u = band_limited_section(rng, g)
        v = band_limited_section(rng, g)
        lhs = np.sum(op.apply(u) * np.conj(v) * rho_h)
        rhs = np.sum(u * np.conj(op.apply(v)) * rho_h)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


# --- assembly -----------------------------------------------------------------


def test_assemble_flat_is_classical_tridiagonal(flat):
    g = RadialGrid.from_spacing(1.0, 0.1)
    op = assemble_operator(flat, g, SCALAR_LAPLACIAN)
    assert np.allclose(op.diag, 2.0 / g.h**2)
    assert np.allclose(op.offdiag, -1.0 / g.h**2)


def test_dirac_squared_minus_scalar_is_potential(poly24):
    g = RadialGrid.from_spacing(10.0, 0.01)
    op2 = assemble_operator(poly24, g, DIRAC_SQUARED)
    op0 = assemble_operator(poly24, g, SCALAR_LAPLACIAN)
    assert np.array_equal(op2.offdiag, op0.offdiag)
    # identical stiffness by construction; the difference is q up to the
    # roundoff of adding q to the O(1/h^2) diagonal
    assert np.max(np.abs((op2.diag - op0.diag) - op2.q)) < 1e-16 * np.max(op0.diag)
    assert np.array_equal(op2.q, np.asarray(effective_potential(poly24, g.nodes)))
    assert op2.k1 == pytest.approx(6.0 / (1 + g.h) ** 2)
    assert op0.k1 == 0.0


def test_dirac_squared_nonnegative(poly24):
    g = RadialGrid.from_spacing(50.0, 0.01)
    op = assemble_operator(poly24, g, DIRAC_SQUARED)
    # Sturm count below -1e-6 must be zero: no eigenvalue beyond the
    # discretization slack
    count = _sturm_counts(op.diag, op.offdiag**2, np.array([-1e-6]), 1e-20)
    assert count[0] == 0


def test_neumann_variant_flag(poly24):
    g = RadialGrid.from_spacing(10.0, 0.01)
    op_d = assemble_operator(poly24, g, DIRAC_SQUARED, bc="dirichlet")
    op_n = assemble_operator(poly24, g, DIRAC_SQUARED, bc="neumann")
    assert op_n.bc == "neumann"
    # only the end rows differ
    assert np.allclose(op_d.diag[2:-2], op_n.diag[2:-2])
    assert op_d.diag[0] != op_n.diag[0]


# --- eigensolver ----------------------------------------------------------------


def test_eig_closed_form_3x3():
    h = 1.0
    vals = eig_sym_tridiag([2 / h**2] * 3, [-1 / h**2] * 2, (0.0, 5.0), tol=1e-12)
    expected = np.array([2 - math.sqrt(2), 2.0, 2 + math.sqrt(2)])
    assert np.allclose(vals, expected, atol=1e-11)


def test_eig_diagonal_matrix():
    vals = eig_sym_tridiag([1.0, 5.0, 9.0], [0.0, 0.0], (0.0, 10.0), tol=1e-12)
    assert np.allclose(vals, [1.0, 5.0, 9.0], atol=1e-11)


def test_eig_flat_dirichlet_oracle(flat):
    g = RadialGrid.from_spacing(10.0, 0.01)
    op = assemble_operator(flat, g, SCALAR_LAPLACIAN)
    oracle = flat_dirichlet_eigenvalues(g.h, g.m)
    window = (0.0, float(oracle[30]) + 1e-9)
    vals = eig_sym_tridiag(op.diag, op.offdiag, window, tol=1e-10)
    assert vals.size == 31
    assert np.max(np.abs(vals - oracle[:31])) < 1e-8


def test_eig_matches_scipy_reference(poly24):
    from scipy.linalg import eigh_tridiagonal

    g = RadialGrid.from_spacing(10.0, 0.05)
    op = assemble_operator(poly24, g, DIRAC_SQUARED)
    ours, vecs = eig_sym_tridiag(
        op.diag, op.offdiag, (-1.0, 20.0), tol=1e-11, want_vectors=True
    )
    ref = eigh_tridiagonal(op.diag, op.offdiag, eigvals_only=True)
    ref = ref[(ref > -1.0) & (ref <= 20.0)]
    assert ours.size == ref.size
    assert np.max(np.abs(ours - ref)) < 1e-9
    for i, lam in enumerate(ours):
        v = vecs[:, i]
        resid = op.diag * v
        resid[:-1] += op.offdiag * v[1:]
        resid[1:] += op.offdiag * v[:-1]
        assert np.linalg.norm(resid - lam * v) < 1e-8 * op.scale


def test_eig_empty_window():
    vals = eig_sym_tridiag([5.0, 6.0, 7.0], [0.1, 0.1], (100.0, 200.0))
    assert vals.size == 0


def test_eig_eigenvalue_order_of_accuracy(poly24):
    # eigenvalue error vs the continuum oracle shrinks like h^2
    t_max = 10.0
    exact = (np.pi / t_max) ** 2
    errs = []
    for h in (0.02, 0.01, 0.005):
        g = RadialGrid.from_spacing(t_max, h)
        op = assemble_operator(poly24, g, DIRAC_SQUARED)
        vals = eig_sym_tridiag(op.diag, op.offdiag, (0.0, 0.5), tol=1e-13)
        errs.append(abs(vals[0] - exact))
    assert 3.5 <= errs[0] / errs[1] <= 4.5
    assert 3.5 <= errs[1] / errs[2] <= 4.5


# --- spectrum window ------------------------------------------------------------


def test_spectrum_window_polynomial_oracle(poly24):
    t_max = 20.0
    sw = spectrum_window(poly24, t_max, 10.5, t_max / 5000)
    oracle = (np.arange(1, sw.eigenvalues.size + 1) * np.pi / sw.t_max) ** 2
    rel = np.abs(sw.eigenvalues - oracle) / oracle
    assert sw.eigenvalues.size >= 20
    assert np.max(rel[:20]) <= 1e-3


def test_spectrum_window_max_gap_scale(poly24):
    sw = spectrum_window(poly24, 100.0, 1.0, 0.02)
    assert sw.max_gap <= 4 * np.pi / 100.0
    assert sw.max_gap == pytest.approx(2 * np.pi / 100.0, rel=0.15)


def test_spectrum_window_gap_halves(poly24):
    g1 = spectrum_window(poly24, 40.0, 1.0, 0.008)
    g2 = spectrum_window(poly24, 80.0, 1.0, 0.008)
    assert 1.7 <= g1.max_gap / g2.max_gap <= 2.3


def test_spectrum_window_resolution_guard(poly24):
    with pytest.raises(AccuracyError):
        spectrum_window(poly24, 10.0, 100.0, 0.02)


# --- sector-sign symmetry -------------------------------------------------------


def test_sector_sign_symmetry(poly24):
    g = RadialGrid.from_spacing(90.0, 0.02)
    for z in (0.0, 1.0, 5.0, 0.37):
        q_plus, _ = weyl_quotient_p(z, 10.0, 1, g, poly24, sign=1)
        q_minus, _ = weyl_quotient_p(-z, 10.0, 1, g, poly24, sign=-1)
        assert abs(q_plus - q_minus) <= 1e-12 * q_plus


# --- pointwise inequality -------------------------------------------------------


def test_kato_real_positive_section_is_tight(flat):
    g = RadialGrid.from_spacing(10.0, 0.01)
    u = (np.sin(np.pi * g.nodes / g.t_max) + 1.1).astype(complex)
    res = kato_pointwise_check(RadialSection(u, g), flat)
    assert res.max_violation <= 1e-10
    assert res.skipped_nodes == 0


def test_kato_random_phases_no_violation(poly24, exp12):
    rng = np.random.default_rng(5)
    for profile in (poly24, exp12):
        g = RadialGrid.from_spacing(15.0, 0.015)
        for _ in range(50):
            u = band_limited_section(rng, g)
            res = kato_pointwise_check(RadialSection(u, g), profile)
            assert res.max_violation <= 1.0 * g.h**2


def test_kato_zero_node_skipped(flat):
    g = RadialGrid.from_spacing(10.0, 0.1)
    u = (np.sin(np.pi * g.nodes / g.t_max) + 0.5).astype(complex)
    u[g.m // 2] = 0.0
    res = kato_pointwise_check(RadialSection(u, g), flat)
    assert res.skipped_nodes == 1
    assert res.checked_nodes == g.m - 1
