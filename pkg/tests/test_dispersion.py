import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_bvp
from scipy.optimize import brentq

from dtnwaves.bathymetry import DepthProfile
from dtnwaves.dispersion import (
    PhasePoint, characteristic_radius, dtn_symbol, elliptic_factor_C0, elliptic_factor_F0,
    normal_form, r0_depth_derivative, solve_R1, solve_Z, symbol_L0, symbol_Q0, symbol_R0)
from dtnwaves.errors import ConsistencyError, DomainError

FLAT = DepthProfile.constant(1.0)
BUMP = DepthProfile.radial_bump(1.0, 0.3, 1.0)
ORIGIN = np.zeros(2)

# brentq(z*tanh(z) - s, xtol=rtol=1e-15)
Z_REFERENCE = {1.0: 1.199678640257734, 0.01: 0.1001669725590555,
               0.7: 0.9476111238296172, 1e-6: 0.0010000001666666972, 50.0: 50.0}


def pp(p, x=ORIGIN):
    return PhasePoint(np.asarray(x, float), np.asarray(p, float))


@pytest.mark.parametrize("s,z", sorted(Z_REFERENCE.items()))
def test_solve_Z_reference_values(s, z):
    assert solve_Z(s) == pytest.approx(z, rel=1e-13, abs=1e-15)


def test_solve_Z_zero_and_domain():
    assert solve_Z(0.0) == 0.0
    with pytest.raises(DomainError):
        solve_Z(-1e-3)


def test_solve_Z_residual_on_log_grid():
    s = np.logspace(-6, 3, 3000)
    z = solve_Z(s)
    assert np.max(np.abs(z * np.tanh(z) - s) / np.maximum(1.0, s)) <= 1e-12
    assert np.all(np.diff(z) > 0)


def test_solve_Z_series_laws():
    assert solve_Z(0.01) == pytest.approx(np.sqrt(0.01) * (1 + 0.01 / 6), rel=1e-5)
    assert abs(solve_Z(50.0) - 50.0) < 1e-10


def test_solve_Z_sandwich_bounds():
    small = np.logspace(-6, 0, 300)
    zs = solve_Z(small)
    assert np.all(zs >= np.sqrt(small) / (1 + small / 6))
    assert np.all(zs >= np.sqrt(small) * (1 - 1e-15))
    large = np.logspace(0, 3, 300)
    zl = solve_Z(large)
    assert np.all(np.abs(zl - large) <= 2 * zl * np.exp(-2 * zl) * (1 + 1e-9) + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_solve_Z_strictly_increasing(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert solve_Z(lo) < solve_Z(hi)


def test_L0_values():
    assert symbol_L0(FLAT, pp([1.0, 0.0])) == pytest.approx(0.7615941559557649, rel=1e-15)
    assert symbol_L0(FLAT, pp([0.0, 0.0])) == 0.0
    q = 30.0
    assert symbol_L0(FLAT, pp([q, 0.0])) / q == pytest.approx(1.0, abs=1e-12)
    q = 0.01
    assert symbol_L0(FLAT, pp([0, q])) == pytest.approx(q * q * (1 - q * q / 3), rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_L0_even_and_nonnegative(p1, p2):
    a = symbol_L0(BUMP, pp([p1, p2], [0.3, 0.4]))
    b = symbol_L0(BUMP, pp([-p1, -p2], [0.3, 0.4]))
    assert a == b and a >= 0


def test_L0_increasing_in_p():
    q = np.linspace(0, 20, 2001)
    assert np.all(np.diff(dtn_symbol(0.7, q)) > 0)


def test_Q0_values():
    assert symbol_Q0(FLAT, pp([0.0, 0.0])) == 1.0
    assert symbol_Q0(FLAT, pp([1.0, 0.0])) == pytest.approx(0.6480542736638855, rel=1e-15)
    assert symbol_Q0(FLAT, pp([20.0, 0.0])) <= 5e-9
    q = np.linspace(0, 40, 500)
    vals = symbol_Q0(FLAT, PhasePoint(np.zeros((500, 2)), np.stack([q, 0 * q], -1)))
    assert np.all(np.diff(vals) < 0) and np.all(vals > 0)


def test_normal_form_unit_depth():
    nf = normal_form(FLAT, ORIGIN, 1.0)
    assert nf.r == pytest.approx(1.199678640257734, rel=1e-13)
    assert nf.g == pytest.approx(1 / 1.199678640257734, rel=1e-13)
    assert nf.V == pytest.approx(1.199678640257734**2, rel=1e-13)
    assert nf.G == pytest.approx(nf.g**2)


def test_normal_form_shallow_limit():
    D = 1e-3
    nf = normal_form(DepthProfile.constant(D, d_min=1e-4), ORIGIN, 1.0)
    assert nf.V == pytest.approx(1.0 / D, rel=1e-3)


def test_normal_form_independent_of_x_for_constant_depth():
    pts = np.random.default_rng(0).normal(size=(10, 2))
    nf = normal_form(FLAT, pts, 2.0)
    assert np.all(nf.r == nf.r[0])


@pytest.mark.parametrize("E", [0.3, 1.0, 4.0])
def test_level_set_coincidence(E):
    """Root of L0(x, .) = E equals the root of G |p|^2 = 1."""
    pts = np.random.default_rng(1).uniform(-2, 2, size=(8, 2))
    r = normal_form(BUMP, pts, E).r
    for x, rr in zip(pts, r):
        D = BUMP.depth(x)
        root = brentq(lambda q: dtn_symbol(D, q) - E, 1e-9, 100, xtol=1e-15, rtol=1e-15)
        assert rr == pytest.approx(root, rel=1e-10)


def test_C0_on_shell_derivative_quotient():
    r = 1.199678640257734
    c2 = elliptic_factor_C0(FLAT, pp([r, 0]), 1.0) ** 2
    closed = (2 / r) / (np.tanh(r) + r / np.cosh(r) ** 2)
    assert c2 == pytest.approx(closed, rel=1e-10)
    assert c2 == pytest.approx(1.3896, abs=1e-3)
    # finite-difference cross-check: direct quotient just off the shell
    d = 1e-4
    side = [((q / r) ** 2 - 1) / (dtn_symbol(1.0, q) - 1.0) for q in (r * (1 - d), r * (1 + d))]
    assert c2 == pytest.approx(np.mean(side), rel=1e-7)


def test_C0_off_shell_direct_quotient():
    r = characteristic_radius(1.0, 1.0)
    q = 0.5
    direct = ((q / r) ** 2 - 1) / (dtn_symbol(1.0, q) - 1.0)
    assert direct > 0
    assert elliptic_factor_C0(FLAT, pp([0, q]), 1.0) == pytest.approx(np.sqrt(direct), rel=1e-14)


def test_F0_on_shell():
    r = 1.199678640257734
    f2 = elliptic_factor_F0(FLAT, pp([r, 0]), 1.0) ** 2
    assert f2 == pytest.approx(2 * r / (np.tanh(r) + r / np.cosh(r) ** 2), rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 6), st.floats(0, 2 * np.pi), st.floats(0.2, 3))
def test_F0_is_r_times_C0_and_even(q, ang, E):
    x = np.array([0.4, -0.3])
    p = q * np.array([np.cos(ang), np.sin(ang)])
    c = elliptic_factor_C0(BUMP, pp(p, x), E)
    f = elliptic_factor_F0(BUMP, pp(p, x), E)
    r = normal_form(BUMP, x, E).r
    assert f == pytest.approx(r * c, rel=1e-9)
    assert elliptic_factor_C0(BUMP, pp(-p, x), E) == c


def test_C0_continuous_across_shell():
    r = characteristic_radius(1.0, 1.0)
    q = r * (1 + np.linspace(-1e-5, 1e-5, 401))
    pts = PhasePoint(np.zeros((q.size, 2)), np.stack([q, 0 * q], -1))
    c = elliptic_factor_C0(FLAT, pts, 1.0)
    assert np.max(np.abs(np.diff(c))) / c.max() < 1e-6


def test_factor_errors():
    with pytest.raises(DomainError):
        elliptic_factor_C0(FLAT, pp([0, 0]), 1.0)


def test_factor_detects_mismatched_levels(monkeypatch):
    import dtnwaves.dispersion as disp
    monkeypatch.setattr(disp, "characteristic_radius", lambda D, E: 2.0 * np.ones_like(D))
    with pytest.raises(ConsistencyError):
        elliptic_factor_C0(FLAT, pp([1.5, 0]), 1.0)


def test_R0_boundary_values_and_trace():
    assert symbol_R0(FLAT, pp([1.3, 0.2]), 0.0) == pytest.approx(1.0, rel=1e-15)
    z = np.linspace(-1, 0, 11)
    assert np.allclose(symbol_R0(FLAT, pp([0, 0]), z), 1.0)
    assert symbol_R0(FLAT, pp([1, 0]), -1.0) == pytest.approx(0.6480542736638855, rel=1e-14)
    x = np.array([0.3, 0.1])
    for p in ([0.5, 0.0], [2.0, 1.0], [10.0, -3.0]):
        D = BUMP.depth(x)
        assert symbol_R0(BUMP, pp(p, x), -D) == pytest.approx(symbol_Q0(BUMP, pp(p, x)), rel=1e-13)
    with pytest.raises(DomainError):
        symbol_R0(FLAT, pp([1, 0]), 0.1)


def test_R0_solves_vertical_ode():
    x = np.array([0.2, 0.0])
    D = BUMP.depth(x)
    q = 1.7
    z = np.linspace(-D, 0, 4001)
    R = symbol_R0(BUMP, pp([q, 0], x), z)
    dz = z[1] - z[0]
    lap = (R[2:] - 2 * R[1:-1] + R[:-2]) / dz**2
    assert np.max(np.abs(lap - q * q * R[1:-1])) < 1e-5
    assert abs((-3 * R[0] + 4 * R[1] - R[2]) / (2 * dz)) < 1e-5


def test_R0_depth_derivative():
    q, z, D, h = 1.3, -0.4, 0.9, 1e-6
    fd = (symbol_R0(DepthProfile.constant(D + h), pp([q, 0]), z)
          - symbol_R0(DepthProfile.constant(D - h), pp([q, 0]), z)) / (2 * h)
    assert r0_depth_derivative(D, q, z) == pytest.approx(fd, rel=1e-7)


def ramp_profile():
    xs = np.linspace(-2, 2, 21)
    X, _ = np.meshgrid(xs, xs, indexing="ij")
    return DepthProfile.from_samples(xs, xs, 1.0 + 0.1 * X, D0=1.0)


def test_R1_vanishes_for_constant_depth():
    sol = solve_R1(FLAT, pp([1.0, 0.5]), np.linspace(-1, 0, 65))
    assert np.all(sol.values == 0)


def test_R1_ramp_residuals_and_bvp_oracle():
    prof = ramp_profile()
    p = np.array([1.0, 0.0])
    D = float(prof.depth(ORIGIN))
    z = np.linspace(-D, 0, 801)
    sol = solve_R1(prof, pp(p), z)
    assert np.any(sol.values != 0)
    assert sol.ode_residual <= 1e-8 and sol.bottom_residual <= 1e-8 and sol.top_residual <= 1e-8
    # independent oracle: collocation BVP solver
    q, pg = 1.0, 0.1

    def rhs(zz, y):
        return np.vstack([y[1], q * q * y[0] + 2 * pg * r0_depth_derivative(D, q, zz)])

    def bc(ya, yb):
        flux = pg * float(symbol_R0(prof, pp(p), -D))
        return np.array([ya[1] - flux, yb[0]])

    ref = solve_bvp(rhs, bc, z, np.zeros((2, z.size)), tol=1e-10, max_nodes=100000)
    assert ref.success
    assert np.max(np.abs(sol.values - ref.sol(z)[0])) < 1e-6


def test_R1_second_order_convergence():
    prof = ramp_profile()
    D = float(prof.depth(ORIGIN))
    fine = solve_R1(prof, pp([1.0, 0.0]), np.linspace(-D, 0, 4097)).values
    errs = []
    for n in (65, 129):
        v = solve_R1(prof, pp([1.0, 0.0]), np.linspace(-D, 0, n)).values
        errs.append(np.max(np.abs(v - fine[:: (4096 // (n - 1))])))
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_R1_odd_in_p():
    prof = DepthProfile.radial_bump(1.0, 0.3, 1.0)
    x = np.array([0.6, -0.2])
    D = float(prof.depth(x))
    z = np.linspace(-D, 0, 129)
    a = solve_R1(prof, pp([0.8, 0.4], x), z).values
    b = solve_R1(prof, pp([-0.8, -0.4], x), z).values
    assert np.allclose(a, -b, atol=1e-14)


def test_R1_grid_must_span_column():
    with pytest.raises(DomainError):
        solve_R1(FLAT, pp([1.0, 0.0]), np.linspace(-0.5, 0, 10))
    with pytest.raises(DomainError):
        solve_R1(FLAT, pp([0.0, 0.0]), np.linspace(-1, 0, 10))
