import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from dtnwaves.bathymetry import DepthProfile
from dtnwaves.dispersion import (PhasePoint, characteristic_radius, dtn_symbol, dtn_symbol_dq,
                                 elliptic_factor_C0)
from dtnwaves.errors import DomainError, InsufficientDataError, ResolutionError
from dtnwaves.greenfn import (Cutoffs, SourceModel, _shell_C0, annulus_points, assemble_green,
                              bottom_to_surface_response, bump, compare_fields,
                              exact_green_constant_depth, fan_for, limiting_absorption_study,
                              outgoing_asymptote, short_range_field, smooth_step, source_field)
from dtnwaves.pdo import GridField, ResolventQuery

FLAT = DepthProfile.constant(1.0)
BUMP = DepthProfile.radial_bump(1.0, 0.3, 1.0)
H = 0.1
MODEL = SourceModel.at(FLAT, (0.0, 0.0), 1.0, H)
RING = annulus_points((0.0, 0.0), 1.5, 3.0, n_r=7, n_theta=24)


@pytest.fixture(scope="module")
def flat_fan():
    return fan_for(FLAT, MODEL, 3.5, n_angles=360)


@pytest.fixture(scope="module")
def flat_green(flat_fan):
    return assemble_green(flat_fan, MODEL, RING)


def test_cutoff_profiles():
    s = np.linspace(-1, 2, 301)
    v = smooth_step(s)
    assert np.all(np.diff(v) >= 0)
    assert v[0] == 0 and v[-1] == 1
    assert bump(0.0) == 1.0 and bump(1.0) == 0.0
    cut = Cutoffs()
    assert cut.rho(1.2, 1.0) == 1.0 and cut.rho(1.5, 1.0) == 0.0
    assert cut.theta(0.0, 1.0) == 1.0 and cut.theta(1.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        Cutoffs(rho_flat=0.5, rho_edge=0.4)


def test_source_model_validation():
    with pytest.raises(DomainError):
        SourceModel((0, 0), 1.0, 0.1, 1.2, 1.0, band=1.5)
    with pytest.raises(DomainError):
        SourceModel((0, 0), 1.0, -0.1, 1.2, 1.0)


def source_grid(h=0.2, N=128, X=8.0):
    return GridField.zeros(N, X, h, 2)


def test_source_norm_matches_amplitude_norm():
    for h in (0.2, 0.1):
        m = SourceModel.at(FLAT, (0.0, 0.0), 1.0, h)
        f = source_field(m, source_grid(h, N=256))
        assert f.norm() == pytest.approx(m.l2_norm(), rel=1e-4)  # lattice sum vs integral


def test_source_is_radially_symmetric():
    f = source_field(SourceModel.at(FLAT, (0.0, 0.0), 1.0, 0.2), source_grid())
    v = f.values
    assert np.allclose(v, v.T, atol=1e-12 * np.abs(v).max())
    assert np.allclose(v[1:, :], v[1:, :][::-1, :], atol=1e-12 * np.abs(v).max())


def test_source_translates_with_x0():
    g = source_grid()
    a = source_field(SourceModel.at(FLAT, (0.0, 0.0), 1.0, 0.2), g).values
    b = source_field(SourceModel.at(FLAT, (5 * g.dx, -3 * g.dx), 1.0, 0.2), g).values
    assert np.allclose(np.roll(a, (5, -3), axis=(0, 1)), b, atol=1e-12 * np.abs(a).max())


def test_source_needs_resolved_lattice():
    with pytest.raises(ResolutionError):
        source_field(MODEL, source_grid(0.1, N=16))


def test_oracle_principal_value_matches_cauchy_quadrature():
    a, b = MODEL.support
    r0 = MODEL.r0
    R = np.array([0.7, 1.9, 3.3])
    u = exact_green_constant_depth(1.0, 1.0, H, 0.0, np.stack([R, 0 * R], -1), model=MODEL)
    for RR, val in zip(R, u):
        def f(q):
            # (L0 - E) = (q - r0) * slope(q): weight='cauchy' divides by (q - r0)
            gap = dtn_symbol(1.0, q) - 1.0
            slope = gap / (q - r0) if abs(q - r0) > 1e-12 else 1.0
            return special.j0(q * RR / H) * MODEL.amplitude(q) * q / slope

        pv, _ = integrate.quad(f, a, b, weight="cauchy", wvar=r0, limit=400, epsabs=1e-13)
        res = special.j0(r0 * RR / H) * MODEL.amplitude(r0) * r0 / dtn_symbol_dq(1.0, r0)
        ref = 1j / H * (pv + 1j * np.pi * res)
        assert abs(val - ref) <= 1e-7 * abs(ref)


def test_oracle_far_field_is_outgoing_hankel():
    R = np.linspace(2.0, 6.0, 9)
    u = exact_green_constant_depth(1.0, 1.0, H, 0.0, np.stack([R, 0 * R], -1), model=MODEL)
    ratio = u / outgoing_asymptote(1.0, 1.0, H, R, MODEL)
    assert np.max(np.abs(np.abs(ratio) - 1)) < 0.01
    assert np.max(np.abs(np.angle(ratio))) < 0.01


def test_oracle_absorption():
    R = np.array([1.0, 6.0])
    pts = np.stack([R, 0 * R], -1)
    u0 = exact_green_constant_depth(1.0, 1.0, H, 0.0, pts, model=MODEL)
    small = exact_green_constant_depth(1.0, 1.0, H, 1e-3, pts, model=MODEL)
    strong = exact_green_constant_depth(1.0, 1.0, H, 1.0, pts, model=MODEL)
    assert abs(small[0] / u0[0] - 1) < 0.02
    # without a real pole the field decays faster than any outgoing wave
    assert abs(strong[1] / strong[0]) < 0.1 * abs(u0[1] / u0[0])
    with pytest.raises(DomainError):
        exact_green_constant_depth(1.0, 1.0, H, -1.0, pts)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.5, 4.0), st.floats(0, 2 * np.pi))
def test_oracle_depends_only_on_distance(R, angle):
    x0 = np.array([0.3, -0.2])
    m = SourceModel.at(FLAT, x0, 1.0, H)
    p = x0 + R * np.array([[np.cos(angle), np.sin(angle)], [1.0, 0.0]])
    u = exact_green_constant_depth(1.0, 1.0, H, 0.0, p, model=m)
    assert u[0] == pytest.approx(u[1], rel=1e-10)


def test_assembled_field_matches_oracle(flat_green):
    ex = exact_green_constant_depth(1.0, 1.0, H, 0.0, RING, model=MODEL)
    comp = compare_fields(flat_green.values, ex, flat_green.valid)
    assert comp.passed
    assert abs(comp.calibration - 1) < 0.02
    assert not np.any(flat_green.caustic | flat_green.shadow)
    assert np.all(flat_green.branches == 1)


def test_assembled_field_is_isotropic_and_decays(flat_green):
    R = np.linalg.norm(RING, axis=-1).reshape(7, 24)
    u = flat_green.values.reshape(7, 24)
    per_ring = np.abs(u)
    assert np.max(np.ptp(per_ring, axis=1) / per_ring.mean(axis=1)) < 0.03
    slope = np.polyfit(np.log(R[:, 0]), np.log(per_ring.mean(axis=1)), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_assembled_field_is_linear_in_amplitude(flat_fan, flat_green):
    g2 = assemble_green(flat_fan, MODEL.scaled(2.0), RING)
    assert np.allclose(g2.values, 2 * flat_green.values, rtol=1e-12)


def test_finsler_and_l0_routes_agree_on_bump():
    x0 = (-0.5, 0.2)
    m = SourceModel.at(BUMP, x0, 1.0, H)
    pts = annulus_points(x0, 1.5, 2.5, n_r=5, n_theta=24)
    fin = assemble_green(fan_for(BUMP, m, 3.0, n_angles=360), m, pts)
    l0 = assemble_green(fan_for(BUMP, m, 3.0, n_angles=360, hamiltonian="L0"), m, pts)
    mask = fin.valid & l0.valid
    assert mask.mean() > 0.9
    c = compare_fields(fin.values, l0.values, mask)
    assert c.modulus_error < 0.05 and c.phase_error < 0.05


def test_short_range_part_is_small_far_out():
    cut = Cutoffs()
    t0 = cut.t0(H, 1.0 / MODEL.r0)
    near, far = np.abs(short_range_field(MODEL, cut, t0, np.array([0.05, 2.0])))
    assert far < 1e-3 * near


def test_shell_factor_matches_elliptic_factor():
    for D in (0.6, 1.0, 1.7):
        prof = DepthProfile.constant(D)
        r = float(characteristic_radius(D, 1.0))
        c = elliptic_factor_C0(prof, PhasePoint(np.zeros(2), np.array([r, 0.0])), 1.0)
        assert _shell_C0(D, 1.0) == pytest.approx(float(c), rel=1e-6)


def test_compare_fields():
    u = np.exp(1j * np.linspace(0, 3, 10))
    c = compare_fields(u, u)
    assert c.modulus_error < 1e-15 and c.phase_error < 1e-15 and c.passed
    assert not compare_fields(1.2 * u, u).passed
    with pytest.raises(InsufficientDataError):
        compare_fields(u, u, np.zeros(10, bool))


def test_absorption_schedule_checks():
    with pytest.raises(InsufficientDataError):
        limiting_absorption_study(MODEL, FLAT, [0.01])
    with pytest.raises(DomainError):
        limiting_absorption_study(MODEL, FLAT, [0.01, 0.02])


def test_bottom_to_surface_response():
    q = ResolventQuery(1.0, 0.1)
    zero = GridField.zeros(512, 8.0, 0.3)
    assert not np.any(bottom_to_surface_response(zero, FLAT, q).values)
    x = zero.x1
    # D|p| = 0.35 and about 20
    for k, bound in ((3, None), (170, 1e-7)):
        f = zero.with_values(np.cos(np.pi * k * x / 8.0))
        p = 0.3 * np.pi * k / 8.0
        u = bottom_to_surface_response(f, FLAT, q)
        expect = f.values / np.cosh(p) / (dtn_symbol(1.0, p) - 1.0 - 0.1j)
        assert np.allclose(u.values, expect, atol=1e-12)
        if bound is not None:
            assert np.max(np.abs(u.values)) < bound
