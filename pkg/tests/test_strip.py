import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtnwaves.bathymetry import DepthProfile
from dtnwaves.errors import DomainError, InsufficientDataError, PreconditionError
from dtnwaves.strip import (
    AdjointnessReport, DtNMatrices, StripGrid, StripSolver, adjointness_report,
    adjointness_study, assemble_dtn, gaussian_wavepacket, solve_mixed, symbol_residual_study)

FLAT = DepthProfile.constant(1.0)
BUMP = DepthProfile.radial_bump(1.0, 0.3, 1.0)


def plane_wave_errors(nx, nz, h=0.1):
    g = StripGrid(2.0 * np.pi * h, nx, nz)
    top = np.cos(g.x1 / h)
    s = solve_mixed(FLAT, g, h, {"phi_top": top})
    return (np.max(np.abs(s.psi_top - np.tanh(1.0) * top)),
            np.max(np.abs(s.phi_bot - top / np.cosh(1.0))), s)


def test_plane_wave_traces():
    e_psi, e_bot, s = plane_wave_errors(128, 64)
    assert e_psi < 0.01 * np.tanh(1.0)
    assert e_bot < 0.01 / np.cosh(1.0)
    assert s.residual < 1e-10


def test_traces_converge_at_second_order():
    errs = [plane_wave_errors(nx, nz)[:2] for nx, nz in ((32, 16), (64, 32), (128, 64))]
    errs = np.array(errs)
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(rates > 1.8)


def test_zero_data_gives_zero_potential():
    g = StripGrid(3.0, 32, 16)
    s = solve_mixed(BUMP, g, 0.3, {})
    assert np.all(s.U == 0)


def test_neumann_top_twin_problem_inverts_dirichlet():
    g = StripGrid(4.0, 64, 32)
    h = 0.3
    top = np.exp(-g.x1**2)
    s1 = solve_mixed(BUMP, g, h, {"phi_top": top})
    s2 = solve_mixed(BUMP, g, h, {"psi_top": s1.psi_top, "phi_bot": s1.phi_bot},
                     which="neumann-top")
    assert np.max(np.abs(s2.phi_top - top)) < 1e-8
    assert np.max(np.abs(s2.psi_bot)) < 1e-8


def test_maximum_principle():
    g = StripGrid(4.0, 64, 32)
    top = np.exp(-g.x1**2) * (1 + np.cos(3 * g.x1)) / 2
    s = solve_mixed(BUMP, g, 0.3, {"phi_top": top})
    assert s.U.min() >= -1e-10


def test_resolution_warning_recorded():
    g = StripGrid(1.0, 16, 16)
    s = solve_mixed(FLAT, g, 0.05, {"phi_top": np.cos(g.x1 / 0.05)})
    assert "resolution_warning" in s.metadata


def test_bad_grid_and_data():
    with pytest.raises(DomainError):
        StripGrid(1.0, 4, 16)
    g = StripGrid(1.0, 16, 16)
    with pytest.raises(DomainError):
        solve_mixed(FLAT, g, 0.1, {"phi_top": np.zeros(5)})


def test_constant_depth_fourier_blocks_are_diagonal_symbols():
    g = StripGrid(6.0, 64, 48)
    m = assemble_dtn(FLAT, g, 0.3)
    q = np.abs(m.momenta[:, 0])
    resolved = np.abs(m.modes[:, 0]) <= 3  # >= 20 nodes per wavelength
    assert np.allclose(np.diag(m.L11)[resolved], q[resolved] * np.tanh(q[resolved]), rtol=1e-2)
    # L12 carries the outward bottom conormal sign
    assert np.allclose(np.abs(np.diag(m.L12))[resolved], 1 / np.cosh(q[resolved]), rtol=1e-2)
    assert np.allclose(np.diag(m.L21)[resolved], 1 / np.cosh(q[resolved]), rtol=1e-2)
    off = m.L11 - np.diag(np.diag(m.L11))
    assert np.max(np.abs(off)) < 1e-10
    rep = adjointness_report(m)
    assert max(rep.ratios) < 1e-10


def test_l12_decays_exponentially():
    m = assemble_dtn(FLAT, StripGrid(6.0, 64, 48), 0.3)
    q = np.abs(m.momenta[:, 0])
    d = np.abs(np.diag(m.L12))
    order = np.argsort(q)
    assert np.all(np.diff(d[order]) <= 1e-12)
    low = np.abs(m.modes[:, 0]) <= 6
    assert np.allclose(d[low], 1 / np.cosh(q[low]), rtol=0.05)
    assert d[order][-1] < 0.1 * d[order][0]


def test_assembly_reproduces_direct_solve():
    g = StripGrid(5.0, 64, 32)
    h = 0.3
    phi = np.exp(-g.x1**2)
    for basis in ("fourier", "delta"):
        m = assemble_dtn(BUMP, g, h, basis=basis)
        psi_top, phi_bot = m.apply(phi, np.zeros(g.shape))
        s = solve_mixed(BUMP, g, h, {"phi_top": phi})
        assert np.max(np.abs(psi_top - s.psi_top)) < 1e-8
        assert np.max(np.abs(phi_bot - s.phi_bot)) < 1e-8


def test_dense_cap():
    with pytest.raises(PreconditionError):
        assemble_dtn(FLAT, StripGrid(6.0, 256, 8), 0.3)


def test_reciprocity_in_weighted_pairing():
    m = assemble_dtn(BUMP, StripGrid(6.0, 64, 48), 0.3, basis="delta")
    rng = np.random.default_rng(0)
    w = m.weights
    a, b = rng.standard_normal(64), rng.standard_normal(64)
    lhs = np.sum(w * (m.L11 @ a) * b)
    rhs = np.sum(w * a * (m.L11 @ b))
    assert abs(lhs - rhs) <= 5e-2 * np.linalg.norm(m.L11, 2) * np.sum(w * a * a) ** 0.5 \
        * np.sum(w * b * b) ** 0.5


def test_adjointness_on_bump_converges():
    reports, rates = adjointness_study(BUMP, 6.0, 0.3, levels=((32, 24), (64, 48)))
    assert reports[1].passed
    assert np.all(rates >= 1.8)


def test_adjointness_detects_injected_asymmetry():
    m = assemble_dtn(FLAT, StripGrid(6.0, 32, 16), 0.3)
    rng = np.random.default_rng(1)
    bad = m.L11 + 0.5 * np.abs(m.L11).max() * rng.standard_normal(m.L11.shape)
    broken = DtNMatrices(bad, m.L12, m.L21, m.L22, m.h, m.grid, m.basis, m.weights, m.modes)
    assert not adjointness_report(broken).passed


def test_report_pass_logic():
    assert AdjointnessReport(0.01, 0.02, 0.03, 5e-2).passed
    assert not AdjointnessReport(0.01, 0.2, 0.03, 5e-2).passed


def test_residual_study_constant_depth_is_at_floor():
    st_ = symbol_residual_study(FLAT, [0.4, 0.2])
    assert np.all(st_.residual < 1e-4)


def test_residual_study_needs_two_h():
    with pytest.raises(InsufficientDataError):
        symbol_residual_study(FLAT, [0.4])


def test_wavepacket_shape():
    phi = gaussian_wavepacket()
    x = np.linspace(-5, 5, 11)
    assert phi(x, 0.2)[5] == pytest.approx(1.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 2.0), st.integers(1, 4))
def test_flat_modes_follow_symbol(D0, k):
    """For any depth and resolved mode, psi_top / phi_top -> |p| tanh(D0 |p|)."""
    h, X = 0.3, 3.0
    g = StripGrid(X, 64, 40)
    top = np.cos(np.pi * k * g.x1 / X)
    s = solve_mixed(DepthProfile.constant(D0), g, h, {"phi_top": top})
    q = h * np.pi * k / X
    assert np.max(np.abs(s.psi_top - q * np.tanh(D0 * q) * top)) < 2e-2 * max(q * np.tanh(D0 * q), 1e-2)


def test_solver_reuse_for_many_right_hand_sides():
    g = StripGrid(4.0, 32, 16)
    solver = StripSolver(BUMP, g, 0.3)
    tops = np.stack([np.cos(k * g.x1 * np.pi / 4.0) for k in range(3)], axis=1)
    U, _ = solver.solve_many(tops, np.zeros_like(tops))
    for j in range(3):
        single = solver.solve(tops[:, j], np.zeros(32))
        assert np.allclose(U[:, j].reshape(32, 16), single.U)
