"""Finite-difference reference solver on the fluid strip ``-D(x) < z < 0``.

The scaled Laplace problem ``-h^2 Lap_x Phi - d_z^2 Phi = f`` is solved in the
terrain-following coordinate ``sigma = z / D(x)``, which maps the strip onto
the rectangle ``[-X, X)^d x [-1, 0]``.  Horizontal boundaries are periodic;
all derivatives are second-order central differences, and one-sided
second-order stencils close the Neumann rows and extract the traces.

Trace conventions:

* ``phi_top = Phi(x, 0)`` and ``psi_top = d_z Phi(x, 0)``;
* ``phi_bot = Phi(x, -D(x))`` and
  ``psi_bot = -(d_z Phi + h^2 <grad D, grad_x Phi>)`` at the bottom, i.e. the
  unnormalised conormal derivative along the *outward* normal.

With these signs the block operator ``(phi_top, psi_bot) -> (psi_top, phi_bot)``
satisfies ``L11* = L11``, ``L22* = L22`` and ``L21* = -L12`` in the ``dx``
pairing, and for constant depth ``L11 = |p| tanh(D|p|)``,
``L21 = 1/cosh(D|p|)`` and ``L12 = -1/cosh(D|p|)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .dispersion import dtn_symbol
from .errors import DomainError, InsufficientDataError, NumericError, PreconditionError

DENSE_CAP = 128


@dataclass(frozen=True)
class StripGrid:
    """Periodic horizontal box ``[-X, X)^dim`` times ``nz`` sigma levels."""

    X: float
    nx: int
    nz: int
    dim: int = 1
    periodic: bool = True

    def __post_init__(self):
        if self.nx < 8 or self.nz < 8:
            raise DomainError("strip grid needs nx, nz >= 8")
        if self.dim not in (1, 2):
            raise DomainError("horizontal dimension must be 1 or 2")
        if not self.periodic:
            raise DomainError("only periodic horizontal boundaries are implemented")
        if not self.X > 0:
            raise DomainError("box half-width must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.X / self.nx

    @property
    def dsigma(self) -> float:
        return 1.0 / (self.nz - 1)

    @property
    def x1(self) -> np.ndarray:
        return -self.X + self.dx * np.arange(self.nx)

    @property
    def sigma(self) -> np.ndarray:
        return np.linspace(-1.0, 0.0, self.nz)

    @property
    def shape(self) -> tuple:
        return (self.nx,) * self.dim

    @property
    def n_horizontal(self) -> int:
        return self.nx**self.dim

    def points(self) -> np.ndarray:
        """Horizontal nodes as plane points, shape ``shape + (2,)``.

        A 1-D grid is embedded along the first axis (``x2 = 0``).
        """
        x = self.x1
        if self.dim == 1:
            return np.stack([x, np.zeros_like(x)], axis=-1)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return np.stack([X1, X2], axis=-1)

    def weights(self) -> np.ndarray:
        """Trapezoid (= rectangle, periodic) weights of the boundary pairing."""
        return np.full(self.shape, self.dx**self.dim)

    def refined(self) -> "StripGrid":
        """Grid with halved spacings whose nodes contain the current ones."""
        return StripGrid(self.X, 2 * self.nx, 2 * self.nz - 1, self.dim, self.periodic)


@dataclass(frozen=True)
class StripSolution:
    """Potential on the sigma grid and its four boundary traces."""

    U: np.ndarray  # shape grid.shape + (nz,)
    phi_top: np.ndarray
    psi_top: np.ndarray
    phi_bot: np.ndarray
    psi_bot: np.ndarray
    grid: StripGrid
    h: float
    which: str
    residual: float
    metadata: dict = field(default_factory=dict)

    def physical_z(self, depth) -> np.ndarray:
        return self.grid.sigma * depth[..., None]


def _periodic_d1(n, dx):
    e = np.ones(n)
    D = sp.diags([-e[:-1], e[:-1]], [-1, 1], shape=(n, n), format="lil")
    D[0, n - 1] = -1.0
    D[n - 1, 0] = 1.0
    return D.tocsr() / (2.0 * dx)


def _periodic_d2(n, dx):
    e = np.ones(n)
    D = sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], shape=(n, n), format="lil")
    D[0, n - 1] = 1.0
    D[n - 1, 0] = 1.0
    return D.tocsr() / dx**2


def _vertical_ops(nz, ds):
    e = np.ones(nz)
    D1 = sp.diags([-e[:-1], e[:-1]], [-1, 1], shape=(nz, nz)) / (2.0 * ds)
    D2 = sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], shape=(nz, nz)) / ds**2
    # one-sided second-order first derivatives at sigma = -1 and sigma = 0
    bot = sp.csr_matrix(([-3.0, 4.0, -1.0], ([0, 0, 0], [0, 1, 2])), shape=(1, nz)) / (2 * ds)
    top = sp.csr_matrix(([1.0, -4.0, 3.0], ([0, 0, 0], [nz - 3, nz - 2, nz - 1])),
                        shape=(1, nz)) / (2 * ds)
    return D1.tocsr(), D2.tocsr(), bot.tocsr(), top.tocsr()


def _horizontal_ops(grid):
    d1 = _periodic_d1(grid.nx, grid.dx)
    d2 = _periodic_d2(grid.nx, grid.dx)
    if grid.dim == 1:
        return [d1], [d2]
    eye = sp.identity(grid.nx, format="csr")
    return [sp.kron(d1, eye, "csr"), sp.kron(eye, d1, "csr")], \
        [sp.kron(d2, eye, "csr"), sp.kron(eye, d2, "csr")]


class StripSolver:
    """Factorised discrete mixed problem for one ``(profile, grid, h, which)``.

    ``which = "dirichlet-top"`` prescribes ``(phi_top, psi_bot)``;
    ``which = "neumann-top"`` prescribes ``(psi_top, phi_bot)``.
    """

    def __init__(self, profile, grid: StripGrid, h: float, which: str = "dirichlet-top"):
        if which not in ("dirichlet-top", "neumann-top"):
            raise DomainError(f"unknown boundary problem {which!r}")
        if not h > 0:
            raise DomainError("h must be positive")
        self.profile, self.grid, self.h, self.which = profile, grid, float(h), which
        pts = grid.points().reshape(-1, 2)
        D, gD, HD = profile.evaluate(pts)
        self.depth = D
        nh, nz = grid.n_horizontal, grid.nz
        N = nh * nz
        s = grid.sigma
        Dx, Dxx = _horizontal_ops(grid)
        Ds, Dss, Sbot, Stop = _vertical_ops(nz, grid.dsigma)
        Ih, Iz = sp.identity(nh, format="csr"), sp.identity(nz, format="csr")
        h2 = self.h**2

        def node(v_h, v_z=None):
            # diagonal of a coefficient field c(x, sigma) = v_h(x) * v_z(sigma)
            vz = np.ones(nz) if v_z is None else v_z
            return sp.diags(np.outer(v_h, vz).ravel())

        A = -node(1.0 / D**2) @ sp.kron(Ih, Dss)
        for i in range(grid.dim):
            Di, Dii = gD[:, i], HD[:, i, i]
            a = node(-Di / D, s)  # a_i = d sigma / d x_i at fixed z
            b = node(-Dii / D + 2.0 * Di**2 / D**2, s)
            A = A - h2 * (sp.kron(Dxx[i], Iz) + 2.0 * a @ sp.kron(Dx[i], Ds)
                          + a @ a @ sp.kron(Ih, Dss) + b @ sp.kron(Ih, Ds))
        interior = np.ones((nh, nz))
        interior[:, [0, -1]] = 0.0
        A = sp.diags(interior.ravel()) @ A

        # trace operators (rows indexed by horizontal node)
        Etop = sp.kron(Ih, sp.csr_matrix(([1.0], ([0], [nz - 1])), shape=(1, nz)), "csr")
        Ebot = sp.kron(Ih, sp.csr_matrix(([1.0], ([0], [0])), shape=(1, nz)), "csr")
        self.T_phi_top, self.T_phi_bot = Etop, Ebot
        self.T_psi_top = sp.diags(1.0 / D) @ sp.kron(Ih, Stop, "csr")
        grad_sq = np.sum(gD[:, : grid.dim] ** 2, axis=1)
        T = sp.diags((1.0 + h2 * grad_sq) / D) @ sp.kron(Ih, Sbot, "csr")
        for i in range(grid.dim):
            T = T + h2 * sp.diags(gD[:, i]) @ Dx[i] @ Ebot
        self.T_psi_bot = (-T).tocsr()

        Ptop = sp.kron(Ih, sp.csr_matrix(([1.0], ([nz - 1], [0])), shape=(nz, 1)), "csr")
        Pbot = sp.kron(Ih, sp.csr_matrix(([1.0], ([0], [0])), shape=(nz, 1)), "csr")
        self.P_top, self.P_bot = Ptop, Pbot
        if which == "dirichlet-top":
            rows = Ptop @ Etop + Pbot @ self.T_psi_bot
        else:
            rows = Ptop @ self.T_psi_top + Pbot @ Ebot
        self.A_interior = A.tocsr()
        self.matrix = (A + rows).tocsc()
        self.N = N
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
                self._lu = splu(self.matrix)
        except (RuntimeError, sp.linalg.MatrixRankWarning) as exc:
            raise NumericError("singular strip system") from exc

    # ------------------------------------------------------------------
    def _rhs(self, top, bot, f):
        """Stack boundary data (``(nh, m)`` arrays) and interior forcing."""
        nz = self.grid.nz
        b = self.P_top @ top + self.P_bot @ bot
        if f is not None:
            ff = np.asarray(f).reshape(self.grid.n_horizontal, nz, -1).copy()
            ff[:, [0, -1], :] = 0.0
            b = b + ff.reshape(self.N, -1)
        return b

    def solve_many(self, top, bot, f=None):
        """Solve for several data sets at once; returns ``U`` of shape ``(N, m)``."""
        b = self._rhs(top, bot, f)
        if np.iscomplexobj(b):
            U = self._lu.solve(np.ascontiguousarray(b.real)) \
                + 1j * self._lu.solve(np.ascontiguousarray(b.imag))
        else:
            U = self._lu.solve(np.ascontiguousarray(b))
        if not np.all(np.isfinite(U)):
            raise NumericError("non-finite strip solution")
        return U, b

    def traces(self, U):
        return (self.T_phi_top @ U, self.T_psi_top @ U,
                self.T_phi_bot @ U, self.T_psi_bot @ U)

    def solve(self, top, bot, f=None) -> StripSolution:
        g = self.grid
        top = np.asarray(top).reshape(g.n_horizontal, 1)
        bot = np.asarray(bot).reshape(g.n_horizontal, 1)
        if f is not None:
            f = np.asarray(f).reshape(g.n_horizontal, g.nz, 1)
        U, b = self.solve_many(top, bot, f)
        res = self.matrix @ U - b
        scale = max(1.0, float(np.max(np.abs(b))))
        residual = float(np.max(np.abs(res))) / scale
        meta = {"depth_min": float(self.depth.min()), "depth_max": float(self.depth.max())}
        res_note = _resolution_note(g, self.h, top if self.which == "dirichlet-top" else top)
        if res_note:
            meta["resolution_warning"] = res_note
        tr = [t.reshape(g.shape) for t in self.traces(U[:, 0])]
        return StripSolution(U[:, 0].reshape(g.shape + (g.nz,)), *tr, grid=g, h=self.h,
                             which=self.which, residual=residual, metadata=meta)


def _resolution_note(grid, h, data):
    """Flag data whose dominant momentum has fewer than 8 nodes per wavelength."""
    v = np.asarray(data).reshape(grid.shape)
    if not np.any(v):
        return None
    spectrum = np.abs(np.fft.fftn(v))
    k = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
    kk = np.sqrt(sum(K**2 for K in np.meshgrid(*([k] * grid.dim), indexing="ij")))
    active = spectrum > 1e-8 * spectrum.max()
    kmax = float(kk[active].max())
    if kmax == 0:
        return None
    wavelength_nodes = grid.nx / kmax
    if wavelength_nodes < 8:
        return f"only {wavelength_nodes:.1f} nodes per wavelength (h={h})"
    return None


def solve_mixed(profile, grid: StripGrid, h: float, data: dict,
                which: str = "dirichlet-top") -> StripSolution:
    """Solve one mixed boundary-value problem.

    ``data`` holds ``phi_top`` and ``psi_bot`` (``dirichlet-top``) or
    ``psi_top`` and ``phi_bot`` (``neumann-top``), each on ``grid.shape``,
    and optionally the forcing ``f`` on ``grid.shape + (nz,)``.  Missing
    boundary entries default to zero.
    """
    keys = ("phi_top", "psi_bot") if which == "dirichlet-top" else ("psi_top", "phi_bot")
    zero = np.zeros(grid.shape)
    top = np.asarray(data.get(keys[0], zero))
    bot = np.asarray(data.get(keys[1], zero))
    for v in (top, bot):
        if v.shape != grid.shape:
            raise DomainError(f"boundary data must have shape {grid.shape}")
    return StripSolver(profile, grid, h, which).solve(top, bot, data.get("f"))


# ----------------------------------------------------------------------
# DtN assembly
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DtNMatrices:
    """Blocks of ``(phi_top, psi_bot) -> (psi_top, phi_bot)`` in a boundary basis.

    ``basis`` is ``"delta"`` (nodal values) or ``"fourier"`` (coefficients of
    ``exp(i pi k.x / X)`` for the integer vectors in ``modes``).  ``weights``
    are the Gram weights of the basis in the ``dx`` pairing.
    """

    L11: np.ndarray
    L12: np.ndarray
    L21: np.ndarray
    L22: np.ndarray
    h: float
    grid: StripGrid
    basis: str
    weights: np.ndarray
    modes: np.ndarray | None = None

    @property
    def momenta(self) -> np.ndarray:
        """Semiclassical momenta ``h pi k / X`` of the Fourier modes."""
        if self.modes is None:
            raise DomainError("nodal basis has no momentum labels")
        return self.h * np.pi * self.modes / self.grid.X

    def restrict(self, kmax: int) -> "DtNMatrices":
        """Compress a Fourier-basis assembly to the band ``max|k_i| <= kmax``."""
        if self.basis != "fourier":
            raise DomainError("band restriction needs a Fourier basis")
        keep = np.max(np.abs(self.modes), axis=1) <= kmax
        ix = np.ix_(keep, keep)
        return DtNMatrices(self.L11[ix], self.L12[ix], self.L21[ix], self.L22[ix], self.h,
                           self.grid, self.basis, self.weights[keep], self.modes[keep])

    def apply(self, phi_top, psi_bot):
        """Apply the block operator to nodal data; returns nodal ``(psi_top, phi_bot)``."""
        a = np.asarray(phi_top).ravel()
        b = np.asarray(psi_bot).ravel()
        if self.basis == "delta":
            out = (self.L11 @ a + self.L12 @ b, self.L21 @ a + self.L22 @ b)
        else:
            E = _fourier_basis(self.grid, self.modes)
            ca, cb = _project(E, a, self.grid), _project(E, b, self.grid)
            out = (E @ (self.L11 @ ca + self.L12 @ cb), E @ (self.L21 @ ca + self.L22 @ cb))
        return tuple(o.reshape(self.grid.shape) for o in out)


def _all_modes(grid):
    k = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx).astype(int)
    if grid.dim == 1:
        return k[:, None]
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    return np.stack([K1.ravel(), K2.ravel()], axis=1)


def _fourier_basis(grid, modes):
    pts = grid.points().reshape(-1, 2)[:, : grid.dim]
    return np.exp(1j * np.pi * (pts @ modes.T) / grid.X)


def _project(E, v, grid):
    # orthogonal projection; columns of E are orthogonal with norm^2 = n_h
    return (E.conj().T @ v) / grid.n_horizontal


def assemble_dtn(profile, grid: StripGrid, h: float, basis: str = "fourier",
                 modes=None) -> DtNMatrices:
    """Assemble the dense DtN blocks column by column from one factorisation.

    ``modes`` selects Fourier modes (integer vectors, default: the full
    lattice, which makes the assembly exact on every grid function).
    """
    if grid.nx > DENSE_CAP:
        raise PreconditionError(f"dense assembly is capped at {DENSE_CAP} nodes per axis")
    solver = StripSolver(profile, grid, h, "dirichlet-top")
    nh = grid.n_horizontal
    if basis == "delta":
        cols = np.eye(nh)
        weights = grid.weights().ravel()
        mode_arr = None
    elif basis == "fourier":
        mode_arr = _all_modes(grid) if modes is None else np.atleast_2d(np.asarray(modes, int))
        if mode_arr.shape[1] != grid.dim:
            mode_arr = mode_arr.T
        cols = _fourier_basis(grid, mode_arr)
        weights = np.full(mode_arr.shape[0], (2.0 * grid.X) ** grid.dim)
    else:
        raise DomainError(f"unknown basis {basis!r}")
    m = cols.shape[1]
    zero = np.zeros_like(cols)
    U, _ = solver.solve_many(np.hstack([cols, zero]), np.hstack([zero, cols]))
    psi_top, phi_bot = solver.T_psi_top @ U, solver.T_phi_bot @ U
    if basis == "fourier":
        psi_top, phi_bot = _project(cols, psi_top, grid), _project(cols, phi_bot, grid)
    return DtNMatrices(psi_top[:, :m], psi_top[:, m:], phi_bot[:, :m], phi_bot[:, m:],
                       float(h), grid, basis, weights, mode_arr)


# ----------------------------------------------------------------------
# adjointness
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class AdjointnessReport:
    r11: float
    r22: float
    r12: float
    tol: float

    @property
    def ratios(self):
        return (self.r11, self.r22, self.r12)

    @property
    def passed(self) -> bool:
        return max(self.ratios) <= self.tol


def weighted_adjoint(A, w):
    """Adjoint of ``A`` in the pairing ``<u, v> = sum w u conj(v)``."""
    w = np.asarray(w, float)
    return (A.conj().T * w[None, :]) / w[:, None]


def adjointness_report(matrices: DtNMatrices, weights=None, tol=5e-2) -> AdjointnessReport:
    """Relative defects ``|L11 - L11*|``, ``|L22 - L22*|``, ``|L21* + L12|``.

    Norms are spectral norms in the weighted pairing (computed after the
    similarity ``W^(1/2) . W^(-1/2)``).
    """
    w = matrices.weights if weights is None else np.asarray(weights, float).ravel()
    if np.any(w <= 0):
        raise DomainError("pairing weights must be positive")
    sq = np.sqrt(w)

    def wnorm(A):
        return np.linalg.norm(sq[:, None] * A / sq[None, :], 2)

    m = matrices

    def ratio(num, den):
        d = wnorm(den)
        return 0.0 if d == 0 else float(wnorm(num) / d)

    return AdjointnessReport(
        ratio(m.L11 - weighted_adjoint(m.L11, w), m.L11),
        ratio(m.L22 - weighted_adjoint(m.L22, w), m.L22),
        ratio(weighted_adjoint(m.L21, w) + m.L12, m.L12),
        tol)


def adjointness_study(profile, X, h, levels=((32, 24), (64, 48), (128, 96)), dim=1,
                      kmax=None, tol=5e-2):
    """Adjointness defects on the fixed band ``|k| <= kmax`` under refinement.

    ``kmax`` defaults to ``nx / 8`` of the coarsest level so that every level
    resolves the compared modes.  Returns ``(reports, rates)`` where ``rates``
    are the observed orders between consecutive levels.
    """
    kmax = levels[0][0] // 8 if kmax is None else kmax
    reports = []
    for nx, nz in levels:
        mats = assemble_dtn(profile, StripGrid(X, nx, nz, dim), h).restrict(kmax)
        reports.append(adjointness_report(mats, tol=tol))
    R = np.array([r.ratios for r in reports])
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log2(R[:-1] / R[1:])
    return reports, rates


# ----------------------------------------------------------------------
# symbol residual study
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ResidualStudy:
    h: np.ndarray
    residual: np.ndarray
    discretization: np.ndarray  # |Richardson correction| / |phi|
    slope: float
    fit_range: tuple
    flagged: bool
    threshold: float = 1.8

    @property
    def passed(self) -> bool:
        return bool(self.slope >= self.threshold)


def gaussian_wavepacket(width=1.5, p0=1.0, center=0.0) -> Callable:
    """Test function ``exp(-(x-c)^2/w^2) cos(p0 (x-c) / h)`` on a 1-D grid."""
    def phi(x, h):
        y = x - center
        return np.exp(-(y / width) ** 2) * np.cos(p0 * y / h)
    return phi


def _nx_for(X, h, p_top, nodes_per_wavelength):
    need = 2.0 * X * p_top / (2.0 * np.pi * h) * nodes_per_wavelength
    return int(2 ** np.ceil(np.log2(max(need, 8))))


def fit_slope(h, r):
    """Least-squares slope of ``log r`` against ``log h``."""
    return float(np.polyfit(np.log(h), np.log(r), 1)[0])


def symbol_residual_study(profile, hs, phi=None, *, X=14.0, nz=24,
                          nodes_per_wavelength=24, p_top=2.0, perturbation=None,
                          threshold=1.8) -> ResidualStudy:
    """Residual ``|L11 phi - Op(symbol) phi| / |phi|`` as a function of ``h``.

    The strip value of ``L11 phi`` is Richardson-extrapolated from the grid
    pair ``(nx, nz)``, ``(2 nx, 2 nz - 1)`` and compared with the quantised
    principal symbol.  ``perturbation(D, q)``, if given, is added to the
    symbol with a factor ``h``; this is the control run whose residual must
    only decay like ``h``.
    """
    from .pdo import GridField, DepthSymbol, apply_symbol

    hs = np.sort(np.asarray(hs, float))[::-1]
    if hs.size < 2:
        raise InsufficientDataError("residual study needs at least two values of h")
    phi = gaussian_wavepacket() if phi is None else phi
    res, disc = [], []
    for h in hs:
        nx = _nx_for(X, h, p_top, nodes_per_wavelength)
        coarse = StripGrid(X, nx, nz)
        fine = coarse.refined()
        data = phi(coarse.x1, h)
        vals = []
        for g in (coarse, fine):
            top = phi(g.x1, h)
            sol = StripSolver(profile, g, h).solve(top, np.zeros(g.shape))
            vals.append(sol.psi_top)
        richardson = (4.0 * vals[1][::2] - vals[0]) / 3.0
        if perturbation is None:
            sym = DepthSymbol.principal(profile)
        else:
            sym = DepthSymbol(lambda D, q, h=h: dtn_symbol(D, q) + h * perturbation(D, q),
                              profile, "L0 + h*c")
        field = GridField(data.astype(complex), X, h, dim=1)
        op = apply_symbol(field, sym).values.real
        norm = np.linalg.norm(data)
        res.append(np.linalg.norm(richardson - op) / norm)
        disc.append(np.linalg.norm(richardson - vals[1][::2]) / norm)
    res, disc = np.array(res), np.array(disc)
    # keep the leading stretch where residuals decrease with h
    stop = len(hs)
    for i in range(1, len(hs)):
        if not res[i] < res[i - 1]:
            stop = i
            break
    flagged = stop < len(hs)
    if stop < 2:
        slope = float("nan")
    else:
        slope = fit_slope(hs[:stop], res[:stop])
    return ResidualStudy(hs, res, disc, slope, (0, stop), flagged, threshold)
