"""Semiclassical quantisation on periodic grids.

A :class:`GridField` samples a function on ``[-X, X)^dim`` with ``N`` nodes per
axis.  Its discrete momentum lattice is ``p_k = h * (pi / X) * k`` with
integer ``k`` in FFT order, so that ``exp(i p_k x / h)`` are the periodic
Fourier modes.

Symbols are quantised with the symmetrised standard rule
``(Op_KN(a) + Op_KN(conj a)^*) / 2`` where ``Op_KN(a) u(x) = sum_k a(x, p_k) u_k
exp(i p_k x / h)``.  Three application paths exist:

* ``Multiplier``: ``a = m(|p|)``, applied exactly by FFT;
* ``DepthSymbol``: ``a = F(D(x), |p|)``, applied through a Chebyshev table in
  the depth variable (one multiplier per node);
* any other callable ``a(x, p)``: direct per-point synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .dispersion import characteristic_radius, dtn_symbol
from .errors import (ConvergenceError, DomainError, InsufficientDataError, NumericError,
                     PreconditionError, ResolutionError)


def _is_pow2(n):
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridField:
    """Complex samples on a periodic box together with ``(X, h)``."""

    values: np.ndarray
    X: float
    h: float
    dim: int = 1
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, complex)
        object.__setattr__(self, "values", v)
        if self.dim not in (1, 2) or v.ndim != self.dim or len(set(v.shape)) != 1:
            raise DomainError("values must be an N^dim array")
        if not _is_pow2(v.shape[0]):
            raise DomainError("nodes per axis must be a power of two")
        if not (self.X > 0 and self.h > 0):
            raise DomainError("X and h must be positive")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return 2.0 * self.X / self.N

    @property
    def x1(self) -> np.ndarray:
        return -self.X + self.dx * np.arange(self.N)

    @property
    def k1(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, d=1.0 / self.N)

    def points(self) -> np.ndarray:
        """Nodes as plane points (a 1-D box sits on ``x2 = 0``)."""
        if self.dim == 1:
            return np.stack([self.x1, np.zeros(self.N)], axis=-1)
        A, B = np.meshgrid(self.x1, self.x1, indexing="ij")
        return np.stack([A, B], axis=-1)

    def momenta(self) -> np.ndarray:
        """Lattice momenta as plane vectors, shape ``(N,)*dim + (2,)``."""
        p = self.h * np.pi / self.X * self.k1
        if self.dim == 1:
            return np.stack([p, np.zeros(self.N)], axis=-1)
        A, B = np.meshgrid(p, p, indexing="ij")
        return np.stack([A, B], axis=-1)

    def pabs(self) -> np.ndarray:
        return np.linalg.norm(self.momenta(), axis=-1)

    def with_values(self, values, **meta) -> "GridField":
        return replace(self, values=np.asarray(values, complex),
                       metadata={**self.metadata, **meta})

    def inner(self, other) -> complex:
        o = other.values if isinstance(other, GridField) else np.asarray(other)
        return complex(np.sum(self.values * np.conj(o)) * self.dx**self.dim)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.dx**self.dim))

    def nodes_per_wavelength(self, pmax) -> float:
        return 2.0 * np.pi * self.h / (np.max(pmax) * self.dx)

    @classmethod
    def zeros(cls, N, X, h, dim=1):
        return cls(np.zeros((N,) * dim, complex), X, h, dim)


# ----------------------------------------------------------------------
# symbols
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Multiplier:
    """x-independent radial symbol ``m(|p|)``."""

    fn: Callable

    def __call__(self, x, p):
        return self.fn(np.linalg.norm(p, axis=-1)) * np.ones(np.shape(x)[:-1])


@dataclass(frozen=True)
class DepthSymbol:
    """Symbol ``F(D(x), |p|)`` attached to a depth profile."""

    F: Callable
    profile: object
    name: str = ""

    @classmethod
    def principal(cls, profile) -> "DepthSymbol":
        return cls(dtn_symbol, profile, "L0")

    def __call__(self, x, p):
        return self.F(self.profile.depth(x), np.linalg.norm(p, axis=-1))


def _multiplier(field, m):
    axes = tuple(range(field.dim))
    return np.fft.ifftn(m * np.fft.fftn(field.values, axes=axes), axes=axes)


def _cheb_nodes(a, b, n):
    j = np.arange(n)
    t = np.cos(np.pi * (2 * j + 1) / (2 * n))
    return 0.5 * (a + b) + 0.5 * (b - a) * t, t


def _lagrange_basis(nodes, pts):
    """Values ``l_j(pts)`` of the Lagrange basis on ``nodes`` (barycentric)."""
    n = nodes.size
    w = np.array([1.0 / np.prod(nodes[j] - np.delete(nodes, j)) for j in range(n)])
    diff = pts[..., None] - nodes
    exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0)
    diff = np.where(exact, 1.0, diff)
    terms = w / diff
    L = terms / np.sum(terms, axis=-1, keepdims=True)
    hit = np.any(exact, axis=-1)
    if np.any(hit):
        L[hit] = exact[hit].astype(float)
    return np.moveaxis(L, -1, 0)


def depth_table(F, depths, q, tol=1e-12, n_max=128):
    """Chebyshev table for ``F(D, q)`` over ``D`` in ``[min depths, max depths]``.

    Returns ``(nodes, basis, table, n)`` where ``basis[j]`` is the Lagrange
    polynomial ``l_j`` at every depth sample and ``table[j] = F(nodes[j], q)``.
    The node count doubles from 8 until the interpolant matches ``F`` at a
    set of check depths to ``tol`` (relative to ``max |F|``).
    """
    a, b = float(np.min(depths)), float(np.max(depths))
    check = np.linspace(a, b, 17)
    scale = np.max(np.abs(F(b, q))) + np.max(np.abs(F(a, q))) + 1e-300
    n = 8
    while True:
        nodes, _ = _cheb_nodes(a, b, n)
        table = np.stack([F(d, q) for d in nodes])
        Lc = _lagrange_basis(nodes, check)
        approx = np.tensordot(Lc, table, axes=(0, 0))
        exact = np.stack([F(d, q) for d in check])
        err = np.max(np.abs(approx - exact)) / scale
        if err <= tol or n >= n_max:
            break
        n *= 2
    if err > tol:
        raise NumericError(f"depth table did not reach {tol:g} with {n} nodes")
    return nodes, _lagrange_basis(nodes, depths), table, n


def _direct(field, symbol, adjoint=False, chunk=256):
    """Per-point synthesis of ``Op_KN(a)``, or of ``Op_KN(conj a)^*``."""
    x = field.points().reshape(-1, 2)
    p = field.momenta().reshape(-1, 2)
    xs = x[:, : field.dim]
    ks = p[:, : field.dim] / (field.h * np.pi / field.X)
    n = x.shape[0]
    u = field.values.ravel()

    def modes(sl):
        return np.exp(1j * np.pi / field.X * (xs[sl] @ ks.T))

    out = np.zeros(n, complex)
    if not adjoint:
        uhat = np.zeros(n, complex)
        for s in range(0, n, chunk):
            sl = slice(s, s + chunk)
            uhat += modes(sl).conj().T @ u[sl]
        uhat /= n
        for s in range(0, n, chunk):
            sl = slice(s, s + chunk)
            out[sl] = (symbol(x[sl, None, :], p[None, :, :]) * modes(sl)) @ uhat
    else:
        c = np.zeros(n, complex)
        for s in range(0, n, chunk):
            sl = slice(s, s + chunk)
            A = symbol(x[sl, None, :], p[None, :, :])
            c += (A * modes(sl).conj()).T @ u[sl]
        for s in range(0, n, chunk):
            sl = slice(s, s + chunk)
            out[sl] = modes(sl) @ c / n
    if not np.all(np.isfinite(out)):
        raise NumericError("symbol produced non-finite values")
    return out.reshape(field.values.shape)


def apply_symbol(field: GridField, symbol, method: str = "auto", tol=1e-12) -> GridField:
    """Apply the symmetrised standard quantisation of ``symbol`` to ``field``.

    The operator is ``(Op_KN(a) + Op_KN(conj a)^*) / 2``, which for real
    symbols is the self-adjoint part of ``Op_KN(a)``.
    """
    if method == "auto":
        method = ("multiplier" if isinstance(symbol, Multiplier)
                  else "table" if isinstance(symbol, DepthSymbol) else "direct")
    q = field.pabs()
    if method == "multiplier":
        m = symbol(np.zeros(q.shape + (2,)), field.momenta())
        if not np.all(np.isfinite(m)):
            raise NumericError("symbol produced non-finite values")
        v = _multiplier(field, m)
        return field.with_values(v, method="multiplier")
    if method == "table":
        if not isinstance(symbol, DepthSymbol):
            raise DomainError("table application needs a DepthSymbol")
        D = symbol.profile.depth(field.points())
        if np.ptp(D) <= 1e-14 * np.max(D):
            m = symbol.F(float(D.flat[0]), q)
            if not np.all(np.isfinite(m)):
                raise NumericError("symbol produced non-finite values")
            return field.with_values(_multiplier(field, m), method="multiplier")
        _, basis, table, n = depth_table(symbol.F, D, q, tol=tol)
        if not np.all(np.isfinite(table)):
            raise NumericError("symbol produced non-finite values")
        fwd = np.zeros_like(field.values)
        adj = np.zeros_like(field.values)
        for lj, Fj in zip(basis, table):
            fwd += lj * _multiplier(field, Fj)
            adj += _multiplier(field.with_values(lj * field.values), Fj)
        return field.with_values(0.5 * (fwd + adj), method="table", table_nodes=n)
    if method == "direct":
        v = 0.5 * (_direct(field, symbol) + _direct(field, symbol, adjoint=True))
        return field.with_values(v, method="direct")
    raise DomainError(f"unknown application method {method!r}")


# ----------------------------------------------------------------------
# resolvent
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ResolventQuery:
    """Spectral parameters of ``(Op(L0) - E - i eps)^{-1}`` and of its weights."""

    E: float
    eps: float
    s: float = 1.0
    tol: float = 1e-8
    max_iter: int = 2000

    def __post_init__(self):
        if not self.E > 0:
            raise DomainError("energy must be positive")
        if self.eps < 0:
            raise DomainError("absorption must be nonnegative")


def _check_resolution(field, profile, E, min_nodes=6.0):
    D = profile.depth(field.points())
    rmax = float(np.max(characteristic_radius(D, E)))
    if field.nodes_per_wavelength(rmax) < min_nodes:
        raise ResolutionError(
            f"{field.nodes_per_wavelength(rmax):.1f} nodes per wavelength (< {min_nodes})")


def resolvent_solve(f: GridField, query: ResolventQuery, profile, sign=+1,
                    x0=None) -> GridField:
    """Solve ``(Op(L0) - E - i sign eps) u = f`` to relative residual ``query.tol``.

    Constant depth is diagonal in Fourier space.  Otherwise GMRES is run with
    a constant-coefficient parametrix (the exact inverse at depth ``D0``) as
    right preconditioner; the true residual is checked on return.
    """
    if not query.eps > 0:
        raise PreconditionError("resolvent solves need eps > 0")
    _check_resolution(f, profile, query.E)
    z = query.E + 1j * sign * query.eps
    if not np.any(f.values):
        return f.with_values(np.zeros_like(f.values), residual=0.0, iterations=0)
    q = f.pabs()
    sym = DepthSymbol.principal(profile)
    D = profile.depth(f.points())
    if np.ptp(D) <= 1e-14 * np.max(D):
        u = _multiplier(f, 1.0 / (dtn_symbol(float(D.flat[0]), q) - z))
        out = f.with_values(u, method="diagonal", iterations=0)
    else:
        shape = f.values.shape
        pre = 1.0 / (dtn_symbol(profile.D0, q) - z)

        def op(v):
            g = f.with_values(v.reshape(shape))
            return (apply_symbol(g, sym).values - z * g.values).ravel()

        def prec(v):
            return _multiplier(f.with_values(v.reshape(shape)), pre).ravel()

        n = f.values.size
        A = LinearOperator((n, n), matvec=lambda v: op(prec(v)), dtype=complex)
        it = [0]

        def count(_):
            it[0] += 1

        y, info = gmres(A, f.values.ravel(), rtol=0.3 * query.tol, atol=0.0, restart=60,
                        maxiter=max(1, query.max_iter // 60), callback=count,
                        callback_type="pr_norm")
        u = prec(y).reshape(shape)
        out = f.with_values(u, method="gmres", iterations=it[0])
    resid = apply_symbol(out, sym).values - z * out.values - f.values
    rel = float(np.linalg.norm(resid) / np.linalg.norm(f.values))
    if not rel <= query.tol:
        raise ConvergenceError(f"resolvent residual {rel:.3g} > {query.tol:g}", achieved=rel)
    return out.with_values(out.values, residual=rel)


# ----------------------------------------------------------------------
# weighted resolvent norms
# ----------------------------------------------------------------------
def bracket_weight(field: GridField, s: float, x0=None) -> np.ndarray:
    """``<x - x0>^{-s}`` with the box-periodised distance."""
    x = field.points()[..., : field.dim]
    c = np.zeros(field.dim) if x0 is None else np.asarray(x0, float)[: field.dim]
    y = x - c
    L = 2.0 * field.X
    y = (y + field.X) % L - field.X
    return (1.0 + np.sum(y * y, axis=-1)) ** (-s / 2)


def power_norm(apply, adjoint, shape, tol=1e-4, max_iter=200, seed=0):
    """Largest singular value of ``apply`` by power iteration on ``A^* A``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    history = []
    for _ in range(max_iter):
        w = adjoint(apply(v))
        lam = np.linalg.norm(w)
        history.append(float(np.sqrt(lam)))
        if lam == 0:
            return 0.0, history
        v = w / lam
        if len(history) > 2 and abs(history[-1] - history[-2]) <= tol * history[-1]:
            return history[-1], history
    raise ConvergenceError("power iteration stagnated", achieved=history)


@dataclass(frozen=True)
class ScalingReport:
    h: np.ndarray
    norms: np.ndarray
    slope: float
    eps: np.ndarray
    window: tuple
    details: list = field(default_factory=list, compare=False)

    @property
    def passed(self) -> bool:
        return self.window[0] <= self.slope <= self.window[1]


def grid_for(h, E, D_min, X, dim=1, nodes_per_wavelength=8.0):
    """Smallest power-of-two ``N`` giving the requested sampling of the shell."""
    r = float(characteristic_radius(D_min, E))
    need = 2.0 * X * r / (2.0 * np.pi * h) * nodes_per_wavelength
    return int(2 ** np.ceil(np.log2(max(need, 8))))


def weighted_resolvent_norm(profile, query: ResolventQuery, hs, *, X=32.0, dim=1,
                            eps_coef=1.0, fixed_eps=None, richardson=True,
                            nodes_per_wavelength=8.0, x0=None, window=(0.7, 1.3),
                            power_tol=1e-4, check_nontrapping=True,
                            max_power_iter=200) -> ScalingReport:
    """Estimate ``|<x>^{-s} (Op(L0) - E - i eps)^{-1} <x>^{-s}|`` as ``h`` shrinks.

    ``eps = eps_coef * h^2`` (or ``fixed_eps``).  With ``richardson`` the norm
    is also computed at ``2 eps`` and extrapolated linearly to ``eps = 0``.
    The returned slope is that of ``log n`` against ``log(1/h)``.
    """
    if not query.s > 0.5:
        raise PreconditionError("weighted estimates need s > 1/2")
    hs = np.asarray(hs, float)
    if hs.size < 2:
        raise InsufficientDataError("scaling fit needs at least two values of h")
    if check_nontrapping:
        from .rays import nontrapping_check
        rep = nontrapping_check(profile, query.E, dim=dim)
        if not rep.passed:
            raise PreconditionError("energy is trapping for this profile")
    norms, epss, details = [], [], []
    D_min = profile.min_depth()
    for h in hs:
        N = grid_for(h, query.E, D_min, X, dim, nodes_per_wavelength)
        base = GridField.zeros(N, X, h, dim)
        w = bracket_weight(base, query.s, x0)
        eps = fixed_eps if fixed_eps is not None else eps_coef * h * h
        levels = [eps, 2 * eps] if (richardson and fixed_eps is None) else [eps]
        vals = []
        for e in levels:
            qe = replace(query, eps=e)

            def A(v, qe=qe):
                return w * resolvent_solve(base.with_values(w * v), qe, profile).values

            def AH(v, qe=qe):
                return w * resolvent_solve(base.with_values(w * v), qe, profile,
                                           sign=-1).values

            nrm, hist = power_norm(A, AH, base.values.shape, tol=power_tol,
                                   max_iter=max_power_iter)
            vals.append(nrm)
        n = 2 * vals[0] - vals[1] if len(vals) == 2 else vals[0]
        norms.append(n)
        epss.append(eps)
        details.append({"h": float(h), "N": N, "eps": eps, "norms": vals})
    norms = np.array(norms)
    slope = float(np.polyfit(np.log(1.0 / hs), np.log(norms), 1)[0])
    return ScalingReport(hs, norms, slope, np.array(epss), window, details)
