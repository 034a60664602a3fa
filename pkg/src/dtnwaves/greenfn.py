"""Leading-order outgoing Green function for a localized source.

The source is ``f(x) = (2 pi h)^{-1} i * int exp(i p.(x - x0)/h) A(p) dp`` with
a radial bump ``A`` supported near the momentum circle ``|p| = r(x0, E)``.
The asymptotic solution of ``(Op(L0) - E - i0) u = f`` is assembled as

* a non-characteristic part, ``(1 - rho) A / (L0 - E)`` quantised at ``x0``;
* a flow-out part, one WKB term per ray branch of the Finsler fan through
  ``x`` with amplitude transported by ``|J|^{-1/2}`` and the Maslov phase;
* a transitional part, the short-time piece ``0 <= t <= t0`` of the forward
  propagator, evaluated with coefficients frozen at ``x0``.

The constant-depth kernel is also evaluated exactly by radial reduction to a
Bessel integral, which serves as the oracle for the assembled field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .dispersion import characteristic_radius, dtn_symbol, dtn_symbol_dq, bottom_symbol
from .errors import (DomainError, InsufficientDataError, NumericError, PreconditionError,
                     ResolutionError)
from .pdo import DepthSymbol, GridField, ResolventQuery, apply_symbol, resolvent_solve

GL_MAX = 1 << 15


def smooth_step(s):
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.clip(np.asarray(s, float), 0.0, 1.0)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def bump(s):
    """``exp(1 - 1/(1 - s^2))`` on ``|s| < 1``, zero outside; ``bump(0) = 1``."""
    s = np.asarray(s, float)
    inside = np.abs(s) < 1
    d = np.where(inside, 1.0 - s * s, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / d), 0.0)


# ----------------------------------------------------------------------
# source
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SourceModel:
    """Localized source at ``x0`` with radial momentum amplitude.

    ``A(p) = scale * bump((|p|/r0 - 1) / band)`` where ``r0 = r(D(x0), E)``.
    """

    x0: tuple
    E: float
    h: float
    r0: float
    D0: float
    band: float = 0.5
    scale: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if not (self.E > 0 and self.h > 0 and self.r0 > 0 and self.D0 > 0):
            raise DomainError("E, h, r0 and the source depth must be positive")
        if not 0 < self.band < 1:
            raise DomainError("amplitude band must lie in (0, 1)")

    @classmethod
    def at(cls, profile, x0, E, h, band=0.5, scale=1.0) -> "SourceModel":
        D = float(profile.depth(np.asarray(x0, float)))
        return cls(tuple(x0), E, h, float(characteristic_radius(D, E)), D, band, scale)

    @property
    def support(self):
        return self.r0 * (1.0 - self.band), self.r0 * (1.0 + self.band)

    def amplitude(self, q):
        """Radial profile ``a(|p|)``."""
        return self.scale * bump((np.asarray(q, float) / self.r0 - 1.0) / self.band)

    def scaled(self, factor) -> "SourceModel":
        return replace(self, scale=self.scale * factor)

    def l2_norm(self) -> float:
        """``|f|_2 = |A|_2`` (independent of ``h``)."""
        a, b = self.support
        val, _ = integrate.quad(lambda q: abs(self.amplitude(q)) ** 2 * q, a, b,
                                epsabs=0, epsrel=1e-12)
        return float(np.sqrt(2.0 * np.pi * val))


def source_field(model: SourceModel, grid: GridField) -> GridField:
    """Sample ``f`` on a periodic 2-D grid by summing ``A`` over the momentum lattice."""
    if grid.dim != 2:
        raise DomainError("the source model lives in the plane")
    qmax = model.support[1]
    pnyq = grid.h * np.pi / grid.X * (grid.N // 2)
    if pnyq <= qmax:
        raise ResolutionError(f"lattice reaches |p| = {pnyq:.3g} < {qmax:.3g}")
    dp = grid.h * np.pi / grid.X
    k = grid.k1
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    c = model.amplitude(grid.pabs()) * np.exp(
        -1j * np.pi / grid.X * (K1 * model.x0[0] + K2 * model.x0[1]))
    # nodes x_j = -X + j dx, so exp(i pi k x_j / X) = (-1)^k exp(2 pi i k j / N)
    c = c * (-1.0) ** (K1 + K2)
    vals = np.fft.ifftn(c) * grid.N**2
    vals *= 1j * dp**2 / (2.0 * np.pi * grid.h)
    return grid.with_values(vals, source=True)


# ----------------------------------------------------------------------
# exact constant-depth kernel
# ----------------------------------------------------------------------
def _gauss(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _radial_gl(integrand, a, b, R, tol=1e-10, n0=256):
    """``int_a^b integrand(q, R) dq`` for a vector of ``R`` by doubling Gauss-Legendre."""
    prev = None
    n = n0
    while n <= GL_MAX:
        q, w = _gauss(a, b, n)
        val = integrand(q[None, :], R[:, None]) @ w
        if prev is not None:
            err = np.max(np.abs(val - prev))
            scale = max(np.max(np.abs(val)), 1e-300)
            if err <= tol * scale:
                return val, err / scale
        prev = val
        n *= 2
    raise NumericError("radial quadrature did not converge")


def exact_green_constant_depth(D0, E, h, eps, points, x0=(0.0, 0.0), model=None,
                               return_error=False):
    """Exact ``(Op(L0) - E - i eps)^{-1} f`` at constant depth ``D0``.

    Radial reduction gives ``u(R) = (i/h) int J0(qR/h) a(q) q / (L0(q) - E - i eps) dq``.
    For ``eps = 0`` the pole at ``q = r0`` is taken as principal value plus
    ``i pi`` times the residue (the outgoing limit).  The principal value is
    computed by subtracting the pole; ``eps > 0`` uses adaptive quadrature.
    """
    if not (D0 > 0 and E > 0 and h > 0):
        raise DomainError("D0, E and h must be positive")
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    if model is None:
        model = SourceModel(tuple(x0), E, h, float(characteristic_radius(D0, E)), D0)
    pts = np.asarray(points, float)
    R = np.linalg.norm(pts - np.asarray(model.x0), axis=-1)
    shape = R.shape
    R = R.ravel()
    r0 = float(characteristic_radius(D0, E))
    a, b = model.support
    if eps == 0:
        if not a < r0 < b:
            raise DomainError("source amplitude must straddle the shell")
        v0 = float(dtn_symbol_dq(D0, r0))

        def g(q, RR):
            d = q - r0
            gap = dtn_symbol(D0, q) - E
            near = np.abs(d) < 1e-9 * r0
            ratio = np.where(near, 1.0 / v0, d / np.where(near, 1.0, gap))
            return special.j0(q * RR / h) * model.amplitude(q) * q * ratio

        g0 = g(np.array([[r0]]), R[:, None])[:, 0]

        def regular(q, RR):
            d = q - r0
            return (g(q, RR) - g0[:, None]) / d

        pv, err = _radial_gl(regular, a, b, R)
        pv = pv + g0 * np.log((b - r0) / (r0 - a))
        vals = 1j / h * (pv + 1j * np.pi * g0)
    else:
        vals = np.empty(R.size, complex)
        err = 0.0
        for j, RR in enumerate(R):
            def fn(q, RR=RR):
                return special.j0(q * RR / h) * model.amplitude(q) * q \
                    / (dtn_symbol(D0, q) - E - 1j * eps)
            val, e = integrate.quad(fn, a, b, points=[r0] if a < r0 < b else None,
                                    limit=4000, epsabs=0, epsrel=1e-10, complex_func=True)
            e = abs(e)  # complex_func reports real and imaginary error estimates
            if not e <= 1e-6 * max(abs(val), 1e-300):
                raise NumericError(f"quadrature error {e:.2g} at R = {RR:.3g}")
            vals[j] = 1j / h * val
            err = max(err, e / max(abs(val), 1e-300))
    vals = vals.reshape(shape)
    if not err <= 1e-6:
        raise NumericError(f"oracle quadrature error {err:.2g}")
    return (vals, float(err)) if return_error else vals


def outgoing_asymptote(D0, E, h, R, model=None):
    """Large-distance form ``-(pi/h) H0(r0 R/h) a(r0) r0 / L0'(r0)``."""
    r0 = float(characteristic_radius(D0, E))
    a0 = 1.0 if model is None else model.amplitude(r0)
    return -np.pi / h * special.hankel1(0, r0 * np.asarray(R) / h) * a0 * r0 \
        / dtn_symbol_dq(D0, r0)


# ----------------------------------------------------------------------
# cutoffs and the frozen short-range kernel
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Cutoffs:
    """``rho`` equals 1 for ``||p|/r0 - 1| <= rho_flat`` and vanishes past
    ``rho_edge``; ``theta`` equals 1 on ``[0, theta_flat * t0]`` and vanishes at
    ``t0 = t0_widths * h / speed``."""

    rho_flat: float = 0.3
    rho_edge: float = 0.45
    t0_widths: float = 10.0
    theta_flat: float = 0.5

    def __post_init__(self):
        if not 0 < self.rho_flat < self.rho_edge:
            raise DomainError("need 0 < rho_flat < rho_edge")
        if not (self.t0_widths > 0 and 0 < self.theta_flat < 1):
            raise DomainError("bad time cutoff")

    def perturbed(self, rho_factor=1.0, t0_factor=1.0) -> "Cutoffs":
        return replace(self, rho_flat=self.rho_flat * rho_factor,
                       rho_edge=self.rho_edge * rho_factor,
                       t0_widths=self.t0_widths * t0_factor)

    def rho(self, q, r0):
        s = np.abs(np.asarray(q, float) / r0 - 1.0)
        return 1.0 - smooth_step((s - self.rho_flat) / (self.rho_edge - self.rho_flat))

    def t0(self, h, speed) -> float:
        return self.t0_widths * h / speed

    def theta(self, t, t0):
        a = self.theta_flat * t0
        return 1.0 - smooth_step((np.asarray(t, float) - a) / (t0 - a))

    def to_dict(self) -> dict:
        return {"rho_flat": self.rho_flat, "rho_edge": self.rho_edge,
                "t0_widths": self.t0_widths, "theta_flat": self.theta_flat}


def _time_window_transform(cut, t0, h, omega):
    """``T(w) = (i/h) int_0^t0 theta(t) exp(-i t w / h) dt``."""
    a = cut.theta_flat * t0
    w = np.asarray(omega, float)[..., None]
    flat = np.where(np.abs(w[..., 0]) * a / h < 1e-8, a / h * 1j,
                    (1.0 - np.exp(-1j * a * w[..., 0] / h)) / np.where(w[..., 0] == 0, 1.0,
                                                                        w[..., 0]))
    t, wt = _gauss(a, t0, 256)
    taper = (cut.theta(t, t0) * np.exp(-1j * t * w / h)) @ wt
    return flat + 1j / h * taper


def _short_range_kernel(model, cut, t0):
    """``B(q) = (1 - rho)/(L0 - E) + rho m(q) T(q/r0 - 1)`` at the source depth."""
    D, E, r0 = model.D0, model.E, model.r0
    v0 = float(dtn_symbol_dq(D, r0))

    def B(q):
        gap = dtn_symbol(D, q) - E
        d = q - r0
        near = np.abs(d) < 1e-9 * r0
        C2 = np.where(near, 2.0 / (r0 * v0),
                      (q * q - r0 * r0) / (r0 * r0 * np.where(near, 1.0, gap)))
        m = C2 / (q / r0 + 1.0)
        rho = cut.rho(q, r0)
        out = np.where(rho < 1, (1.0 - rho) / np.where(near, 1.0, gap), 0.0).astype(complex)
        return out + rho * m * _time_window_transform(cut, t0, model.h, q / r0 - 1.0)

    return B


def short_range_field(model, cut, t0, R):
    """Non-characteristic plus transitional parts as a function of ``R = |x - x0|``."""
    a, b = model.support
    R = np.asarray(R, float)
    B = _short_range_kernel(model, cut, t0)

    def integrand(qq, RR):
        return special.j0(qq * RR / model.h) * (model.amplitude(qq) * B(qq) * qq)

    vals, _ = _radial_gl(integrand, a, b, R.ravel(), n0=512)
    return (1j / model.h * vals).reshape(R.shape)


# ----------------------------------------------------------------------
# branch location on the fan
# ----------------------------------------------------------------------
def _hermite(s):
    s2 = s * s
    s3 = s2 * s
    val = (2 * s3 - 3 * s2 + 1, -2 * s3 + 3 * s2)
    der = (s3 - 2 * s2 + s, s3 - s2)
    dval = (6 * s2 - 6 * s, -6 * s2 + 6 * s)
    dder = (3 * s2 - 4 * s + 1, 3 * s2 - 2 * s)
    return val, der, dval, dder


def _bicubic(C, u, v):
    """Evaluate a bicubic Hermite patch and its ``u``, ``v`` derivatives.

    ``C`` has shape ``(P, 4, 2, 2, c)``: value, d/du, d/dv, d2/dudv at the corners.
    """
    Vu, Du, dVu, dDu = _hermite(u)
    Vv, Dv, dVv, dDv = _hermite(v)
    f = fu = fv = 0.0
    for a in range(2):
        for b in range(2):
            terms = (C[:, 0, a, b], C[:, 1, a, b], C[:, 2, a, b], C[:, 3, a, b])
            bu = (Vu[a], Du[a], Vu[a], Du[a])
            bv = (Vv[b], Vv[b], Dv[b], Dv[b])
            dbu = (dVu[a], dDu[a], dVu[a], dDu[a])
            dbv = (dVv[b], dVv[b], dDv[b], dDv[b])
            for T, x1, x2, y1, y2 in zip(terms, bu, bv, dbu, dbv):
                f = f + (x1 * x2)[:, None] * T
                fu = fu + (y1 * x2)[:, None] * T
                fv = fv + (x1 * y2)[:, None] * T
    return f, fu, fv


@dataclass
class Branches:
    point: np.ndarray   # observation index
    t: np.ndarray
    theta: np.ndarray
    S: np.ndarray
    J: np.ndarray
    maslov: np.ndarray
    caustic: np.ndarray
    x: np.ndarray


def _fan_tables(fan):
    traj = fan.traj
    x, p = traj.x, traj.p
    S = traj.S
    F = np.concatenate([x, S[..., None]], axis=-1)
    Ft = np.concatenate([traj.xdot, np.sum(p * traj.xdot, -1)[..., None]], axis=-1)
    Fth = np.concatenate([fan.x_theta, np.sum(p * fan.x_theta, -1)[..., None]], axis=-1)
    Ftth = np.concatenate([fan.xdot_theta, (np.sum(fan.pdot * fan.x_theta, -1)
                                            + np.sum(p * fan.xdot_theta, -1))[..., None]],
                          axis=-1)
    return F, Ft, Fth, Ftth


def locate_branches(fan, points, t_min=0.0, chunk=20000, newton_iter=14) -> Branches:
    """All ``(t, theta)`` with ``x(t, theta) = point``, for ``t >= t_min``.

    The fan's ``(t, theta)`` chart is split into cells; on each cell the
    position and action are bicubic Hermite interpolants built from the
    stored velocities and variational data.  Candidate cells come from a
    KD-tree over observation points; each candidate is refined by Newton's
    method and kept if the root lies inside its cell.
    """
    pts = np.asarray(points, float).reshape(-1, 2)
    tree = cKDTree(pts)
    traj = fan.traj
    t = traj.t
    K, n = traj.x.shape[:2]
    dts = np.diff(t)
    dth = 2.0 * np.pi / n
    F, Ft, Fth, Ftth = _fan_tables(fan)
    valid = np.ones((K, n), bool)
    if np.any(traj.exited):
        for j in np.flatnonzero(traj.exited):
            same = np.all(traj.x[:, j] == traj.x[-1, j], axis=-1)
            valid[np.argmax(same):, j] = False
    k0 = int(np.searchsorted(t, t_min, side="right")) - 1
    k0 = max(k0, 0)
    ks, iis = np.meshgrid(np.arange(k0, K - 1), np.arange(n), indexing="ij")
    ks, iis = ks.ravel(), iis.ravel()
    ip = (iis + 1) % n
    ok = valid[ks, iis] & valid[ks + 1, iis] & valid[ks, ip] & valid[ks + 1, ip]
    ks, iis, ip = ks[ok], iis[ok], ip[ok]
    corners = np.stack([traj.x[ks, iis], traj.x[ks + 1, iis], traj.x[ks, ip],
                        traj.x[ks + 1, ip]], axis=1)
    centre = corners.mean(axis=1)
    radius = np.max(np.linalg.norm(corners - centre[:, None], axis=-1), axis=1)
    radius = 1.25 * radius + 1e-12

    out = {k: [] for k in ("point", "t", "theta", "S", "J", "maslov", "caustic", "x")}
    for start in range(0, ks.size, chunk):
        sl = slice(start, start + chunk)
        hits = tree.query_ball_point(centre[sl], radius[sl])
        lens = np.fromiter((len(hh) for hh in hits), int, len(hits))
        if lens.sum() == 0:
            continue
        cell = np.repeat(np.arange(start, start + len(hits)), lens)
        pid = np.fromiter((j for hh in hits for j in hh), int, lens.sum())
        k, i, i2 = ks[cell], iis[cell], ip[cell]
        Dt = dts[k]
        C = np.empty((cell.size, 4, 2, 2, 3))
        for a, kk in enumerate((k, k + 1)):
            for b, ii in enumerate((i, i2)):
                C[:, 0, a, b] = F[kk, ii]
                C[:, 1, a, b] = Ft[kk, ii] * Dt[:, None]
                C[:, 2, a, b] = Fth[kk, ii] * dth
                C[:, 3, a, b] = Ftth[kk, ii] * (Dt * dth)[:, None]
        target = pts[pid]
        u = np.full(cell.size, 0.5)
        v = np.full(cell.size, 0.5)
        for _ in range(newton_iter):
            f, fu, fv = _bicubic(C, u, v)
            r = f[:, :2] - target
            det = fu[:, 0] * fv[:, 1] - fu[:, 1] * fv[:, 0]
            det = np.where(np.abs(det) > 1e-300, det, 1e-300)
            du = (r[:, 0] * fv[:, 1] - r[:, 1] * fv[:, 0]) / det
            dv = (fu[:, 0] * r[:, 1] - fu[:, 1] * r[:, 0]) / det
            u = np.clip(u - du, -0.5, 1.5)
            v = np.clip(v - dv, -0.5, 1.5)
        f, fu, fv = _bicubic(C, u, v)
        resid = np.linalg.norm(f[:, :2] - target, axis=-1)
        inside = (u >= -1e-9) & (u <= 1 + 1e-9) & (v >= -1e-9) & (v <= 1 + 1e-9)
        good = inside & (resid <= 1e-9 * (1.0 + np.linalg.norm(target, axis=-1)))
        if not np.any(good):
            continue
        g = np.flatnonzero(good)
        kk, ii, ii2 = k[g], i[g], i2[g]
        J = (fu[g, 0] * fv[g, 1] - fu[g, 1] * fv[g, 0]) / (Dt[g] * dth)
        m4 = np.stack([fan.maslov[kk, ii], fan.maslov[kk + 1, ii], fan.maslov[kk, ii2],
                       fan.maslov[kk + 1, ii2]], axis=1)
        out["point"].append(pid[g])
        out["t"].append(t[kk] + u[g] * Dt[g])
        out["theta"].append(np.mod((ii + v[g]) * dth, 2.0 * np.pi))
        out["S"].append(f[g, 2])
        out["J"].append(J)
        out["maslov"].append(m4.min(axis=1))
        out["caustic"].append(m4.min(axis=1) != m4.max(axis=1))
        out["x"].append(f[g, :2])
    if not out["point"]:
        empty = np.zeros(0)
        return Branches(empty.astype(int), empty, empty, empty, empty, empty.astype(int),
                        empty.astype(bool), np.zeros((0, 2)))
    arr = {k: np.concatenate(v) for k, v in out.items()}
    # a root on a shared cell edge is found from both sides
    q = 1e-6
    key_t = np.round(arr["t"] / q).astype(np.int64)
    key_th = np.round(arr["theta"] / (q * dth)).astype(np.int64) % int(round(n / q))
    keys = np.stack([arr["point"], key_t, key_th], axis=1)
    _, first = np.unique(keys, axis=0, return_index=True)
    first = np.sort(first)
    return Branches(**{k: v[first] for k, v in arr.items()})


# ----------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------
@dataclass
class GreenField:
    """Complex field on observation points with its provenance."""

    points: np.ndarray
    values: np.ndarray
    E: float
    h: float
    eps: float
    cutoffs: dict
    branches: np.ndarray
    caustic: np.ndarray
    shadow: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return ~(self.caustic | self.shadow)


def _shell_C0(D, E):
    r = characteristic_radius(D, E)
    return np.sqrt(2.0 / (r * dtn_symbol_dq(D, r)))


def fan_for(profile, model, R_max, n_angles=720, dt=0.02, hamiltonian="finsler"):
    """A fan long enough to reach distance ``R_max`` from the source."""
    from .rays import launch_fan
    r_slow = float(characteristic_radius(profile.min_depth(), model.E))
    speed = 1.0 / r_slow if hamiltonian == "finsler" else \
        float(dtn_symbol_dq(profile.min_depth(), r_slow))
    T = dt * np.ceil(1.3 * R_max / speed / dt)
    return launch_fan(profile, model.x0, model.E, n_angles, T, dt, hamiltonian=hamiltonian)


def assemble_green(fan, model: SourceModel, points, cutoffs: Cutoffs | None = None,
                   calibration: complex = 1.0, caustic_ratio=1e-3) -> GreenField:
    """Sum of the non-characteristic, flow-out and transitional parts at ``points``."""
    cut = Cutoffs() if cutoffs is None else cutoffs
    ham = fan.traj.hamiltonian
    if ham.kind not in ("finsler", "L0"):
        raise PreconditionError("the fan must use the Finsler or L0 Hamiltonian")
    if not np.allclose(fan.x0, model.x0) or abs(fan.E - model.E) > 1e-14:
        raise PreconditionError("fan and source disagree on x0 or E")
    pts = np.asarray(points, float)
    shape = pts.shape[:-1]
    pts = pts.reshape(-1, 2)
    x0 = np.asarray(model.x0)
    h, E, r0 = model.h, model.E, model.r0
    _, _, Hp = ham.derivatives(x0[None], np.array([[r0, 0.0]]), second=False)
    speed = float(np.linalg.norm(Hp))
    t0 = cut.t0(h, speed)

    # frozen short-range parts, tabulated in R
    R = np.linalg.norm(pts - x0, axis=-1)
    Rmax = float(R.max()) if R.size else 0.0
    if R.size > 400:
        Rt = np.linspace(0.0, Rmax + h, int(np.ceil((Rmax + h) / (h / 12))) + 2)
        tab = short_range_field(model, cut, t0, Rt)
        u13 = CubicSpline(Rt, tab.real)(R) + 1j * CubicSpline(Rt, tab.imag)(R)
    else:
        u13 = short_range_field(model, cut, t0, R)

    # flow-out part
    br = locate_branches(fan, pts, t_min=cut.theta_flat * t0)
    Jmax = float(np.max(np.abs(fan.J)))
    weak = np.abs(br.J) < caustic_ratio * Jmax
    pref = np.sqrt(2j * np.pi / h) * 1j * model.amplitude(r0) * np.sqrt(r0 / speed)
    amp = pref * np.abs(br.J) ** -0.5 * (1.0 - cut.theta(br.t, t0))
    if ham.kind == "finsler":
        Dx = ham.profile.depth(br.x) if br.x.size else np.zeros(0)
        amp = amp * _shell_C0(model.D0, E) * _shell_C0(Dx, E) / 2.0
    terms = amp * np.exp(1j * br.S / h - 0.5j * np.pi * br.maslov)
    u2 = np.zeros(pts.shape[0], complex)
    np.add.at(u2, br.point, np.where(weak | br.caustic, 0.0, terms))
    count = np.bincount(br.point, minlength=pts.shape[0])
    caustic = np.zeros(pts.shape[0], bool)
    caustic[br.point[weak | br.caustic]] = True

    reach = float(np.min(np.linalg.norm(fan.traj.x[-1] - x0, axis=-1)))
    start = float(np.max(np.linalg.norm(
        fan.traj.x[np.searchsorted(fan.t, cut.theta_flat * t0)] - x0, axis=-1)))
    illuminated = (R > start) & (R < 0.98 * reach)
    shadow = illuminated & (count == 0)
    vals = calibration * (u13 + u2)
    return GreenField(pts.reshape(shape + (2,)), vals.reshape(shape), E, h, 0.0,
                      {**cut.to_dict(), "t0": t0},
                      count.reshape(shape), caustic.reshape(shape), shadow.reshape(shape),
                      {"calibration": complex(calibration), "hamiltonian": ham.kind,
                       "reach": reach, "n_branches": int(br.point.size),
                       "speed": speed})


# ----------------------------------------------------------------------
# comparisons and studies
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FieldComparison:
    modulus_error: float
    phase_error: float
    calibration: complex
    n_points: int
    tol_modulus: float = 0.1
    tol_phase: float = 0.1

    @property
    def passed(self) -> bool:
        return self.modulus_error <= self.tol_modulus and self.phase_error <= self.tol_phase


def compare_fields(u, ref, mask=None) -> FieldComparison:
    """Worst pointwise modulus ratio and phase mismatch of ``u`` against ``ref``."""
    u = np.asarray(u).ravel()
    ref = np.asarray(ref).ravel()
    m = np.ones(u.size, bool) if mask is None else np.asarray(mask).ravel()
    if not np.any(m):
        raise InsufficientDataError("no points to compare")
    ratio = u[m] / ref[m]
    return FieldComparison(float(np.max(np.abs(np.abs(ratio) - 1.0))),
                           float(np.max(np.abs(np.angle(ratio)))),
                           complex(np.median(ratio.real) + 1j * np.median(ratio.imag)),
                           int(m.sum()))


def annulus_points(x0, r_in, r_out, n_r=21, n_theta=72):
    rr = np.linspace(r_in, r_out, n_r)
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    Rg, Tg = np.meshgrid(rr, th, indexing="ij")
    return np.stack([x0[0] + Rg * np.cos(Tg), x0[1] + Rg * np.sin(Tg)], axis=-1).reshape(-1, 2)


def calibration_constant(h, D0=1.0, E=1.0, annulus=(1.0, 3.0), n_angles=720, dt=0.02):
    """``median(exact / assembled)`` at constant depth with unit calibration."""
    from .bathymetry import DepthProfile
    prof = DepthProfile.constant(D0)
    model = SourceModel.at(prof, (0.0, 0.0), E, h)
    pts = annulus_points((0.0, 0.0), *annulus)
    fan = fan_for(prof, model, annulus[1] + 0.5, n_angles=n_angles, dt=dt)
    g = assemble_green(fan, model, pts)
    ex = exact_green_constant_depth(D0, E, h, 0.0, pts, model=model)
    ratio = ex[g.valid] / g.values[g.valid]
    return complex(np.median(ratio.real) + 1j * np.median(ratio.imag)), g, ex


def window(R, inner, outer):
    return 1.0 - smooth_step((np.asarray(R) - inner) / (outer - inner))


@dataclass(frozen=True)
class RemainderStudy:
    h: np.ndarray
    residual: np.ndarray
    f_norm: np.ndarray
    exponent: float
    threshold: float = 0.4

    @property
    def passed(self) -> bool:
        return self.exponent >= self.threshold


def remainder_study(profile, hs, x0=(0.0, 0.0), E=1.0, X=8.0, annulus=(1.0, 3.0),
                    window_radii=(4.5, 5.5), nodes_per_wavelength=6.0, n_angles=720,
                    dt=0.02, cutoffs=None) -> RemainderStudy:
    """``|(Op(L0) - E) u - f|`` on an annulus for the assembled ``u``, as ``h`` shrinks.

    ``u`` is smoothly windowed beyond the annulus so that it fits the periodic
    box; ``Op(L0)`` is local on scale ``h`` so the window does not reach the
    annulus.  The source ball of radius ``5h`` and caustic-flagged points are
    excluded.
    """
    from .pdo import grid_for
    hs = np.asarray(hs, float)
    if hs.size < 2:
        raise InsufficientDataError("need at least two values of h")
    res, fn = [], []
    for h in hs:
        model = SourceModel.at(profile, x0, E, h)
        N = grid_for(h, E, profile.min_depth(), X, 2, nodes_per_wavelength)
        base = GridField.zeros(N, X, h, 2)
        P = base.points()
        R = np.linalg.norm(P - np.asarray(x0), axis=-1)
        inside = R < window_radii[1]
        fan = fan_for(profile, model, window_radii[1] + 0.5, n_angles=n_angles, dt=dt)
        g = assemble_green(fan, model, P[inside], cutoffs)
        u = np.zeros(R.shape, complex)
        u[inside] = g.values * window(R[inside], *window_radii)
        flag = np.zeros(R.shape, bool)
        flag[inside] = g.caustic | g.shadow
        f = source_field(model, base)
        Lu = apply_symbol(base.with_values(u), DepthSymbol.principal(profile))
        r = Lu.values - E * u - f.values
        mask = (R >= max(annulus[0], 5 * h)) & (R <= annulus[1]) & ~flag
        res.append(float(np.sqrt(np.sum(np.abs(r[mask]) ** 2)) * base.dx))
        fn.append(f.norm())
    res, fn = np.array(res), np.array(fn)
    slope = float(np.polyfit(np.log(hs), np.log(res / fn), 1)[0])
    return RemainderStudy(hs, res, fn, slope)


@dataclass(frozen=True)
class AbsorptionReport:
    eps: np.ndarray
    differences: np.ndarray
    comparison: FieldComparison | None
    limit: np.ndarray
    points: np.ndarray

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.differences) < 0))

    @property
    def passed(self) -> bool:
        return self.monotone and (self.comparison is None or self.comparison.passed)


def limiting_absorption_study(model: SourceModel, profile, eps_schedule, *, X=32.0,
                              nodes_per_wavelength=8.0, annulus=(1.0, 3.0),
                              reference=None, n_compare=1500, seed=0,
                              check_nontrapping=True) -> AbsorptionReport:
    """Absorbing solutions ``u_eps`` along a decreasing schedule.

    Returns ``|<x - x0>^{-1} (u_{eps_j} - u_{eps_{j+1}})|`` and compares the
    polynomial extrapolation to ``eps = 0`` (through the last four levels)
    with ``reference(points)`` on sampled annulus nodes.
    """
    from .pdo import bracket_weight, grid_for
    eps = np.asarray(eps_schedule, float)
    if eps.size < 2:
        raise InsufficientDataError("the eps schedule needs at least two values")
    if np.any(np.diff(eps) >= 0) or eps[-1] <= 0:
        raise DomainError("eps schedule must decrease strictly and stay positive")
    if check_nontrapping:
        from .rays import nontrapping_check
        if not nontrapping_check(profile, model.E).passed:
            raise PreconditionError("energy is trapping for this profile")
    h = model.h
    N = grid_for(h, model.E, profile.min_depth(), X, 2, nodes_per_wavelength)
    base = GridField.zeros(N, X, h, 2)
    f = source_field(model, base)
    w = bracket_weight(base, 1.0, model.x0)
    fields = []
    for e in eps:
        fields.append(resolvent_solve(f, ResolventQuery(model.E, float(e)), profile).values)
    diffs = np.array([np.sqrt(np.sum(np.abs(w * (a - b)) ** 2)) * base.dx
                      for a, b in zip(fields[:-1], fields[1:])])
    P = base.points()
    R = np.linalg.norm(P - np.asarray(model.x0), axis=-1)
    sel = np.flatnonzero(((R >= annulus[0]) & (R <= annulus[1])).ravel())
    rng = np.random.default_rng(seed)
    if sel.size > n_compare:
        sel = np.sort(rng.choice(sel, n_compare, replace=False))
    k = min(4, eps.size)
    es = eps[-k:]
    vals = np.stack([fl.ravel()[sel] for fl in fields[-k:]])
    # Lagrange extrapolation to eps = 0
    limit = np.zeros(sel.size, complex)
    for j in range(k):
        wj = np.prod([es[m] / (es[m] - es[j]) for m in range(k) if m != j])
        limit += wj * vals[j]
    pts = P.reshape(-1, 2)[sel]
    comp = None
    if reference is not None:
        ref = reference(pts)
        if isinstance(ref, GreenField):
            comp = compare_fields(limit, ref.values, ref.valid)
        else:
            comp = compare_fields(limit, ref)
    return AbsorptionReport(eps, diffs, comp, limit, pts)


def bottom_to_surface_response(f_bottom: GridField, profile, query: ResolventQuery) -> GridField:
    """Surface field ``(Op(L0) - E - i eps)^{-1} Op(1/cosh(D|p|)) f_bottom``."""
    if not np.any(f_bottom.values):
        return f_bottom.with_values(np.zeros_like(f_bottom.values))
    g = apply_symbol(f_bottom, DepthSymbol(bottom_symbol, profile, "Q0"))
    if not np.any(g.values):
        return g
    return resolvent_solve(g, query, profile)
