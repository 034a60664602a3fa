"""Hamiltonian rays for the water-wave symbol and its two normal forms.

All three Hamiltonians have the form ``H(x, p) = Phi(D(x), |p|)``:

* ``L0``          ``Phi = q tanh(D q)``, energy shell ``H = E``;
* ``finsler``     ``Phi = q * D / Z(E D)`` (``g(x, E) |p|``), shell ``H = 1``;
* ``schrodinger`` ``Phi = q^2 - Z(E D)^2 / D^2``, shell ``H = 0``.

The three share their integral curves on the shell.  Hamilton's equations,
the action ``S = int p.dx``, the arclength and the 4x4 variational matrix are
integrated together with classical fixed-step RK4, vectorised over rays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .dispersion import _Z_derivatives, characteristic_radius, sech
from .errors import DegeneracyError, DomainError, SingularityError

HAMILTONIANS = ("L0", "finsler", "schrodinger")

# state layout: x(2) p(2) S arclength M(16)
_NX, _NP, _NS, _NL, _NM = slice(0, 2), slice(2, 4), 4, 5, slice(6, 22)
STATE = 22


@dataclass(frozen=True)
class DepthHamiltonian:
    """``H = Phi(D(x), |p|)`` with analytic partials of ``Phi`` up to order two."""

    kind: str
    E: float
    profile: object

    def __post_init__(self):
        if self.kind not in HAMILTONIANS:
            raise DomainError(f"unknown Hamiltonian {self.kind!r}")
        if not self.E > 0:
            raise DomainError("energy must be positive")

    @property
    def shell(self) -> float:
        return {"L0": self.E, "finsler": 1.0, "schrodinger": 0.0}[self.kind]

    @property
    def smooth_at_zero(self) -> bool:
        return self.kind == "schrodinger"

    def partials(self, D, q):
        """``(Phi, Phi_D, Phi_q, Phi_DD, Phi_Dq, Phi_qq)``."""
        E = self.E
        if self.kind == "L0":
            t = np.tanh(D * q)
            s2 = sech(D * q) ** 2
            return (q * t, q * q * s2, t + D * q * s2, -2.0 * q**3 * s2 * t,
                    2.0 * q * s2 - 2.0 * D * q * q * s2 * t,
                    2.0 * D * s2 - 2.0 * D * D * q * s2 * t)
        z, z1, z2 = _Z_derivatives(E * D)
        s = E * D
        if self.kind == "finsler":
            gam = D / z
            n = z - s * z1
            g1 = n / z**2
            g2 = (-s * E * z2 * z - 2.0 * n * E * z1) / z**3
            zero = np.zeros_like(q * D)
            return q * gam, q * g1, gam + zero, q * g2, g1 + zero, zero
        dz, ddz = E * z1, E * E * z2
        V = z * z / D**2
        V1 = 2.0 * z * dz / D**2 - 2.0 * z * z / D**3
        V2 = 2.0 * (dz * dz + z * ddz) / D**2 - 8.0 * z * dz / D**3 + 6.0 * z * z / D**4
        zero = np.zeros_like(q * D)
        return q * q - V, -V1 + zero, 2.0 * q + zero, -V2 + zero, zero, 2.0 + zero

    def __call__(self, x, p):
        D = self.profile.depth(x)
        return self.partials(D, np.linalg.norm(p, axis=-1))[0]

    def derivatives(self, x, p, second=True):
        """``H, H_x, H_p`` and optionally ``H_xx, H_xp, H_pp`` (batched)."""
        D, gD, HD = self.profile.evaluate(x)
        q = np.linalg.norm(p, axis=-1)
        if not self.smooth_at_zero and np.any(q < 1e-10):
            raise SingularityError("ray reached |p| = 0 where the Hamiltonian is not smooth")
        safe = np.where(q > 0, q, 1.0)
        phat = p / safe[..., None]
        F, FD, Fq, FDD, FDq, Fqq = self.partials(D, q)
        Hx = FD[..., None] * gD
        Hp = Fq[..., None] * phat
        if not second:
            return F, Hx, Hp
        P = phat[..., :, None] * phat[..., None, :]
        Hxx = FDD[..., None, None] * gD[..., :, None] * gD[..., None, :] \
            + FD[..., None, None] * HD
        Hxp = FDq[..., None, None] * gD[..., :, None] * phat[..., None, :]
        if self.kind == "schrodinger":
            Hpp = np.broadcast_to(2.0 * np.eye(2), P.shape).copy()
        else:
            Hpp = Fqq[..., None, None] * P \
                + (Fq / safe)[..., None, None] * (np.eye(2) - P)
        return F, Hx, Hp, Hxx, Hxp, Hpp


@dataclass(frozen=True)
class RayState:
    """One point of a trajectory."""

    x: np.ndarray
    p: np.ndarray
    t: float
    S: float
    M: np.ndarray
    m: int = 0
    J: float = float("nan")


@dataclass(frozen=True)
class Trajectory:
    """Stored RK4 steps for a batch of rays (time axis first)."""

    t: np.ndarray
    x: np.ndarray        # (steps, n, 2)
    p: np.ndarray        # (steps, n, 2)
    S: np.ndarray        # (steps, n)
    arclength: np.ndarray
    M: np.ndarray | None  # (steps, n, 4, 4)
    H: np.ndarray        # (steps, n)
    xdot: np.ndarray     # (steps, n, 2)
    exited: np.ndarray   # (n,) bool
    exit_step: np.ndarray
    hamiltonian: DepthHamiltonian

    @property
    def energy_drift(self) -> np.ndarray:
        """``max_t |H - H0| / (1 + |H0|)`` per ray."""
        H0 = self.H[0]
        return np.max(np.abs(self.H - H0), axis=0) / (1.0 + np.abs(H0))

    @property
    def det_defect(self) -> np.ndarray:
        if self.M is None:
            raise DomainError("trajectory was integrated without variational equations")
        return np.max(np.abs(np.linalg.det(self.M) - 1.0), axis=0)

    def state(self, step, ray=0) -> RayState:
        M = None if self.M is None else self.M[step, ray]
        return RayState(self.x[step, ray], self.p[step, ray], float(self.t[step]),
                        float(self.S[step, ray]), M)

    def position_spline(self, ray=0) -> CubicHermiteSpline:
        """Dense output ``t -> x(t)`` from the stored positions and velocities."""
        return CubicHermiteSpline(self.t, self.x[:, ray], self.xdot[:, ray], axis=0)


def _rhs(ham, y, variational):
    x, p = y[:, _NX], y[:, _NP]
    if variational:
        _, Hx, Hp, Hxx, Hxp, Hpp = ham.derivatives(x, p)
    else:
        _, Hx, Hp = ham.derivatives(x, p, second=False)
    dy = np.zeros_like(y)
    dy[:, _NX] = Hp
    dy[:, _NP] = -Hx
    dy[:, _NS] = np.sum(p * Hp, axis=-1)
    dy[:, _NL] = np.linalg.norm(Hp, axis=-1)
    if variational:
        A = np.zeros((y.shape[0], 4, 4))
        A[:, :2, :2] = np.swapaxes(Hxp, -1, -2)
        A[:, :2, 2:] = Hpp
        A[:, 2:, :2] = -Hxx
        A[:, 2:, 2:] = -Hxp
        M = y[:, _NM].reshape(-1, 4, 4)
        dy[:, _NM] = (A @ M).reshape(-1, 16)
    return dy


def flow(profile, hamiltonian, x0, p0, T, dt, E=1.0, variational=True, store_every=1,
         escape_radius=None, center=None) -> Trajectory:
    """Integrate a batch of rays with fixed-step RK4 over ``[0, T]``.

    ``hamiltonian`` is a :class:`DepthHamiltonian` or one of ``L0``,
    ``finsler``, ``schrodinger`` (then ``E`` is used).  ``x0``, ``p0`` have
    shape ``(2,)`` or ``(n, 2)``.  Rays leaving a gridded profile's box are
    frozen at their last interior state and flagged in ``exited``; with
    ``escape_radius`` rays farther than that from ``center`` are frozen too.
    """
    ham = hamiltonian if isinstance(hamiltonian, DepthHamiltonian) \
        else DepthHamiltonian(hamiltonian, E, profile)
    if not (T > 0 and dt > 0):
        raise DomainError("T and dt must be positive")
    x0 = np.atleast_2d(np.asarray(x0, float))
    p0 = np.atleast_2d(np.asarray(p0, float))
    x0, p0 = np.broadcast_arrays(x0, p0)
    n = x0.shape[0]
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T:
        raise DomainError("T must be an integer multiple of dt")
    if not np.all(profile.in_box(x0)):
        raise DomainError("initial point outside the profile's evaluation box")
    c = np.zeros(2) if center is None else np.asarray(center, float)
    y = np.zeros((n, STATE))
    y[:, _NX], y[:, _NP] = x0, p0
    y[:, _NM] = np.tile(np.eye(4).ravel(), (n, 1))
    active = np.ones(n, bool)
    exit_step = np.full(n, -1)
    keep = list(range(0, nsteps + 1, store_every))
    if keep[-1] != nsteps:
        keep.append(nsteps)
    out = np.zeros((len(keep), n, STATE))
    out[0] = y
    slot = 1
    for k in range(1, nsteps + 1):
        if np.any(active):
            ya = y[active]
            k1 = _rhs(ham, ya, variational)
            k2 = _rhs(ham, ya + 0.5 * dt * k1, variational)
            k3 = _rhs(ham, ya + 0.5 * dt * k2, variational)
            k4 = _rhs(ham, ya + dt * k3, variational)
            new = ya + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            gone = ~profile.in_box(new[:, _NX])
            if escape_radius is not None:
                gone |= np.linalg.norm(new[:, _NX] - c, axis=-1) > escape_radius
            idx = np.flatnonzero(active)
            y[idx[~gone]] = new[~gone]
            exit_step[idx[gone]] = k
            active[idx[gone]] = False
        if slot < len(keep) and keep[slot] == k:
            out[slot] = y
            slot += 1
    t = np.array(keep) * dt
    xs, ps = out[..., _NX], out[..., _NP]
    flat_x, flat_p = xs.reshape(-1, 2), ps.reshape(-1, 2)
    H, _, Hp = ham.derivatives(flat_x, flat_p, second=False)
    M = out[..., _NM].reshape(len(keep), n, 4, 4) if variational else None
    return Trajectory(t, xs, ps, out[..., _NS], out[..., _NL], M,
                      H.reshape(len(keep), n), Hp.reshape(len(keep), n, 2),
                      exit_step >= 0, exit_step, ham)


def shell_momentum(profile, x, E, direction, hamiltonian="finsler"):
    """Momentum of modulus ``r(x, E)`` along ``direction`` (on every shell)."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    r = characteristic_radius(profile.depth(np.asarray(x, float)), E)
    return np.asarray(r)[..., None] * d


# ----------------------------------------------------------------------
# Maupertuis-Jacobi overlap
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class OverlapReport:
    distances: dict
    common_length: float
    shell_mismatch: float
    tol: float
    drift: dict = field(default_factory=dict)

    @property
    def on_shell(self) -> bool:
        return self.shell_mismatch <= 1e-8

    @property
    def passed(self) -> bool:
        return self.on_shell and max(self.distances.values()) <= self.tol


def _arclength_curve(traj, s_grid):
    """Positions at prescribed arclengths (Hermite in t, arclength inverted)."""
    t, s = traj.t, traj.arclength[:, 0]
    speed = np.linalg.norm(traj.xdot[:, 0], axis=-1)
    s_of_t = CubicHermiteSpline(t, s, speed)
    x_of_t = traj.position_spline(0)
    # invert s(t) by Newton from linear interpolation
    tt = np.interp(s_grid, s, t)
    for _ in range(4):
        tt = tt - (s_of_t(tt) - s_grid) / np.interp(tt, t, speed)
    return x_of_t(tt)


def maupertuis_overlap(profile, E, x0, p0, T=10.0, dt=1e-3, tol=1e-6, n_samples=4001):
    """Compare the position curves of the three flows from one phase point.

    Each curve is resampled at common arclengths up to the shortest of the
    three; the reported distance is the largest pointwise gap at equal
    arclength, an upper bound for the Hausdorff distance of the curves.
    """
    x0 = np.asarray(x0, float)
    p0 = np.asarray(p0, float)
    r = float(characteristic_radius(profile.depth(x0), E))
    mismatch = abs(np.linalg.norm(p0) - r) / r
    trajs = {k: flow(profile, k, x0, p0, T, dt, E=E, variational=False) for k in HAMILTONIANS}
    length = min(float(tr.arclength[-1, 0]) for tr in trajs.values())
    s_grid = np.linspace(0.0, length, n_samples)
    curves = {k: _arclength_curve(tr, s_grid) for k, tr in trajs.items()}
    dist = {}
    names = list(HAMILTONIANS)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            dist[(a, b)] = float(np.max(np.linalg.norm(curves[a] - curves[b], axis=-1)))
    drift = {k: float(tr.energy_drift[0]) for k, tr in trajs.items()}
    return OverlapReport(dist, length, float(mismatch), tol, drift)


# ----------------------------------------------------------------------
# Lagrangian fan
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class LagrangianFan:
    """Flow-out of the momentum circle ``|p| = r(x0, E)`` over ``x0``."""

    x0: np.ndarray
    E: float
    hamiltonian: str
    theta: np.ndarray
    traj: Trajectory
    J: np.ndarray          # (steps, n)
    J_fd: np.ndarray       # neighbour-difference cross-check
    x_theta: np.ndarray    # (steps, n, 2)
    p_theta: np.ndarray    # (steps, n, 2)
    xdot_theta: np.ndarray  # (steps, n, 2): d/dtheta of the velocity
    pdot: np.ndarray       # (steps, n, 2)
    maslov: np.ndarray     # (steps, n) cumulative sign changes of J
    caustic_times: list
    dmu: np.ndarray

    @property
    def t(self):
        return self.traj.t

    @property
    def r0(self) -> float:
        return float(np.linalg.norm(self.traj.p[0, 0]))


def _sign_changes(J, t):
    """Cumulative count of sign changes of ``J`` along axis 0 (t > 0 only)."""
    s = np.sign(J)
    s[0] = s[1]
    # carry the last nonzero sign through exact zeros
    for k in range(1, s.shape[0]):
        z = s[k] == 0
        s[k, z] = s[k - 1, z]
    flips = (s[1:] * s[:-1]) < 0
    counts = np.vstack([np.zeros((1, J.shape[1]), int), np.cumsum(flips, axis=0)])
    times = []
    for k, ray in zip(*np.nonzero(flips)):
        # quadratic refinement of the zero through three samples
        kk = min(max(k, 1), J.shape[0] - 2)
        coef = np.polyfit(t[kk - 1:kk + 2] - t[k], J[kk - 1:kk + 2, ray], 2)
        roots = np.roots(coef)
        roots = roots[np.isreal(roots)].real
        roots = roots[(roots >= -1e-12) & (roots <= t[k + 1] - t[k] + 1e-12)]
        tz = t[k] + roots[0] if roots.size else t[k] - J[k, ray] * (t[k + 1] - t[k]) / (
            J[k + 1, ray] - J[k, ray])
        times.append((int(ray), float(tz)))
    return counts, times


def launch_fan(profile, x0, E, n_angles, T, dt, hamiltonian="finsler", store_every=1,
               escape_radius=None) -> LagrangianFan:
    """Launch rays at uniform angles with ``|p| = r(x0, E)``.

    The transverse spreading ``J = det[dx/dt, dx/dtheta]`` is computed from the
    variational matrix and, independently, by central differences across
    neighbouring rays; the Maslov counter records sign changes of ``J``.
    """
    if n_angles < 16:
        raise DomainError("a fan needs at least 16 angles")
    x0 = np.asarray(x0, float)
    if not profile.depth(x0) > 0:
        raise DomainError("source depth must be positive")
    theta = 2.0 * np.pi * np.arange(n_angles) / n_angles
    r = float(characteristic_radius(profile.depth(x0), E))
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    p0 = r * dirs
    dp = r * np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    traj = flow(profile, hamiltonian, np.tile(x0, (n_angles, 1)), p0, T, dt, E=E,
                store_every=store_every, escape_radius=escape_radius, center=x0)
    x_theta = np.einsum("snij,nj->sni", traj.M[:, :, :2, 2:], dp)
    p_theta = np.einsum("snij,nj->sni", traj.M[:, :, 2:, 2:], dp)
    _, Hx, _, _, Hxp, Hpp = traj.hamiltonian.derivatives(traj.x.reshape(-1, 2),
                                                        traj.p.reshape(-1, 2))
    shape = traj.x.shape
    Hxp, Hpp = Hxp.reshape(shape + (2,)), Hpp.reshape(shape + (2,))
    xdot_theta = np.einsum("snji,snj->sni", Hxp, x_theta) \
        + np.einsum("snij,snj->sni", Hpp, p_theta)
    pdot = -Hx.reshape(shape)
    J = traj.xdot[..., 0] * x_theta[..., 1] - traj.xdot[..., 1] * x_theta[..., 0]
    dth = 2.0 * np.pi / n_angles
    xfd = (np.roll(traj.x, -1, axis=1) - np.roll(traj.x, 1, axis=1)) / (2.0 * dth)
    J_fd = traj.xdot[..., 0] * xfd[..., 1] - traj.xdot[..., 1] * xfd[..., 0]
    scale = np.max(np.abs(J))
    if scale == 0:
        raise DegeneracyError("fan spreading vanishes identically")
    tiny = np.abs(J[1:]) <= 1e-12 * scale
    run = np.zeros(n_angles, int)
    for row in tiny:
        run = np.where(row, run + 1, 0)
        if np.any(run > 5):
            raise DegeneracyError("fan spreading vanishes over an interval")
    maslov, caustics = _sign_changes(J, traj.t)
    return LagrangianFan(x0, float(E), traj.hamiltonian.kind, theta, traj, J, J_fd,
                         x_theta, p_theta, xdot_theta, pdot, maslov, caustics,
                         np.full(n_angles, dth))


# ----------------------------------------------------------------------
# nontrapping
# ----------------------------------------------------------------------
def profile_extent(profile) -> float:
    """Radius around the profile's centre outside which it is nearly flat."""
    p = profile.params
    if profile.kind == "constant":
        return 1.0
    if profile.kind in ("radial-bump", "sech-trench"):
        return 4.0 * p["width"]
    if profile.kind == "annular":
        return p["radius"] + 4.0 * p["width"]
    if profile.kind == "algebraic":
        return 8.0 * p["width"]
    x0, x1, y0, y1 = profile.grid.box
    return 0.5 * min(x1 - x0, y1 - y0)


@dataclass(frozen=True)
class NontrappingReport:
    escaped: np.ndarray
    escape_time: np.ndarray
    R_escape: float
    T_max: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.escaped))

    @property
    def slowest(self) -> float:
        return float(np.max(self.escape_time))

    @property
    def trapped_fraction(self) -> float:
        return float(np.mean(~self.escaped))


def default_launch_states(profile, E, n_radii=13, n_positions=8, n_directions=16, dim=2):
    """Positions on rings up to the profile extent, shell momenta in all directions."""
    c = profile.center
    R = profile_extent(profile)
    if dim == 1:
        xs = c + np.stack([np.linspace(-R, R, 2 * n_radii + 1), np.zeros(2 * n_radii + 1)], -1)
        dirs = np.array([[1.0, 0.0], [-1.0, 0.0]])
    else:
        pts = [c]
        for rho in np.linspace(0, R, n_radii)[1:]:
            a = 2 * np.pi * np.arange(n_positions) / n_positions
            pts.extend(c + rho * np.stack([np.cos(a), np.sin(a)], -1))
        xs = np.array(pts)
        b = 2 * np.pi * (np.arange(n_directions) + 0.5) / n_directions
        dirs = np.stack([np.cos(b), np.sin(b)], -1)
    X = np.repeat(xs, len(dirs), axis=0)
    P = shell_momentum(profile, X, E, np.tile(dirs, (len(xs), 1)))
    return X, P


def nontrapping_check(profile, E, launch=None, T_max=None, R_escape=None, dt=0.02,
                      dim=2) -> NontrappingReport:
    """Escape test for the ``L0`` flow, forward and backward in time.

    A launch state passes if its ray reaches distance ``R_escape`` from the
    profile centre within ``T_max`` in at least one time direction.
    """
    c = profile.center
    extent = profile_extent(profile)
    X, P = default_launch_states(profile, E, dim=dim) if launch is None else launch
    X, P = np.atleast_2d(X), np.atleast_2d(P)
    if R_escape is None:
        R_escape = extent + 2.0
    if T_max is None:
        D0 = profile.D0
        speed = np.tanh(D0 * characteristic_radius(D0, E))  # lower bound on |H_p|
        T_max = 10.0 * R_escape / max(float(speed), 1e-3)
    T_max = dt * np.ceil(T_max / dt)
    times = []
    for sign in (+1, -1):
        tr = flow(profile, "L0", X, sign * P, T_max, dt, E=E, variational=False,
                  escape_radius=R_escape, center=c)
        t_esc = np.where(tr.exited, tr.exit_step * dt, np.inf)
        times.append(t_esc)
    best = np.minimum(times[0], times[1])
    return NontrappingReport(np.isfinite(best), best, float(R_escape), float(T_max))
