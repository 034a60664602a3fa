"""Closed-form symbol layer.

Gravity is normalised to one, so the spectral parameter is ``E = omega**2``
and the free-surface dispersion relation reads ``|p| tanh(D |p|) = E``.

Contents:

* the dispersion root ``Z(s)``: positive solution of ``z tanh z = s``;
* the principal DtN symbols ``L0 = |p| tanh(D|p|)`` and ``Q0 = 1/cosh(D|p|)``;
* normal-form data at energy ``E``: characteristic radius
  ``r = Z(E D)/D``, Finsler factor ``g = 1/r``, metric ``G = g**2`` and
  potential ``V = r**2``;
* the elliptic factors ``C0``, ``F0`` with ``G|p|^2 - 1 = C0^2 (L0 - E)`` and
  ``|p|^2 - V = F0^2 (L0 - E)``;
* the vertical profile symbols ``R0`` and ``R1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConsistencyError, DomainError, NumericError

# relative gap |L0 - E| < REMOVABLE_TOL * E switches C0/F0 to the derivative quotient
REMOVABLE_TOL = 1e-6


def sech(x):
    """Overflow-free hyperbolic secant."""
    a = np.abs(x)
    e = np.exp(-a)
    return 2.0 * e / (1.0 + e * e)


# ----------------------------------------------------------------------
# dispersion root
# ----------------------------------------------------------------------
def solve_Z(s, tol=1e-12, max_iter=200):
    """Positive root ``z`` of ``z tanh z = s`` (vectorised, ``s >= 0``).

    Newton iteration from ``max(sqrt(s), s)`` with a bisection safeguard on
    ``[0, max(sqrt(s), s) + 1]``.  The residual satisfies
    ``|z tanh z - s| <= tol * max(1, s)``.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s_arr)) or np.any(s_arr < 0):
        raise DomainError("solve_Z needs finite s >= 0")
    s1 = np.atleast_1d(s_arr).ravel()
    top = np.maximum(np.sqrt(s1), s1)
    lo = np.zeros_like(s1)
    hi = top + 1.0
    z = top.copy()
    scale = np.maximum(1.0, s1)
    done = s1 == 0
    z[done] = 0.0
    for _ in range(max_iter):
        if np.all(done):
            break
        a = ~done
        za, sa = z[a], s1[a]
        f = za * np.tanh(za) - sa
        conv = np.abs(f) <= 0.25 * tol * scale[a]
        # keep the bracket [lo, hi] around the root
        lo[a] = np.where(f < 0, za, lo[a])
        hi[a] = np.where(f > 0, za, hi[a])
        fp = np.tanh(za) + za * sech(za) ** 2
        step = za - f / fp
        bad = (step <= lo[a]) | (step >= hi[a]) | ~np.isfinite(step)
        step = np.where(bad, 0.5 * (lo[a] + hi[a]), step)
        z[a] = np.where(conv, za, step)
        done[a] = conv
    if not np.all(done):
        raise NumericError("solve_Z failed to converge")
    # one Newton polish step brings small-s roots to full relative precision
    pos = z > 0
    zp = z[pos]
    z[pos] = zp - (zp * np.tanh(zp) - s1[pos]) / (np.tanh(zp) + zp * sech(zp) ** 2)
    z = z.reshape(s_arr.shape)
    return float(z) if np.ndim(s) == 0 else z


def dZ_ds(s):
    """Derivative ``Z'(s) = 1 / (tanh Z + Z sech^2 Z)``."""
    z = solve_Z(s)
    return 1.0 / (np.tanh(z) + z * sech(z) ** 2)


def _Z_derivatives(s):
    z = np.asarray(solve_Z(s), float)
    sh2 = sech(z) ** 2
    phi = np.tanh(z) + z * sh2
    dphi = 2.0 * sh2 - 2.0 * z * sh2 * np.tanh(z)
    z1 = 1.0 / phi
    z2 = -dphi * z1**3
    return z, z1, z2


# ----------------------------------------------------------------------
# principal symbols as functions of (D, |p|)
# ----------------------------------------------------------------------
def dtn_symbol(D, q):
    """``q tanh(D q)``."""
    return q * np.tanh(D * q)


def dtn_symbol_dq(D, q):
    """``d/dq [q tanh(D q)] = tanh(Dq) + D q sech^2(Dq)`` (group speed)."""
    return np.tanh(D * q) + D * q * sech(D * q) ** 2


def bottom_symbol(D, q):
    """``1 / cosh(D q)``."""
    return sech(D * q)


def characteristic_radius(D, E):
    """Momentum radius ``r(D, E) = Z(E D) / D`` of the shell ``L0 = E``."""
    D = np.asarray(D, float)
    return solve_Z(E * D) / D


@dataclass(frozen=True)
class PhasePoint:
    """Point ``(x, p)`` of the cotangent bundle (arrays of shape ``(..., 2)``)."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, float))
        object.__setattr__(self, "p", np.asarray(self.p, float))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise DomainError("phase point has non-finite components")

    @property
    def pabs(self):
        return np.linalg.norm(self.p, axis=-1)


def symbol_L0(profile, point: PhasePoint):
    """Principal DtN symbol ``|p| tanh(D(x)|p|)``."""
    return dtn_symbol(profile.depth(point.x), point.pabs)


def symbol_Q0(profile, point: PhasePoint):
    """Bottom-to-surface principal symbol ``1/cosh(D(x)|p|)``."""
    return bottom_symbol(profile.depth(point.x), point.pabs)


# ----------------------------------------------------------------------
# normal forms
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class NormalFormData:
    """Characteristic data of ``{L0 = E}`` at a point.

    ``r`` is the momentum radius, ``g = 1/r`` the Finsler factor, ``G = g**2``
    the conformal metric coefficient and ``V = r**2`` the effective potential.
    """

    E: float
    r: np.ndarray
    g: np.ndarray
    G: np.ndarray
    V: np.ndarray


def normal_form(profile, x, E) -> NormalFormData:
    if not E > 0:
        raise DomainError("energy must be positive")
    r = characteristic_radius(profile.depth(x), E)
    return NormalFormData(E=float(E), r=r, g=1.0 / r, G=r**-2, V=r**2)


def _factor_quotient(profile, point, E, which):
    q = point.pabs
    if np.any(q == 0):
        raise DomainError("elliptic factors are undefined at p = 0")
    D = profile.depth(point.x)
    r = characteristic_radius(D, E)
    gap = dtn_symbol(D, q) - E
    near = np.abs(gap) < REMOVABLE_TOL * E
    safe_gap = np.where(near, 1.0, gap)
    if which == "C":
        num = (q * q) / (r * r) - 1.0
        # (q^2 - r^2)/r^2 divided by (q - r) * L0'(mid)
        lim = (q + r) / (r * r) / dtn_symbol_dq(D, 0.5 * (q + r))
    else:
        num = q * q - r * r
        lim = (q + r) / dtn_symbol_dq(D, 0.5 * (q + r))
    quot = np.where(near, lim, num / safe_gap)
    if np.any(quot <= 0):
        raise ConsistencyError("level sets of L0 - E and the normal form do not coincide")
    return np.sqrt(quot)


def elliptic_factor_C0(profile, point: PhasePoint, E):
    """``C0 = sqrt((G|p|^2 - 1) / (L0 - E))``, continuous across ``|p| = r``."""
    return _factor_quotient(profile, point, E, "C")


def elliptic_factor_F0(profile, point: PhasePoint, E):
    """``F0 = sqrt((|p|^2 - V) / (L0 - E))``; equals ``r * C0``."""
    return _factor_quotient(profile, point, E, "F")


# ----------------------------------------------------------------------
# vertical profiles
# ----------------------------------------------------------------------
def _r0_values(D, q, z):
    # cosh((z+D)q)/cosh(Dq) without overflow
    a = (z + D) * q
    b = D * q
    return np.exp(a - b) * (1.0 + np.exp(-2.0 * a)) / (1.0 + np.exp(-2.0 * b))


def symbol_R0(profile, point: PhasePoint, z):
    """Leading vertical symbol ``cosh((z + D)|p|) / cosh(D|p|)`` on ``[-D, 0]``."""
    D = profile.depth(point.x)
    z = np.asarray(z, float)
    if np.any(z > 1e-12) or np.any(z < -D - 1e-12 * np.maximum(D, 1)):
        raise DomainError("z must lie in [-D(x), 0]")
    return _r0_values(D, point.pabs, z)


def r0_depth_derivative(D, q, z):
    """``d R0 / dD = q sinh(q z) / cosh^2(q D)``."""
    return q * np.sinh(q * z) * sech(q * D) ** 2


@dataclass
class R1Solution:
    z: np.ndarray
    values: np.ndarray
    ode_residual: float
    top_residual: float
    bottom_residual: float


def solve_R1(profile, point: PhasePoint, z) -> R1Solution:
    """First vertical correction ``R1`` on a uniform grid spanning ``[-D, 0]``.

    Solves ``R1'' - |p|^2 R1 = 2 <p, d_x R0>`` with ``R1(0) = 0`` and
    ``R1'(-D) = <grad D, p> R0(-D)`` by second-order finite differences
    (ghost-point Neumann closure).  Residuals are those of the discrete system.
    """
    x = np.asarray(point.x, float)
    p = np.asarray(point.p, float)
    if x.shape != (2,) or p.shape != (2,):
        raise ValueError("solve_R1 works on a single phase point")
    q = float(np.linalg.norm(p))
    if q == 0:
        raise DomainError("solve_R1 needs p != 0")
    D, gD = profile.evaluate(x, order=1)
    D = float(D)
    z = np.asarray(z, float)
    n = z.size
    dz = z[1] - z[0]
    if n < 4 or abs(z[0] + D) > 1e-9 * D or abs(z[-1]) > 1e-9 * D \
            or not np.allclose(np.diff(z), dz, rtol=1e-9, atol=0):
        raise DomainError("z-grid must be uniform and span [-D(x), 0]")
    pg = float(p @ gD)
    rhs = 2.0 * pg * r0_depth_derivative(D, q, z)
    flux = pg * float(_r0_values(D, q, -D))
    # unknowns R1[0..n-2]; R1[n-1] = 0 (surface)
    m = n - 1
    ab = np.zeros((3, m))
    ab[1, :] = -2.0 / dz**2 - q * q
    ab[0, 1:] = 1.0 / dz**2
    ab[2, :-1] = 1.0 / dz**2
    ab[0, 1] = 2.0 / dz**2  # ghost row at the bottom: (2 R_1 - 2 R_0)/dz^2
    b = rhs[:m].copy()
    b[0] += 2.0 * flux / dz
    try:
        sol = solve_banded((1, 1), ab, b)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular R1 system") from exc
    R = np.append(sol, 0.0)
    lap = np.empty(n)
    lap[1:-1] = (R[2:] - 2 * R[1:-1] + R[:-2]) / dz**2
    ghost = R[1] - 2 * dz * flux
    lap[0] = (R[1] - 2 * R[0] + ghost) / dz**2
    res = np.max(np.abs(lap[:-1] - q * q * R[:-1] - rhs[:-1]))
    bottom = abs((R[1] - ghost) / (2 * dz) - flux)
    return R1Solution(z, R, float(res), abs(R[-1]), float(bottom))
