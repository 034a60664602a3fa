"""Depth profiles D(x) on the horizontal plane.

A profile is an immutable description of the bottom ``z = -D(x)``.  Analytic
families are evaluated in closed form (value, gradient and Hessian); gridded
profiles use a tensor-product cubic spline and refuse to extrapolate.

All evaluation routines are vectorised: ``x`` has shape ``(..., 2)`` and the
results have shape ``(...)``, ``(..., 2)`` and ``(..., 2, 2)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import DomainError, InsufficientDataError, ValidityError

KINDS = ("constant", "radial-bump", "sech-trench", "annular", "algebraic", "gridded")


def _sech(s):
    a = np.abs(s)
    e = np.exp(-a)
    return 2.0 * e / (1.0 + e * e)


@dataclass(frozen=True)
class GridPayload:
    """Tensor grid of depth samples: ``values[i, j] = D(x_nodes[i], y_nodes[j])``."""

    x_nodes: np.ndarray
    y_nodes: np.ndarray
    values: np.ndarray
    order: int = 3

    @property
    def box(self):
        """Evaluation box: node hull shrunk by one cell on every side."""
        dx = self.x_nodes[1] - self.x_nodes[0]
        dy = self.y_nodes[1] - self.y_nodes[0]
        return (self.x_nodes[0] + dx, self.x_nodes[-1] - dx,
                self.y_nodes[0] + dy, self.y_nodes[-1] - dy)


@dataclass(frozen=True, eq=False)
class DepthProfile:
    """Bathymetry ``D(x)`` with asymptotic depth ``D0``.

    Parameters
    ----------
    kind : str
        One of ``constant``, ``radial-bump``, ``sech-trench``, ``annular``,
        ``algebraic`` or ``gridded``.
    D0 : float
        Asymptotic depth.
    params : mapping
        Family parameters.  Common keys: ``amplitude`` (delta), ``width`` (ell),
        ``center`` (2-tuple).  ``sech-trench`` also accepts ``angle`` (direction
        of variation, radians), ``annular`` needs ``radius``, ``algebraic``
        takes ``exponent`` (nu, tail ~ |x|^-nu).
    d_min : float, optional
        Smallest admissible depth; defaults to ``0.05 * D0``.
    grid : GridPayload, optional
        Samples for the ``gridded`` kind.

    Sign conventions: ``radial-bump`` and ``annular`` are *shallower* by
    ``amplitude`` at their crest, ``sech-trench`` and ``algebraic`` are
    *deeper* by ``amplitude`` (use a negative amplitude for a ridge).
    """

    kind: str
    D0: float
    params: Mapping[str, Any] = field(default_factory=dict)
    d_min: float | None = None
    grid: GridPayload | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}; expected one of {KINDS}")
        if not self.D0 > 0:
            raise ValidityError(f"asymptotic depth must be positive, got {self.D0}")
        if self.d_min is None:
            object.__setattr__(self, "d_min", 0.05 * self.D0)
        object.__setattr__(self, "params", dict(self.params))
        if self.kind == "gridded":
            if self.grid is None:
                raise ValueError("gridded profile needs a GridPayload")
            object.__setattr__(self, "_spline", RectBivariateSpline(
                self.grid.x_nodes, self.grid.y_nodes, self.grid.values,
                kx=self.grid.order, ky=self.grid.order, s=0))
            if np.min(self.grid.values) < self.d_min:
                raise ValidityError("gridded depth samples fall below d_min")
        elif self.min_depth() < self.d_min:
            raise ValidityError(
                f"profile reaches depth {self.min_depth():.4g} < d_min={self.d_min:.4g}")

    # ------------------------------------------------------------------
    @classmethod
    def constant(cls, D0=1.0, **kw):
        return cls("constant", D0, {}, **kw)

    @classmethod
    def radial_bump(cls, D0=1.0, amplitude=0.3, width=1.0, center=(0.0, 0.0), **kw):
        return cls("radial-bump", D0, dict(amplitude=amplitude, width=width,
                                           center=tuple(center)), **kw)

    @classmethod
    def sech_trench(cls, D0=1.0, amplitude=0.3, width=1.0, center=0.0, angle=0.0, **kw):
        return cls("sech-trench", D0, dict(amplitude=amplitude, width=width,
                                           center=float(center), angle=angle), **kw)

    @classmethod
    def annular(cls, D0=1.0, amplitude=0.7, radius=3.0, width=0.6,
                center=(0.0, 0.0), **kw):
        return cls("annular", D0, dict(amplitude=amplitude, radius=radius, width=width,
                                       center=tuple(center)), **kw)

    @classmethod
    def algebraic(cls, D0=1.0, amplitude=0.3, width=1.0, exponent=1.0,
                  center=(0.0, 0.0), **kw):
        return cls("algebraic", D0, dict(amplitude=amplitude, width=width,
                                         exponent=exponent, center=tuple(center)), **kw)

    @classmethod
    def from_samples(cls, x_nodes, y_nodes, values, D0, order=3, **kw):
        x_nodes = np.asarray(x_nodes, float)
        y_nodes = np.asarray(y_nodes, float)
        values = np.asarray(values, float)
        if values.shape != (x_nodes.size, y_nodes.size):
            raise ValueError("values must have shape (len(x_nodes), len(y_nodes))")
        if min(x_nodes.size, y_nodes.size) < order + 3:
            raise InsufficientDataError("too few grid nodes for cubic interpolation")
        return cls("gridded", D0, {}, grid=GridPayload(x_nodes, y_nodes, values, order), **kw)

    # ------------------------------------------------------------------
    def min_depth(self) -> float:
        """Infimum of D over the plane (analytic kinds) or over the samples."""
        p = self.params
        if self.kind == "constant":
            return self.D0
        if self.kind in ("radial-bump", "annular"):
            return self.D0 - max(p["amplitude"], 0.0)
        if self.kind in ("sech-trench", "algebraic"):
            return self.D0 + min(p["amplitude"], 0.0)
        return float(np.min(self.grid.values))

    @property
    def center(self):
        c = self.params.get("center", (0.0, 0.0))
        if np.ndim(c) == 0:
            return np.zeros(2)
        return np.asarray(c, float)

    def in_box(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.kind != "gridded":
            return np.ones(x.shape[:-1], bool)
        x0, x1, y0, y1 = self.grid.box
        return (x[..., 0] >= x0) & (x[..., 0] <= x1) & (x[..., 1] >= y0) & (x[..., 1] <= y1)

    def evaluate(self, x, order=2):
        """Return ``(D, grad D, Hess D)`` at ``x`` (Hessian only if ``order >= 2``)."""
        x = np.asarray(x, float)
        if x.shape[-1] != 2:
            raise ValueError("points must have a trailing dimension of size 2")
        fn = getattr(self, "_eval_" + self.kind.replace("-", "_"))
        D, g, H = fn(x)
        if self.kind == "gridded" and np.any(D <= 0):
            raise ValidityError("interpolated depth is nonpositive")
        return (D, g, H) if order >= 2 else (D, g)

    def depth(self, x):
        return self.evaluate(x, order=1)[0]

    def grad(self, x):
        return self.evaluate(x, order=1)[1]

    def hessian(self, x):
        return self.evaluate(x)[2]

    # -- analytic families ---------------------------------------------
    def _eval_constant(self, x):
        shape = x.shape[:-1]
        return (np.full(shape, float(self.D0)), np.zeros(shape + (2,)),
                np.zeros(shape + (2, 2)))

    def _eval_radial_bump(self, x):
        p = self.params
        d, ell = p["amplitude"], p["width"]
        y = x - self.center
        e = np.exp(-np.sum(y * y, axis=-1) / ell**2)
        D = self.D0 - d * e
        g = (2.0 * d / ell**2) * e[..., None] * y
        eye = np.eye(2)
        H = d * e[..., None, None] * (2.0 * eye / ell**2
                                      - 4.0 * y[..., :, None] * y[..., None, :] / ell**4)
        return D, g, H

    def _eval_sech_trench(self, x):
        p = self.params
        d, ell = p["amplitude"], p["width"]
        n = np.array([np.cos(p.get("angle", 0.0)), np.sin(p.get("angle", 0.0))])
        s = (x @ n - p.get("center", 0.0)) / ell
        sh = _sech(s)
        th = np.tanh(s)
        D = self.D0 + d * sh
        d1 = -d * sh * th / ell
        d2 = d * sh * (th * th - sh * sh) / ell**2
        return D, d1[..., None] * n, d2[..., None, None] * np.outer(n, n)

    def _eval_annular(self, x):
        p = self.params
        d, R, w = p["amplitude"], p["radius"], p["width"]
        y = x - self.center
        rho = np.sqrt(np.sum(y * y, axis=-1))
        safe = np.maximum(rho, 1e-12)
        yhat = np.where(rho[..., None] > 1e-12, y / safe[..., None], np.array([1.0, 0.0]))
        u = (rho - R) / w
        e = np.exp(-u * u)
        D = self.D0 - d * e
        Dr = d * e * 2.0 * u / w
        Drr = d * e * (2.0 - 4.0 * u * u) / w**2
        P = yhat[..., :, None] * yhat[..., None, :]
        H = Drr[..., None, None] * P + (Dr / safe)[..., None, None] * (np.eye(2) - P)
        return D, Dr[..., None] * yhat, H

    def _eval_algebraic(self, x):
        p = self.params
        d, ell, nu = p["amplitude"], p["width"], p["exponent"]
        y = x - self.center
        q = 1.0 + np.sum(y * y, axis=-1) / ell**2
        D = self.D0 + d * q ** (-nu / 2)
        a = -d * nu * q ** (-nu / 2 - 1) / ell**2
        g = a[..., None] * y
        b = d * nu * (nu + 2) * q ** (-nu / 2 - 2) / ell**4
        H = a[..., None, None] * np.eye(2) + b[..., None, None] * y[..., :, None] * y[..., None, :]
        return D, g, H

    def _eval_gridded(self, x):
        if not np.all(self.in_box(x)):
            raise DomainError("evaluation point outside the gridded profile's box")
        sp = self._spline
        xs, ys = x[..., 0].ravel(), x[..., 1].ravel()
        shape = x.shape[:-1]
        D = sp.ev(xs, ys).reshape(shape)
        g = np.stack([sp.ev(xs, ys, dx=1).reshape(shape),
                      sp.ev(xs, ys, dy=1).reshape(shape)], axis=-1)
        hxx = sp.ev(xs, ys, dx=2).reshape(shape)
        hxy = sp.ev(xs, ys, dx=1, dy=1).reshape(shape)
        hyy = sp.ev(xs, ys, dy=2).reshape(shape)
        H = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
        return D, g, H

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        if self.kind == "gridded":
            raise ValueError("gridded profiles serialise through save_grid_raw")
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "D0": self.D0, "params": params, "d_min": self.d_min}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DepthProfile":
        params = {k: (tuple(v) if isinstance(v, list) else v)
                  for k, v in dict(data.get("params", {})).items()}
        return cls(data["kind"], float(data["D0"]), params, d_min=data.get("d_min"))


# ----------------------------------------------------------------------
def depth(profile: DepthProfile, x) -> np.ndarray:
    """Depth D(x) > 0."""
    return profile.depth(x)


def grad_depth(profile: DepthProfile, x) -> np.ndarray:
    """Gradient of D at x."""
    return profile.grad(x)


def load_grid_csv(path, D0: float | None = None, order: int = 3, **kw) -> DepthProfile:
    """Load ``x, y, depth`` rows lying on a full tensor grid (any row order).

    Without ``D0`` the asymptotic depth is estimated as the mean over the
    outermost ring of nodes.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rows = []
    with path.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row[:3]])
            except ValueError:
                continue  # header line
    data = np.asarray(rows)
    xs, ix = np.unique(data[:, 0], return_inverse=True)
    ys, iy = np.unique(data[:, 1], return_inverse=True)
    if xs.size * ys.size != data.shape[0]:
        raise ValueError("CSV rows do not form a complete tensor grid")
    values = np.empty((xs.size, ys.size))
    values[ix, iy] = data[:, 2]
    if D0 is None:
        ring = np.concatenate([values[0], values[-1], values[:, 0], values[:, -1]])
        D0 = float(ring.mean())
    return DepthProfile.from_samples(xs, ys, values, D0, order=order, **kw)


def save_grid_raw(profile: DepthProfile, path) -> Path:
    """Write a gridded profile as little-endian float64 plus a JSON sidecar.

    The array is stored row-major with shape ``(ny, nx)`` (x varies fastest).
    """
    if profile.kind != "gridded":
        raise ValueError("only gridded profiles have a raw representation")
    path = Path(path)
    g = profile.grid
    g.values.T.astype("<f8").tofile(path)
    meta = {"nx": int(g.x_nodes.size), "ny": int(g.y_nodes.size),
            "x0": float(g.x_nodes[0]), "y0": float(g.y_nodes[0]),
            "dx": float(g.x_nodes[1] - g.x_nodes[0]),
            "dy": float(g.y_nodes[1] - g.y_nodes[0]), "D0": float(profile.D0)}
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


def load_grid_raw(path, sidecar=None, **kw) -> DepthProfile:
    """Inverse of :func:`save_grid_raw`."""
    path = Path(path)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(path.suffix + ".json")
    if not path.exists() or not sidecar.exists():
        raise FileNotFoundError(path if not path.exists() else sidecar)
    meta = json.loads(sidecar.read_text())
    nx, ny = int(meta["nx"]), int(meta["ny"])
    arr = np.fromfile(path, dtype="<f8")
    if arr.size != nx * ny:
        raise ValueError(f"raw file holds {arr.size} values, sidecar declares {nx}x{ny}")
    xs = meta["x0"] + meta["dx"] * np.arange(nx)
    ys = meta["y0"] + meta["dy"] * np.arange(ny)
    return DepthProfile.from_samples(xs, ys, arr.reshape(ny, nx).T, float(meta["D0"]), **kw)


# ----------------------------------------------------------------------
@dataclass
class FlatnessReport:
    """Per-radius sup norms of ``D - D0``, ``grad D`` and ``Hess D`` on circles.

    ``rho_hat[a]`` is the fitted decay exponent for derivative order ``a``
    (so that ``sup |d^a (D - D0)| ~ <r>^{-a - rho_hat[a]}``), ``inf`` when the
    data vanish identically.  ``constants[a]`` lists ``sup * <r>^{a + rho}``.
    """

    radii: np.ndarray
    sup_dev: np.ndarray
    sup_grad: np.ndarray
    sup_hess: np.ndarray
    rho_hat: tuple
    declared_rho: float
    constants: tuple
    passed: bool

    @property
    def rho_fit(self) -> float:
        return float(min(self.rho_hat))


def _decay_exponent(bracket, sups, order):
    ok = sups > 1e-300
    if np.count_nonzero(ok) < 2:
        return np.inf
    slope = np.polyfit(np.log(bracket[ok]), np.log(sups[ok]), 1)[0]
    return float(-slope - order)


def flatness_report(profile: DepthProfile, radii: Sequence[float], rho: float = 1.0,
                    n_angles: int = 256, tol: float = 0.05) -> FlatnessReport:
    """Check the long-range decay ``|d^a (D - D0)| <= C <x>^{-|a| - rho}``.

    Sups are taken over ``n_angles`` points on each circle about the profile
    center.  The check passes when every fitted exponent is at least
    ``rho - tol``.
    """
    radii = np.asarray(radii, float)
    if radii.size < 3:
        raise InsufficientDataError("flatness_report needs at least 3 radii")
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and increasing")
    ang = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    circ = np.stack([np.cos(ang), np.sin(ang)], -1)
    pts = profile.center + radii[:, None, None] * circ[None]
    D, g, H = profile.evaluate(pts)
    sup_dev = np.max(np.abs(D - profile.D0), axis=1)
    sup_grad = np.max(np.linalg.norm(g, axis=-1), axis=1)
    sup_hess = np.max(np.linalg.norm(H, ord=2, axis=(-2, -1)), axis=1)
    bracket = np.sqrt(1.0 + radii**2)
    sups = (sup_dev, sup_grad, sup_hess)
    rho_hat = tuple(_decay_exponent(bracket, s, a) for a, s in enumerate(sups))
    constants = tuple(s * bracket ** (a + rho) for a, s in enumerate(sups))
    passed = all(r >= rho - tol for r in rho_hat)
    return FlatnessReport(radii, sup_dev, sup_grad, sup_hess, rho_hat, rho, constants, passed)
