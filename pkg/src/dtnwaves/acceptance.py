"""Acceptance checks, one function per numbered criterion.

Every check returns a :class:`CriterionResult` carrying the measured numbers
next to the thresholds they were held to.  ``run_all`` runs a selection and
is shared by the test suite and the ``verify-all`` command.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bathymetry import DepthProfile

TITLES = {
    1: "dispersion root and asymptotics",
    2: "constant-depth strip oracle",
    3: "vanishing subprincipal term",
    4: "discrete adjointness",
    5: "equivalent ray flows",
    6: "ray integrity",
    7: "Green function vs exact kernel",
    8: "Green function remainder and cutoff robustness",
    9: "limiting absorption",
    10: "weighted resolvent scaling",
    11: "nontrapping diagnostic",
}


@dataclass
class CriterionResult:
    number: int
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def title(self) -> str:
        return TITLES[self.number]

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        keys = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{status}] {self.number:>2}. {self.title} ({self.seconds:.1f}s): {keys}"

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": bool(self.passed),
                "seconds": round(self.seconds, 3),
                "measured": {k: _plain(v) for k, v in self.measured.items()}}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def _timed(number, fn):
    t = time.perf_counter()
    passed, measured = fn()
    return CriterionResult(number, bool(passed), measured, time.perf_counter() - t)


def bump_profile():
    return DepthProfile.radial_bump(1.0, 0.3, 1.0)


# ----------------------------------------------------------------------
def criterion_1() -> CriterionResult:
    from .dispersion import solve_Z

    def run():
        s = np.logspace(-6, 3, 2001)
        z = solve_Z(s)
        resid = np.max(np.abs(z * np.tanh(z) - s) / np.maximum(1.0, s))
        small = abs(z[0] / np.sqrt(s[0]) - 1.0)
        large = abs(z[-1] / s[-1] - 1.0)
        ok = resid <= 1e-12 and small <= 1e-4 and large <= 1e-4
        return ok, {"max_scaled_residual": resid, "Z/sqrt(s)-1 at 1e-6": small,
                    "Z/s-1 at 1e3": large}
    return _timed(1, run)


def criterion_2() -> CriterionResult:
    from .strip import StripGrid, solve_mixed

    def run():
        h = 0.1
        flat = DepthProfile.constant(1.0)
        errs_psi, errs_bot = [], []
        for nx, nz in ((32, 16), (64, 32), (128, 64)):
            g = StripGrid(2.0 * np.pi * h, nx, nz)
            top = np.cos(g.x1 / h)
            s = solve_mixed(flat, g, h, {"phi_top": top})
            errs_psi.append(np.max(np.abs(s.psi_top - np.tanh(1.0) * top)) / np.tanh(1.0))
            errs_bot.append(np.max(np.abs(s.phi_bot - top / np.cosh(1.0))) * np.cosh(1.0))
        order = float(np.log2(errs_psi[-2] / errs_psi[-1]))
        ok = errs_psi[-1] <= 0.01 and errs_bot[-1] <= 0.01 and order >= 1.8
        return ok, {"rel_err_psi_top@Nz=64": errs_psi[-1], "rel_err_bottom@Nz=64": errs_bot[-1],
                    "observed_order": order}
    return _timed(2, run)


def criterion_3() -> CriterionResult:
    from .strip import symbol_residual_study

    def run():
        prof = DepthProfile.sech_trench(1.0, 0.3, 1.0)
        hs = [0.4, 0.2, 0.1]
        st = symbol_residual_study(prof, hs)
        ctrl = symbol_residual_study(prof, hs, perturbation=lambda D, q: D * np.ones_like(q))
        ok = st.slope >= 1.8 and ctrl.slope <= 1.2
        return ok, {"slope": st.slope, "control_slope": ctrl.slope, "residuals": st.residual}
    return _timed(3, run)


def criterion_4() -> CriterionResult:
    from .strip import adjointness_study

    def run():
        reports, rates = adjointness_study(bump_profile(), 6.0, 0.3)
        at64 = np.array(reports[1].ratios)
        ok = np.all(at64 <= 5e-2) and np.all(rates >= 1.8)
        return ok, {"defects@64/48 (L11,L22,L21+L12*)": at64, "min_rate": float(np.min(rates))}
    return _timed(4, run)


def criterion_5() -> CriterionResult:
    from .rays import maupertuis_overlap, shell_momentum

    def run():
        worst = {}
        ok = True
        for name, prof in (("constant", DepthProfile.constant(1.0)), ("bump", bump_profile())):
            x0 = np.array([-3.0, 0.4])
            p0 = shell_momentum(prof, x0, 1.0, [1.0, 0.2])
            rep = maupertuis_overlap(prof, 1.0, x0, p0, T=10.0, dt=1e-3)
            worst[name] = max(rep.distances.values())
            ok &= rep.passed
        return ok, {f"max_distance_{k}": v for k, v in worst.items()}
    return _timed(5, run)


def rk4_order(profile, x0, p0, T=10.0, dts=(0.1, 0.05, 0.025), kind="L0"):
    """Observed order from endpoint differences under step halving."""
    from .rays import flow
    ends = []
    for dt in dts:
        tr = flow(profile, kind, x0, p0, T, dt, variational=False)
        ends.append(np.concatenate([tr.x[-1, 0], tr.p[-1, 0]]))
    d1 = np.linalg.norm(ends[0] - ends[1])
    d2 = np.linalg.norm(ends[1] - ends[2])
    return float(np.log2(d1 / d2))


def criterion_6() -> CriterionResult:
    from .rays import flow, launch_fan, shell_momentum

    def run():
        prof = bump_profile()
        x0 = np.array([-3.0, 0.4])
        p0 = shell_momentum(prof, x0, 1.0, [1.0, 0.2], hamiltonian="L0")
        tr = flow(prof, "L0", x0, p0, 20.0, 1e-3)
        drift = float(tr.energy_drift[0])
        det = float(tr.det_defect[0])
        fan = launch_fan(prof, x0, 1.0, 720, 10.0, 0.01)
        away = np.abs(fan.J) > 0.05 * np.max(np.abs(fan.J))
        away[0] = False
        spread = float(np.max(np.abs(fan.J_fd - fan.J)[away] / np.abs(fan.J[away])))
        order = rk4_order(prof, x0, p0)
        ok = drift <= 1e-8 and det <= 1e-6 and spread <= 0.01 and order >= 3.8
        return ok, {"energy_drift": drift, "det_defect": det, "spreading_mismatch": spread,
                    "rk4_order": order}
    return _timed(6, run)


def criterion_7() -> CriterionResult:
    from .greenfn import calibration_constant, compare_fields

    def run():
        c05, g, ex = calibration_constant(0.05)
        c10, _, _ = calibration_constant(0.1)
        comp = compare_fields(g.values, ex, g.valid)
        drift = abs(c05 / c10 - 1.0)
        ok = comp.passed and drift <= 0.05 and not np.any(g.caustic)
        return ok, {"modulus_error": comp.modulus_error, "phase_error": comp.phase_error,
                    "calibration@0.05": abs(c05), "calibration_drift": drift,
                    "caustic_points": int(np.sum(g.caustic))}
    return _timed(7, run)


def criterion_8() -> CriterionResult:
    from .greenfn import (Cutoffs, SourceModel, annulus_points, assemble_green,
                          compare_fields, fan_for, remainder_study)

    def run():
        prof = DepthProfile.radial_bump(1.0, 0.15, 1.0, center=(1.5, 0.5))
        st = remainder_study(prof, [0.2, 0.1, 0.05])
        flat = DepthProfile.constant(1.0)
        model = SourceModel.at(flat, (0.0, 0.0), 1.0, 0.05)
        pts = annulus_points((0.0, 0.0), 1.0, 3.0)
        fan = fan_for(flat, model, 3.5)
        base = assemble_green(fan, model, pts)
        worst_mod = worst_ph = 0.0
        for rf, tf in ((1.25, 1), (0.75, 1), (1, 1.25), (1, 0.75)):
            g = assemble_green(fan, model, pts, Cutoffs().perturbed(rf, tf))
            c = compare_fields(g.values, base.values, base.valid & g.valid)
            worst_mod = max(worst_mod, c.modulus_error)
            worst_ph = max(worst_ph, c.phase_error)
        ok = st.passed and worst_mod <= 0.1 and worst_ph <= 0.1
        return ok, {"residual_exponent": st.exponent, "relative_residuals": st.residual / st.f_norm,
                    "cutoff_modulus_change": worst_mod, "cutoff_phase_change": worst_ph}
    return _timed(8, run)


def criterion_9() -> CriterionResult:
    from .greenfn import SourceModel, assemble_green, fan_for, limiting_absorption_study

    def run():
        flat = DepthProfile.constant(1.0)
        model = SourceModel.at(flat, (0.0, 0.0), 1.0, 0.05)
        fan = fan_for(flat, model, 3.5)
        rep = limiting_absorption_study(model, flat, [0.032, 0.016, 0.008, 0.004],
                                        reference=lambda p: assemble_green(fan, model, p))
        c = rep.comparison
        return rep.passed, {"cauchy_differences": rep.differences, "monotone": rep.monotone,
                            "modulus_error": c.modulus_error, "phase_error": c.phase_error}
    return _timed(9, run)


def criterion_10() -> CriterionResult:
    from .pdo import ResolventQuery, weighted_resolvent_norm

    def run():
        prof = DepthProfile.constant(1.0)
        q = ResolventQuery(1.0, 0.0, s=1.0)
        hs = [0.2, 0.1, 0.05]
        rep = weighted_resolvent_norm(prof, q, hs, X=32.0, dim=1)
        ctrl = weighted_resolvent_norm(prof, q, hs, X=32.0, dim=1, fixed_eps=1.0,
                                       check_nontrapping=False)
        ok = rep.passed and abs(ctrl.slope) <= 0.2
        return ok, {"slope": rep.slope, "norms": rep.norms, "control_slope": ctrl.slope}
    return _timed(10, run)


def criterion_11() -> CriterionResult:
    from .rays import nontrapping_check

    def run():
        res = {
            "constant": nontrapping_check(DepthProfile.constant(1.0), 1.0),
            "bump": nontrapping_check(bump_profile(), 1.0),
            "annular": nontrapping_check(DepthProfile.annular(1.0, 0.7, 3.0, 0.6), 1.0),
        }
        ok = res["constant"].passed and res["bump"].passed and not res["annular"].passed
        return ok, {f"{k}_passes": v.passed for k, v in res.items()} | {
            "annular_trapped_fraction": res["annular"].trapped_fraction}
    return _timed(11, run)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def run_all(selected=None, echo=None) -> list:
    """Run the selected criteria (default all) in order."""
    out = []
    for i in sorted(CRITERIA if selected is None else selected):
        res = CRITERIA[i]()
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
