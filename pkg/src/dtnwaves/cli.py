"""Command-line front end.

Each command reads one YAML config (all keys optional), applies ``--set``
overrides and writes its outputs plus ``manifest.json`` into the output
directory.  Exit status: 0 success, 1 a study failed, 2 unusable config.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger("dtnwaves")

COMMANDS = ("dispersion", "strip-verify", "rays", "green", "scatter-norm", "verify-all")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    profile: dict = field(default_factory=lambda: {"kind": "constant", "D0": 1.0})
    E: float = 1.0
    h: object = 0.05
    grid: dict = field(default_factory=lambda: {"X": 8.0, "N": 256, "Nz": 48})
    source: dict = field(default_factory=lambda: {"x0": [0.0, 0.0], "band": 0.5})
    cutoffs: dict = field(default_factory=dict)
    eps_schedule: list = field(default_factory=lambda: [0.032, 0.016, 0.008, 0.004])
    criteria: list = field(default_factory=lambda: list(range(1, 12)))
    output: str = "dtnwaves-out"
    seed: int = 0

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise UsageError("config must be a mapping")
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**copy.deepcopy(data))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hs(self) -> list:
        return [float(v) for v in (self.h if isinstance(self.h, (list, tuple)) else [self.h])]

    def validate(self):
        try:
            if not float(self.E) > 0:
                raise UsageError("E must be positive")
            if not all(v > 0 for v in self.hs):
                raise UsageError("h must be positive")
            for k in ("X", "N", "Nz"):
                if k in self.grid and not float(self.grid[k]) > 0:
                    raise UsageError(f"grid.{k} must be positive")
            if any(e <= 0 for e in self.eps_schedule):
                raise UsageError("eps_schedule entries must be positive")
            if not set(self.criteria) <= set(range(1, 12)):
                raise UsageError("criteria are numbered 1..11")
            if len(self.source.get("x0", [0, 0])) != 2:
                raise UsageError("source.x0 needs two coordinates")
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad config value: {exc}") from exc
        grid_file = self.profile.get("grid")
        if grid_file is not None and not Path(grid_file).exists():
            raise UsageError(f"profile grid file not found: {grid_file}")

    def build_profile(self):
        from .bathymetry import DepthProfile, load_grid_csv, load_grid_raw
        p = dict(self.profile)
        if "grid" in p:
            path = Path(p["grid"])
            D0 = p.get("D0")
            return load_grid_csv(path, D0=D0) if path.suffix == ".csv" else load_grid_raw(path)
        kind = p.get("kind", "constant")
        D0 = float(p.get("D0", 1.0))
        params = dict(p.get("params", {}))
        makers = {"constant": DepthProfile.constant, "radial-bump": DepthProfile.radial_bump,
                  "sech-trench": DepthProfile.sech_trench, "annular": DepthProfile.annular,
                  "algebraic": DepthProfile.algebraic}
        if kind not in makers:
            raise UsageError(f"unknown profile kind {kind!r}")
        return makers[kind](D0, **params)


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
        if not isinstance(d, dict):
            raise UsageError(f"cannot set {dotted}")
    d[keys[-1]] = value


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a mapping")
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} must look like key=value")
        k, v = item.split("=", 1)
        _set_path(data, k.strip(), yaml.safe_load(v))
    return RunConfig.from_dict(data)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Outputs:
    """Collects written files; JSON and CSV are written deterministically."""

    def __init__(self, root: Path):
        self.root = root
        self.files = []

    def path(self, name) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.files.append(p)
        return p

    def csv(self, name, header, rows):
        with self.path(name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def raster(self, name, array):
        p = self.path(name)
        np.ascontiguousarray(array, dtype="<f8").tofile(p)
        return p


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_dispersion(cfg: RunConfig, out: Outputs) -> dict:
    from .dispersion import solve_Z, dtn_symbol_dq
    prof = cfg.build_profile()
    E = float(cfg.E)
    depths = np.unique(np.concatenate([np.linspace(prof.min_depth(), prof.D0, 9), [prof.D0]]))
    rows = []
    for D in depths:
        s = E * D
        z = float(solve_Z(s))
        r = z / D
        rows.append([D, E, s, z, r, 1.0 / r, r * r, np.sqrt(2.0 / (r * dtn_symbol_dq(D, r))),
                     abs(z * np.tanh(z) - s)])
    out.csv("dispersion.csv", ["D", "E", "s", "Z", "r", "g", "V", "C0_shell", "residual"], rows)
    return {"criteria": {}}


def _criteria_block(results):
    return {str(r.number): r.to_dict() for r in results}


def cmd_strip_verify(cfg, out):
    from .acceptance import run_all
    res = run_all([2, 3, 4], echo=log.info)
    out.csv("strip_verify.csv", ["criterion", "passed", "measured"],
            [[r.number, r.passed, json.dumps(r.to_dict()["measured"], sort_keys=True)]
             for r in res])
    return {"criteria": _criteria_block(res)}


def cmd_rays(cfg, out):
    from .rays import launch_fan, nontrapping_check
    prof = cfg.build_profile()
    x0 = np.asarray(cfg.source.get("x0", [0.0, 0.0]), float)
    n = int(cfg.grid.get("n_angles", 64))
    T = float(cfg.grid.get("T", 10.0))
    dt = float(cfg.grid.get("dt", 0.01))
    fan = launch_fan(prof, x0, float(cfg.E), n, T, dt, store_every=max(1, int(0.1 / dt)))
    rows = []
    for k in range(fan.t.size):
        for j in range(n):
            rows.append([j, fan.t[k], *fan.traj.x[k, j], *fan.traj.p[k, j], fan.traj.S[k, j],
                         fan.J[k, j], int(fan.maslov[k, j])])
    out.csv("rays.csv", ["ray", "t", "x", "y", "px", "py", "S", "J", "maslov"], rows)
    nt = nontrapping_check(prof, float(cfg.E))
    summary = {"nontrapping": bool(nt.passed), "trapped_fraction": nt.trapped_fraction,
               "max_maslov": int(fan.maslov.max()), "caustic_events": len(fan.caustic_times),
               "energy_drift": float(np.max(fan.traj.energy_drift))}
    out.json("rays_summary.json", summary)
    return {"criteria": {}, "summary": summary}


def cmd_green(cfg, out, verify=False):
    from .greenfn import (Cutoffs, SourceModel, assemble_green, compare_fields,
                          exact_green_constant_depth, fan_for)
    from .rays import nontrapping_check
    prof = cfg.build_profile()
    if verify and prof.kind != "constant":
        raise UsageError("--verify needs a constant-depth profile")
    E = float(cfg.E)
    h = cfg.hs[0]
    if not nontrapping_check(prof, E).passed:
        raise RuntimeError("energy is trapping for this profile")
    model = SourceModel.at(prof, cfg.source.get("x0", [0.0, 0.0]), E, h,
                           band=float(cfg.source.get("band", 0.5)))
    X = float(cfg.grid.get("X", 8.0))
    N = int(cfg.grid.get("N", 256))
    xs = -X + 2.0 * X / N * np.arange(N)
    P = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
    R = np.linalg.norm(P - np.asarray(model.x0), axis=-1)
    fan = fan_for(prof, model, float(R.max()) + 0.5)
    g = assemble_green(fan, model, P, Cutoffs(**cfg.cutoffs))
    out.raster("green_real.f64", g.values.real)
    out.raster("green_imag.f64", g.values.imag)
    out.raster("green_branches.f64", g.branches.astype(float))
    meta = {"E": E, "h": h, "eps": g.eps, "cutoffs": g.cutoffs, "shape": [N, N],
            "x_min": -X, "dx": 2.0 * X / N, "x0": list(model.x0),
            "calibration": [g.metadata["calibration"].real, g.metadata["calibration"].imag],
            "branch_raster": "green_branches.f64", "caustic_points": int(g.caustic.sum()),
            "shadow_points": int(g.shadow.sum())}
    out.json("green.json", meta)
    criteria = {}
    if verify:
        mask = (R >= 1.0) & (R <= 3.0) & g.valid
        ex = exact_green_constant_depth(prof.D0, E, h, 0.0, P[mask], model=model)
        comp = compare_fields(g.values[mask], ex)
        out.csv("green_oracle.csv", ["x", "y", "re_assembled", "im_assembled", "re_exact",
                                     "im_exact"],
                [[*p, a.real, a.imag, b.real, b.imag]
                 for p, a, b in zip(P[mask], g.values[mask], ex)])
        criteria["7"] = {"number": 7, "passed": comp.passed,
                         "measured": {"modulus_error": comp.modulus_error,
                                      "phase_error": comp.phase_error}}
    return {"criteria": criteria}


def cmd_scatter_norm(cfg, out):
    from .pdo import ResolventQuery, weighted_resolvent_norm
    prof = cfg.build_profile()
    hs = cfg.hs if len(cfg.hs) > 1 else [0.2, 0.1, 0.05]
    rep = weighted_resolvent_norm(prof, ResolventQuery(float(cfg.E), 0.0, s=1.0), hs,
                                  X=float(cfg.grid.get("X", 32.0)), dim=1)
    out.csv("scatter_norm.csv", ["h", "eps", "norm"],
            [[h, e, n] for h, e, n in zip(rep.h, rep.eps, rep.norms)])
    return {"criteria": {"10": {"number": 10, "passed": rep.passed,
                                "measured": {"slope": rep.slope}}}}


def cmd_verify_all(cfg, out):
    from .acceptance import run_all
    res = run_all(cfg.criteria, echo=log.info)
    out.csv("acceptance.csv", ["criterion", "title", "passed"],
            [[r.number, r.title, r.passed] for r in res])
    return {"criteria": _criteria_block(res)}


HANDLERS = {"dispersion": cmd_dispersion, "strip-verify": cmd_strip_verify, "rays": cmd_rays,
            "green": cmd_green, "scatter-norm": cmd_scatter_norm, "verify-all": cmd_verify_all}


def _versions():
    import scipy
    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "dtnwaves": __version__}


def run(command, cfg: RunConfig, verify=False) -> int:
    """Execute ``command``; returns the exit status."""
    out = Outputs(Path(cfg.output))
    config = cfg.to_dict()
    # the output location is not an input
    inputs = json.dumps({k: v for k, v in config.items() if k != "output"},
                        sort_keys=True).encode()
    grid_file = cfg.profile.get("grid")
    if grid_file:
        inputs += Path(grid_file).read_bytes()
    manifest = {"command": command, "config": config,
                "inputs_sha256": hashlib.sha256(inputs).hexdigest(),
                "versions": _versions()}
    np.random.seed(cfg.seed)
    t = time.perf_counter()
    status = 0
    try:
        handler = HANDLERS[command]
        result = handler(cfg, out, verify) if command == "green" else handler(cfg, out)
        manifest["criteria"] = {k: ("PASS" if v["passed"] else "FAIL")
                                for k, v in result["criteria"].items()}
        manifest["details"] = result["criteria"]
        failed = [k for k, v in result["criteria"].items() if not v["passed"]]
        if failed:
            status = 1
            manifest["failed"] = failed
    except UsageError:
        raise
    except Exception as exc:  # a study that cannot finish is a failed study
        status = 1
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        log.error("%s failed: %s", command, exc)
    manifest["timings"] = {"total_seconds": round(time.perf_counter() - t, 3)}
    manifest["status"] = "PASS" if status == 0 else "FAIL"
    manifest["outputs"] = [{"path": p.name, "sha256": sha256(p)} for p in out.files]
    out.root.mkdir(parents=True, exist_ok=True)
    (out.root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


def build_parser():
    ap = argparse.ArgumentParser(prog="dtnwaves",
                                 description="Water-wave DtN symbols, rays and Green functions.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("-c", "--config", help="YAML config file")
    ap.add_argument("-o", "--out", help="output directory (overrides config)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config entry, e.g. --set grid.N=512")
    ap.add_argument("--E", type=float, help="energy (overrides config)")
    ap.add_argument("--h", type=float, nargs="+", help="semiclassical parameter(s)")
    ap.add_argument("--criteria", type=int, nargs="+", help="criteria for verify-all")
    ap.add_argument("--verify", action="store_true", help="green: compare with the exact kernel")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    overrides = list(args.set)
    if args.out:
        overrides.append(f"output={json.dumps(args.out)}")
    if args.E is not None:
        overrides.append(f"E={args.E!r}")
    if args.h:
        overrides.append(f"h={json.dumps(args.h if len(args.h) > 1 else args.h[0])}")
    if args.criteria:
        overrides.append(f"criteria={json.dumps(args.criteria)}")
    try:
        cfg = load_config(args.config, overrides)
        return run(args.command, cfg, verify=args.verify)
    except UsageError as exc:
        print(f"dtnwaves: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
