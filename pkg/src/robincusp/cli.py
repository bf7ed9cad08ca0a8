"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 mesh-quality failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import SUBCRITICAL, RegimeError, blunting_phase
from .config import ConfigError, RunConfig, defaults, parse_config
from .eigsolve import SolverError
from .mesh2d import DomainSpec, MeshQualityError, MeshSpecError, build_mesh, mesh_quality, write_mesh
from . import sweep as sw

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MESH = 0, 2, 3, 4
PHASE_LEVELS = [float(x) for x in range(-20, 21, 2)]
PHASE_PERIODS = 3.0


class CliError(Exception):
    def __init__(self, code: int, message: str, pointer: str | None = None):
        super().__init__(message)
        self.code = code
        self.pointer = pointer


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return defaults()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config: {exc}") from None
    return parse_config(text)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.write_text(text)


def _dump(obj) -> str:
    return json.dumps(sw.to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _emit(args, summary: dict, lines: list[str]):
    if args.json:
        sys.stdout.write(_dump(summary))
    else:
        sys.stdout.write("\n".join(lines) + "\n")


def _manifest(cfg, model, extra: dict) -> dict:
    return {"config_hash": cfg.hash, "config": cfg.data, "version": __version__,
            "model": model.describe() if model is not None else None, **extra}


def _failure_code(failures) -> int:
    stages = {f.stage for f in failures}
    if "mesh" in stages:
        return EXIT_MESH
    return EXIT_SOLVER if stages else EXIT_OK


# ---------------------------------------------------------------- commands


def cmd_model(args, cfg):
    c = sw.constants_from_config(cfg)
    table = []
    if c.regime != SUBCRITICAL:
        for e in cfg.eps_values:
            ph = blunting_phase(e, c)
            table.append({"eps": e, "theta": ph.theta, "T_unwrapped": ph.T_unwrapped, "T0": ph.T0})
    summary = {"config_hash": cfg.hash, "constants": c.as_dict(), "theta_table": table}
    if args.out:
        _write(_out_dir(args, cfg) / "model.json", _dump(summary))
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def _sweep_common(args, cfg, kind):
    model = sw.model_from_config(cfg, kind)
    r = sw.run_sweep(cfg, model, threads=args.threads)
    return model, r


def cmd_reduced1d(args, cfg):
    model, r = _sweep_common(args, cfg, "reduced1d")
    out = _out_dir(args, cfg)
    _write(out / "reduced_spectra.csv", sw.reduced_spectra_csv(r, cfg.hash))
    man = _manifest(cfg, model, {"eps": r.eps, "provenance": r.provenance, "failures": r.failures,
                                 "certified": r.certified})
    _write(out / "reduced_manifest.json", _dump(man))
    _emit(args, {"certified": r.certified, "solved": len(r), "failures": r.failures,
                 "output": str(out)},
          [f"reduced model: {len(r)} eps solved, certified={r.certified}",
           *(f"failed at eps={f.eps!r}: {f.message}" for f in r.failures)])
    return _failure_code(r.failures)


def _single_eps(args, cfg) -> float:
    e = args.eps if args.eps is not None else cfg.eps_values[0]
    if not 0 < e < cfg["geometry"]["d"]:
        raise CliError(EXIT_CONFIG, f"eps={e} must lie in (0, d)", "/sweep/eps")
    return e


def cmd_mesh(args, cfg):
    e = _single_eps(args, cfg)
    g, m = cfg["geometry"], cfg["mesh"]
    c = sw.constants_from_config(cfg)
    spec = DomainSpec(g["omega_halfwidth"], g["d"], g["head_length"], e,
                      cfg["physics"]["symmetry_split"])
    out = _out_dir(args, cfg)
    try:
        mesh = build_mesh(spec, m["layers_per_period"], m["ny"], m["head_res"], sw._period(c),
                          m["max_aspect"], 0.0)
    except MeshSpecError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    q = mesh_quality(mesh)
    ok = q.ok(m["min_angle_floor"])
    _write(out / "mesh.txt", write_mesh(mesh))
    report = {"config_hash": cfg.hash, "eps": e, "vertices": int(mesh.vertices.shape[0]),
              "triangles": int(mesh.triangles.shape[0]), "min_angle": q.min_angle,
              "max_angle": q.max_angle, "max_aspect": q.max_aspect, "inverted": q.inverted,
              "min_angle_floor": m["min_angle_floor"], "ok": ok, "mesh_hash": sw.mesh_hash(mesh)}
    _write(out / "mesh_quality.json", _dump(report))
    _emit(args, report, [f"mesh at eps={e!r}: {report['vertices']} vertices, "
                         f"{report['triangles']} triangles, min angle {q.min_angle:.2f} deg",
                         f"quality {'ok' if ok else 'FAILED'} (floor {m['min_angle_floor']} deg)"])
    return EXIT_OK if ok else EXIT_MESH


def cmd_solve2d(args, cfg):
    e = _single_eps(args, cfg)
    model = sw.model_from_config(cfg, "fem2d")
    r = sw.run_sweep(cfg, model, eps=[e])
    if r.failures:
        f = r.failures[0]
        raise CliError(_failure_code(r.failures), f"eps={f.eps!r}: {f.message}")
    out = _out_dir(args, cfg)
    _write(out / "solve2d.csv", sw.spectra_csv(r, None, cfg.hash))
    s = r.spectra[0]
    summary = {"config_hash": cfg.hash, "eps": e, "values": s.values, "residuals": s.residuals,
               "inertia": [s.inertia_lo, s.inertia_hi], "certified": s.certified,
               "provenance": r.provenance[0]}
    _write(out / "solve2d.json", _dump(summary))
    _emit(args, summary, [f"eps={e!r}: {len(s)} eigenvalues in {s.window}, certified={s.certified}",
                          *(f"  {v!r}" for v in s.values.tolist())])
    return EXIT_OK


def _analysis_kw(cfg):
    a = cfg["analysis"]
    return dict(stable_tol_frac=a["stable_tol_frac"], min_rate_frac=a["min_rate_frac"],
                gate_frac=a["gate_frac"], tie_tol=a["tie_tol"])


def cmd_sweep(args, cfg):
    model, r = _sweep_common(args, cfg, None)
    out = _out_dir(args, cfg)
    a = cfg["analysis"]
    table = sw.track_branches(r, **_analysis_kw(cfg)) if len(r) >= 3 else None
    fits = []
    if r.constants.regime != SUBCRITICAL:
        fits = sw.sweep_phase_fits(r, a["lambda_star"], a["kappa"], a["fit_tol"])
    _write(out / "spectra.csv", sw.spectra_csv(r, table, cfg.hash))
    _write(out / "sweep_phase.csv", sw.phase_csv(fits, cfg.hash))
    branches = []
    if table is not None:
        branches = [{"id": b.id, "class": b.cls, "points": len(b), "first": b.values[0],
                     "last": b.values[-1], "slope": b.slope, "drift": b.drift,
                     "max_tip": max(b.tips), "violations": b.monotonicity_violations()}
                    for b in table.branches]
    man = _manifest(cfg, model, {
        "eps": r.eps, "certified": r.certified, "failures": r.failures,
        "provenance": r.provenance, "branches": branches,
        "splits": table.splits if table is not None else [],
        "period": sw._period(r.constants)})
    _write(out / "manifest.json", _dump(man))
    counts = {}
    for b in branches:
        counts[b["class"]] = counts.get(b["class"], 0) + 1
    _emit(args, {"config_hash": cfg.hash, "solved": len(r), "certified": r.certified,
                 "failures": r.failures, "branch_classes": counts, "output": str(out)},
          [f"sweep: {len(r)} eps solved, certified={r.certified}",
           f"branches: {counts}",
           *(f"failed at eps={f.eps!r} ({f.stage}): {f.message}" for f in r.failures)])
    return _failure_code(r.failures)


DEEP_EPS_LIMIT = 1e-4


def _blink_range(cfg, model, periods):
    hi = cfg["analysis"]["eps_seed_max"]
    lo = hi * math.exp(-periods * model.period)
    if model.kind == "fem2d" and cfg["mesh"]["max_aspect"] is not None and lo < DEEP_EPS_LIMIT:
        # aspect-capped meshes grow like 1/eps; the layer basis handles uncapped cells
        raise CliError(EXIT_CONFIG, f"eps down to {lo:.3g} needs an uncapped mesh: set "
                                    "max_aspect to null and min_angle_floor to 0",
                       "/mesh/max_aspect")
    return hi, lo


def cmd_blink(args, cfg):
    model = sw.model_from_config(cfg)
    a = cfg["analysis"]
    hi, lo = _blink_range(cfg, model, a["blink_periods"])
    lam = a["lambda_star"]
    rep = sw.scan_blinking(model, lam, hi, lo)
    rec = sw.verify_recurrence(model, lam, hi, kappa=a["kappa"], fit_tol=a["fit_tol"])
    out = _out_dir(args, cfg)
    _write(out / "blink.csv", sw.blink_csv([rep], model.constants, cfg.hash))
    summary = {"config_hash": cfg.hash, "blink": rep, "recurrence": rec,
               "recurrence_passed": rec.passed}
    _write(out / "blink.json", _dump(summary))
    lines = [f"lambda*={lam!r}: {len(rep.crossings)} crossings, status={rep.status}"]
    if rep.status == "ok":
        lines.append(f"mean ln-spacing {rep.mean_spacing:.6f} (expected {rep.expected_spacing:.6f},"
                     f" rel. error {rep.rel_error:.4f})")
    for s in rec.steps:
        lines.append(f"recurrence k={s.k}: eps_k={s.eps_pred:.6e} deviation={s.deviation:.3e} "
                     f"normalized={s.normalized:.3g} (C_test={rec.c_test:g}) "
                     f"{'pass' if s.passed else 'FAIL'}")
    _emit(args, sw.to_jsonable(summary), lines)
    return EXIT_OK


def cmd_phase(args, cfg):
    model = sw.model_from_config(cfg)
    a = cfg["analysis"]
    _blink_range(cfg, model, PHASE_PERIODS)
    rep = sw.phase_law(model, PHASE_LEVELS, a["eps_seed_max"], PHASE_PERIODS, kappa=a["kappa"],
                       fit_tol=a["fit_tol"])
    out = _out_dir(args, cfg)
    _write(out / "phase.csv", sw.phase_csv(rep.fits, cfg.hash))
    summary = {"config_hash": cfg.hash, "slope": rep.slope, "expected": rep.expected,
               "rel_error": rep.rel_error, "accepted": len(rep.accepted), "fits": len(rep.fits),
               "max_gap": rep.max_gap}
    _write(out / "phase.json", _dump(summary))
    _emit(args, summary, [f"phase slope {rep.slope:.6f} (expected {rep.expected:.6f}, "
                          f"rel. error {rep.rel_error:.4f}) from {len(rep.accepted)} accepted fits"])
    return EXIT_OK


def _read_csv(path: Path):
    import csv

    text = path.read_text()
    h = sw.read_hash(text)
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    return h, rows


def _phase_period(rows):
    fits = [sw.PhaseFit(float(r["eps"]), float(r["lambda"]), float(r["C"]), float(r["phi"]),
                        float(r["rmse"]), (0.0, 0.0), float(r["theta_measured"]),
                        float(r["rmse"]) <= 0.05 * float(r["C"]) and float(r["C"]) > sw.MIN_AMPLITUDE,
                        "oscillatory") for r in rows]
    slope, _ = sw.phase_slope(fits)
    return slope


def cmd_report(args, cfg):
    out = Path(args.out or cfg["output"]["directory"])
    if not out.is_dir():
        raise CliError(EXIT_CONFIG, f"output directory {out} does not exist")
    c = sw.constants_from_config(cfg)
    expected = sw._period(c)
    hashes = {}
    data = {}
    for name in ("spectra.csv", "sweep_phase.csv", "phase.csv", "blink.csv", "reduced_spectra.csv"):
        p = out / name
        if p.exists():
            hashes[name], data[name] = _read_csv(p)
    for name in ("manifest.json", "blink.json", "phase.json", "reduced_manifest.json"):
        p = out / name
        if p.exists():
            hashes[name] = json.loads(p.read_text()).get("config_hash")
    if not hashes:
        raise CliError(EXIT_CONFIG, f"nothing to report in {out}")
    bad = sorted(n for n, h in hashes.items() if h != cfg.hash)
    if bad:
        raise CliError(EXIT_CONFIG, f"config hash mismatch in {', '.join(bad)} "
                                    f"(expected {cfg.hash})")
    estimates = []
    if "blink.csv" in data:
        sp = [float(r["spacing_ln"]) for r in data["blink.csv"] if r["spacing_ln"]]
        if sp:
            estimates.append({"source": "blink.csv", "period": float(np.mean(sp))})
    for name in ("phase.csv", "sweep_phase.csv"):
        if name in data and c.regime != SUBCRITICAL:
            slope = _phase_period(data[name])
            if math.isfinite(slope) and slope != 0:
                estimates.append({"source": name, "period": math.pi / abs(slope), "phase_slope": slope})
    for e in estimates:
        e["expected"] = expected
        e["rel_error"] = abs(e["period"] - expected) / expected
        e["within_10pct"] = e["rel_error"] <= 0.1
    report = {"config_hash": cfg.hash, "expected_period": expected, "period_estimates": estimates}
    if (out / "manifest.json").exists():
        man = json.loads((out / "manifest.json").read_text())
        br = man.get("branches", [])
        plum = [b for b in br if b["class"] == "plummeting"]
        stab = [b for b in br if b["class"] == "stable"]
        drop = min((b["slope"] * expected for b in plum), default=None)
        report["sweep"] = {
            "certified": man.get("certified"), "failures": len(man.get("failures", [])),
            "branches": {k: sum(b["class"] == k for b in br)
                         for k in (sw.STABLE, sw.PLUMMETING, sw.UNRESOLVED)},
            "monotonicity_violations": sum(b["violations"] for b in plum),
            "smallest_plummet_drop": drop,
            "largest_stable_drift": max((b["drift"] for b in stab), default=None),
        }
    if (out / "blink.json").exists():
        bj = json.loads((out / "blink.json").read_text())
        report["recurrence"] = {"passed": bj.get("recurrence_passed"),
                                "steps": bj["recurrence"].get("steps", [])}
    _write(out / "report.json", _dump(report))
    lines = [f"config {cfg.hash}: expected period pi/mu0 = {expected:.6f}"]
    for e in estimates:
        lines.append(f"period estimate from {e['source']}: {e['period']:.6f} "
                     f"(rel. error {e['rel_error']:.4f}, {'ok' if e['within_10pct'] else 'FAIL'})")
    if "sweep" in report:
        s = report["sweep"]
        lines.append(f"sweep certified={s['certified']} branches={s['branches']} "
                     f"violations={s['monotonicity_violations']}")
    _emit(args, report, lines)
    return EXIT_OK


COMMANDS = {
    "model": (cmd_model, "print model constants and the extension-parameter table"),
    "reduced1d": (cmd_reduced1d, "eps sweep of the one-dimensional reduced model"),
    "mesh": (cmd_mesh, "write a mesh and its quality report"),
    "solve2d": (cmd_solve2d, "2-D spectrum at a single eps"),
    "sweep": (cmd_sweep, "eps sweep with branch tracking"),
    "blink": (cmd_blink, "detect blinking and verify the crossing recurrence"),
    "phase": (cmd_phase, "tail-phase fits at crossings and the phase law"),
    "report": (cmd_report, "aggregate the outputs of earlier commands"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--threads", type=int, default=1, metavar="N",
                        help="parallel eps solves")
    common.add_argument("--print-defaults", action="store_true",
                        help="print the default configuration and exit")
    parser = argparse.ArgumentParser(prog="robincusp", parents=[common],
                                     description="Robin-Laplacian spectra on blunted cusps")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("mesh", "solve2d"):
            p.add_argument("--eps", type=float, help="blunting size (default: first sweep value)")
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.print_defaults:
        sys.stdout.write(defaults().to_json() + "\n")
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        if args.threads < 1:
            raise CliError(EXIT_CONFIG, "--threads must be at least 1")
        cfg = _load_config(args.config)
        return COMMANDS[args.command][0](args, cfg)
    except ConfigError as exc:
        return _fail(args, EXIT_CONFIG, exc.message, exc.pointer)
    except CliError as exc:
        return _fail(args, exc.code, str(exc), exc.pointer)
    except RegimeError as exc:
        return _fail(args, EXIT_CONFIG, str(exc), "/physics/robin_a")
    except MeshQualityError as exc:
        return _fail(args, EXIT_MESH, str(exc))
    except SolverError as exc:
        return _fail(args, EXIT_SOLVER, str(exc))


def _fail(args, code, message, pointer=None) -> int:
    where = f" at {pointer}" if pointer else ""
    print(f"robincusp: error{where}: {message}", file=sys.stderr)
    if getattr(args, "json", False):
        sys.stdout.write(json.dumps({"error": message, "exit_code": code, "pointer": pointer},
                                    sort_keys=True) + "\n")
    return code


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
