"""Command-line driver: ``degctrl <subcommand> --config FILE [--out DIR]``.

Exit codes: 0 success, 2 invalid configuration, 3 mathematical failure
(uncontrollable truncation, no kernel witness, infeasible weights),
4 numerical failure, 64 unknown subcommand.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .carleman import (CarlemanInfeasible, empirical_carleman_ratio, scalar_system,
                       select_parameters, sigma_profile, smooth_initial_data, weight_psi_phi)
from .control import (ControllabilityError, SimulationError, estimate_observability_constant,
                      initial_state, simulate_forward, synthesize_null_control,
                      verify_null_control)
from .kalman import (WitnessError, adjoint_mode_trajectory, dichotomy_scan, kalman_constants,
                     kernel_witness)
from .model import SpecError, emit_config, load_config
from .operator import OperatorError, assemble_operator, export_operator_csv
from .spectral import SpectrumError, bessel_oracle_all, compute_spectrum

SUBCOMMANDS = ("validate", "spectrum", "kalman", "witness", "synthesize", "simulate",
               "observe", "carleman")

EXIT_OK, EXIT_CONFIG, EXIT_MATH, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3, 4, 64

USAGE = "usage: degctrl {" + ",".join(SUBCOMMANDS) + "} --config PATH [--out DIR] [options]"


class MathFailure(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="degctrl", usage=USAGE)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--modes", type=int)
    p.add_argument("--nx", type=int)
    p.add_argument("--nt", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--p0", type=int, help="mode for the kernel witness (default: first deficient)")
    p.add_argument("--project-out-deficient", action="store_true")
    p.add_argument("--controlled", action="store_true",
                   help="simulate: synthesize and apply the null control")
    p.add_argument("--dump-operator", action="store_true",
                   help="spectrum: also write the banded operator")
    return p


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, summary)


def _basis(spec, modes):
    op = assemble_operator(spec)
    return op, compute_spectrum(op, modes)


def cmd_validate(spec, settings, args, out):
    from .model import validate_system
    report = validate_system(spec)
    _write_json(out / "summary.json", report)
    (out / "resolved.yaml").write_text(emit_config(spec, settings))
    return ["summary.json", "resolved.yaml"], report


def cmd_spectrum(spec, settings, args, out):
    op, basis = _basis(spec, settings.modes)
    oracle = [math.nan] * basis.P
    if spec.a.kind == "power-law":
        try:
            oracle = list(bessel_oracle_all(spec.a.alpha, basis.P, spec.bc))
        except SpectrumError:
            pass
    rows = []
    for p in range(basis.P):
        lam = basis.lambdas[p]
        rel = abs(lam - oracle[p]) / oracle[p] if math.isfinite(oracle[p]) else math.nan
        rows.append([p + 1, lam, oracle[p], rel])
    _write_csv(out / "spectrum.csv", ["p", "lambda", "oracle", "rel_error"], rows)
    outputs = ["spectrum.csv"]
    if args.dump_operator:
        export_operator_csv(op, out / "operator.csv")
        outputs.append("operator.csv")
    summary = {"modes": basis.P, "N": op.N, "grading": op.grading, "residual": basis.residual,
               "max_rel_error": max((r[3] for r in rows if math.isfinite(r[3])), default=None)}
    _write_json(out / "summary.json", summary)
    return outputs + ["summary.json"], summary


def _kalman_report(spec, settings):
    op, basis = _basis(spec, settings.p_max)
    rng = np.random.default_rng(settings.seed)
    return basis, dichotomy_scan(spec, basis, settings.p_max, settings.tol, rng=rng)


def cmd_kalman(spec, settings, args, out):
    basis, rep = _kalman_report(spec, settings)
    _write_csv(out / "kalman.csv", ["p", "lambda", "rank", "sigma_min", "det"],
               [r.as_row() for r in rep.records])
    k = kalman_constants(spec, basis, settings.p_max, settings.tol)
    summary = rep.summary()
    summary["constants"] = {"forward": k.forward, "adjoint": k.adjoint, "inverse": k.inverse,
                            "argmax_forward": k.argmax_forward, "argmax_inverse": k.argmax_inverse}
    _write_json(out / "summary.json", summary)
    return ["kalman.csv", "summary.json"], summary


def cmd_witness(spec, settings, args, out):
    basis, rep = _kalman_report(spec, settings)
    p0 = args.p0
    if p0 is None:
        if not rep.deficient_modes:
            raise MathFailure("no deficient mode in the scan: no witness exists")
        p0 = rep.deficient_modes[0]
    w = kernel_witness(spec, basis, p0, settings.tol)
    traj = adjoint_mode_trajectory(spec, basis, p0, w.z_T, N_t=spec.N_t // settings.time_stride or 1)
    rows = [[t, *z, o] for t, z, o in zip(traj.t, traj.z, traj.observation)]
    _write_csv(out / "witness.csv", ["t", *[f"z{i + 1}" for i in range(spec.n)], "abs_BTz"], rows)
    summary = {"p0": p0, "lambda": w.lam, "z_T": w.z_T, "kernel_residual": w.residual,
               "chain_residual": w.chain_residual, "invariance_residual": w.invariance_residual,
               "sup_abs_BTz": traj.sup_observation, "norm_z0": traj.norm_z0}
    _write_json(out / "summary.json", summary)
    return ["witness.csv", "summary.json"], summary


def _control(spec, settings, args):
    op, basis = _basis(spec, settings.modes)
    Y0 = initial_state(settings.initial, basis, spec.n)
    try:
        ctrl = synthesize_null_control(spec, basis, Y0,
                                       project_out_deficient=args.project_out_deficient)
    except ControllabilityError as exc:
        raise MathFailure(str(exc)) from exc
    return op, basis, Y0, ctrl


def cmd_synthesize(spec, settings, args, out):
    op, basis, Y0, ctrl = _control(spec, settings, args)
    ver = verify_null_control(spec, basis, Y0, ctrl)
    stride = settings.time_stride
    rows = []
    for k in range(0, ctrl.N_t + 1, stride):
        for j, x in enumerate(ctrl.x):
            rows.append([ctrl.t[k], x, *ctrl.v[:, j, k]])
    _write_csv(out / "control.csv", ["t", "x", *[f"v{c + 1}" for c in range(spec.m)]], rows)
    summary = {"modes": ctrl.P, "energy": ctrl.energy, "energy_quadrature": ctrl.energy_quadrature,
               "truncated_residual": ctrl.truncated_residual, "residual": ver["residual"],
               "gramian_min_eig": ctrl.gramian.sigma_min,
               "gramian_equilibrated_min": ctrl.gramian.equilibrated_min,
               "projected_out_deficient": ctrl.projected}
    _write_json(out / "summary.json", summary)
    return ["control.csv", "summary.json"], summary


def cmd_simulate(spec, settings, args, out):
    if args.controlled:
        op, basis, Y0, ctrl = _control(spec, settings, args)
    else:
        op, basis = _basis(spec, settings.modes)
        Y0, ctrl = initial_state(settings.initial, basis, spec.n), None
    traj = simulate_forward(spec, op, Y0, ctrl, stride=settings.time_stride)
    rows = []
    for t, Y in zip(traj.t, traj.Y):
        for j, x in enumerate(op.nodes):
            rows.append([t, x, *Y[:, j]])
    _write_csv(out / "trajectory.csv", ["t", "x", *[f"y{i + 1}" for i in range(spec.n)]], rows)
    _write_csv(out / "norms.csv", ["t", "norm"], zip(traj.t_all, traj.norms))
    summary = {"final_norm": traj.norms[-1], "initial_norm": traj.norms[0],
               "ratio": traj.norms[-1] / traj.norms[0] if traj.norms[0] > 0 else 0.0,
               "controlled": bool(args.controlled), "snapshots": len(traj.t)}
    _write_json(out / "summary.json", summary)
    return ["trajectory.csv", "norms.csv", "summary.json"], summary


def cmd_observe(spec, settings, args, out):
    op, basis = _basis(spec, settings.modes)
    rep = estimate_observability_constant(spec, basis)
    summary = rep.summary()
    _write_json(out / "summary.json", summary)
    return ["summary.json"], summary


def cmd_carleman(spec, settings, args, out):
    cfg = settings.carleman
    omega0 = cfg.get("omega0")
    if omega0 is None:
        c0 = 0.5 * (spec.omega[0] + spec.omega[1])
        r = 0.25 * (spec.omega[1] - spec.omega[0])
        omega0 = (c0 - r, c0 + r)
    sigma = sigma_profile(omega0)
    params = select_parameters(spec.a, sigma, c=cfg.get("c"), rho=cfg.get("rho"))
    T = float(cfg.get("T", 4.0))
    s0 = float(cfg.get("s0", 1.0))
    s_grid = np.linspace(s0, 4.0 * s0, int(cfg.get("s_points", 8)))
    sspec = scalar_system(spec.a, float(cfg.get("potential", 0.0)), T=T,
                          N=int(cfg.get("nx", spec.N)), N_t=int(cfg.get("nt", spec.N_t)),
                          bc=spec.bc, grading=spec.grading)
    op = assemble_operator(sspec)
    weights = weight_psi_phi(spec.a, params, T, sigma=sigma, omega=spec.omega)
    rng = np.random.default_rng(settings.seed)
    rows, sup = [], 0.0
    for i in range(int(cfg.get("samples", 5))):
        u0 = smooth_initial_data(op, rng)
        for r in empirical_carleman_ratio(sspec, u0, s_grid, weights, op=op):
            rows.append([i + 1, r.s, r.lhs, r.rhs, r.ratio, r.cutoff_rel])
            sup = max(sup, r.ratio)
    _write_csv(out / "carleman.csv", ["sample", "s", "LHS", "RHS", "ratio", "cutoff_error"], rows)
    summary = {"parameters": params.to_dict(), "omega0": list(omega0), "T": T,
               "s_grid": s_grid, "sup_ratio": sup, "M_0": weights.M_0, "m_0": weights.m_0}
    _write_json(out / "summary.json", summary)
    return ["carleman.csv", "summary.json"], summary


COMMANDS = {"validate": cmd_validate, "spectrum": cmd_spectrum, "kalman": cmd_kalman,
            "witness": cmd_witness, "synthesize": cmd_synthesize, "simulate": cmd_simulate,
            "observe": cmd_observe, "carleman": cmd_carleman}


def _apply_overrides(spec, settings, args):
    changes = {}
    if args.nx is not None:
        changes["N"] = args.nx
    if args.nt is not None:
        changes["N_t"] = args.nt
    if changes:
        spec = spec.replace(**changes)
    if args.modes is not None:
        settings.modes = args.modes
    if args.tol is not None:
        settings.tol = args.tol
    if args.seed is not None:
        settings.seed = args.seed
    return spec, settings


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in SUBCOMMANDS:
        print(USAGE, file=sys.stderr)
        return EXIT_USAGE
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    started = time.perf_counter()
    try:
        text = args.config.read_text()
        spec, settings = load_config(text)
        spec, settings = _apply_overrides(spec, settings, args)
    except (OSError, SpecError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        outputs, summary = COMMANDS[args.subcommand](spec, settings, args, out)
    except SpecError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MathFailure, WitnessError, CarlemanInfeasible) as exc:
        print(f"mathematical failure: {exc}", file=sys.stderr)
        return EXIT_MATH
    except (SpectrumError, OperatorError, SimulationError, np.linalg.LinAlgError,
            ValueError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = {
        "subcommand": args.subcommand,
        "config": str(args.config),
        "resolved": yaml.safe_load(emit_config(spec, settings)),
        "version": __version__,
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "outputs": [{"file": f, "sha256": _sha256(out / f)} for f in outputs],
    }
    _write_json(out / "manifest.json", manifest)
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
