"""Command-line front end.

Exit codes: 0 success, 2 attitude not observable, 3 unreadable or invalid
input, 4 solver did not converge (or too many Monte Carlo samples failed),
5 Monte Carlo calibration outside [0.990, 1.000] with ``--assert-calibration``.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, analytics, montecarlo
from .errors import DegenerateRepresentation, NonSPDWeight, ObservabilityError, ScanFileError
from .fileio import load_scan, scan_to_dict, write_json
from .geometry import attitude_error, attitude_to_euler
from .model import synthesize_reference_vectors, validate_instance
from .solver import SolverConfig, solve_isotropic, solve_pose

log = logging.getLogger("tlspose")

EXIT_OK = 0
EXIT_UNOBSERVABLE = 2
EXIT_INPUT = 3
EXIT_NONCONVERGED = 4
EXIT_UNCALIBRATED = 5

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    # Usage errors are input errors; argparse's own default (2) would
    # collide with the observability exit code.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


class _Exit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _setup_logging():
    level = _LEVELS.get(os.environ.get("TLSPOSE_LOG", "warn").strip().lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level)


def _solver_config(path):
    if not path:
        return SolverConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _Exit(EXIT_INPUT, f"{path}: cannot read solver config ({exc})") from None
    allowed = {"max_iterations", "step_tolerance", "cost_tolerance", "max_halvings"}
    if not isinstance(data, dict):
        raise _Exit(EXIT_INPUT, f"{path}: expected an object")
    unknown = set(data) - allowed
    if unknown:
        raise _Exit(EXIT_INPUT, f"{path}.{sorted(unknown)[0]}: unknown field")
    try:
        return SolverConfig(**data)
    except (TypeError, ValueError) as exc:
        raise _Exit(EXIT_INPUT, f"{path}: {exc}") from None


def _load(path):
    try:
        scan = load_scan(path)
    except ScanFileError as exc:
        raise _Exit(EXIT_INPUT, str(exc)) from None
    return scan


def _check_valid(scan, path):
    """Map validation failures to exit codes: SPD/finite problems are input errors."""
    report = validate_instance(scan.instance)
    for v in report.violations:
        if v.kind in ("spd", "nonfinite"):
            where = f"observations[{v.index}].R" if v.index is not None else "observations"
            raise _Exit(EXIT_INPUT, f"{path}:{where}: {v.message}")
    if not report.ok:
        diag = analytics.observability_check(scan.instance)
        msg = "; ".join(v.message for v in report.violations)
        raise _Exit(EXIT_UNOBSERVABLE, _observability_message(msg, diag.null_direction, diag.attitude))


def _observability_message(msg, null_dir, attitude):
    out = f"attitude not observable: {msg}"
    if null_dir is not None:
        out += f"\n  null direction of H: {_vec_str(null_dir)}"
        if attitude is not None:
            out += " (body frame, at the unit-weight SVD attitude)"
    return out


def _vec_str(v):
    return "[" + ", ".join("%.9g" % x for x in v) + "]"


def _sigmas(scan, path):
    if scan.sigmas_r is not None:
        return scan.sigmas_r, scan.sigmas_b
    sr, sb = [], []
    for i, nm in enumerate(scan.instance.noises):
        s = nm.isotropic_sigmas()
        if s is None:
            raise _Exit(EXIT_INPUT, f"{path}:observations[{i}]: --isotropic needs sigma_r/sigma_b or an isotropic R")
        sr.append(s[0])
        sb.append(s[1])
    return sr, sb


def _euler(A):
    try:
        roll, pitch, yaw = attitude_to_euler(A)
    except DegenerateRepresentation:
        return None
    return {"roll": roll, "pitch": pitch, "yaw": yaw}


def _psd_ok(m, tol=1e-12):
    m = np.asarray(m)
    if not np.allclose(m, m.T, rtol=0, atol=1e-10 * max(1.0, np.abs(m).max())):
        return False
    return float(np.linalg.eigvalsh(m)[0]) >= -tol * max(float(np.trace(m)), 0.0)


def build_report(scan, sol, rep, command="solve", seed=None):
    """Structured report of one solve; embeds the input for re-running."""
    obs = []
    inst = scan.instance
    for i, po in enumerate(rep.per_observation):
        obs.append({
            "b_hat": po.b_hat,
            "r_hat": po.r_hat,
            "b_residual": po.b_hat - inst.b_tilde[i],
            "r_residual": po.r_hat - inst.r_tilde[i],
            "cov_res_b": po.cov_res_b,
            "cov_res_r": po.cov_res_r,
            "P_b": po.P_b,
            "P_r": po.P_r,
            "sigma3": {
                "b_est": 3 * np.sqrt(np.diag(po.P_b)),
                "r_est": 3 * np.sqrt(np.diag(po.P_r)),
                "b_res": 3 * np.sqrt(np.diag(po.cov_res_b)),
                "r_res": 3 * np.sqrt(np.diag(po.cov_res_r)),
            },
        })
    covs = [rep.P_delta_alpha, rep.cov_p, rep.P_f] + [m for po in rep.per_observation
                                                       for m in (po.cov_res_b, po.cov_res_r, po.P_b, po.P_r)]
    if not all(_psd_ok(m) for m in covs):
        log.warning("a reported covariance is not positive semidefinite within tolerance")
    out = {
        "tool": "tlspose",
        "version": __version__,
        "command": command,
        "seed": seed,
        "solution": {
            "attitude": sol.pose.attitude,
            "translation": sol.pose.translation,
            "euler_deg": _euler(sol.pose.attitude),
            "cost": sol.final_cost,
            "iterations": sol.iterations,
            "converged": sol.converged,
            "status": sol.status,
            "step_norms": [list(s) for s in sol.step_norms],
        },
        "covariance": {
            "attitude": rep.P_delta_alpha,
            "translation": rep.cov_p,
            "joint": rep.P_f,
            "fim": rep.fim,
            "sigma3_attitude": 3 * np.sqrt(np.diag(rep.P_delta_alpha)),
            "sigma3_translation": 3 * np.sqrt(np.diag(rep.cov_p)),
        },
        "observations": obs,
        "input": scan_to_dict(scan),
    }
    if scan.truth is not None:
        out["truth_errors"] = {
            "attitude": attitude_error(sol.pose.attitude, scan.truth.attitude),
            "translation": sol.pose.translation - scan.truth.translation,
        }
    return out


def cmd_solve(args):
    scan = _load(args.input)
    _check_valid(scan, args.input)
    inst = scan.instance
    try:
        if args.isotropic:
            sr, sb = _sigmas(scan, args.input)
            sol = solve_isotropic(inst, sr, sb)
        else:
            sol = solve_pose(inst, _solver_config(args.config))
        rep = analytics.analyze(inst, sol.pose)
    except ObservabilityError as exc:
        raise _Exit(EXIT_UNOBSERVABLE, _observability_message(str(exc), exc.null_direction, exc.attitude)) from None
    except NonSPDWeight as exc:
        raise _Exit(EXIT_INPUT, f"{args.input}: {exc}") from None
    report = build_report(scan, sol, rep)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "report.json")
    write_json(path, report)
    A, p = sol.pose.attitude, sol.pose.translation
    print(f"status: {sol.status} after {sol.iterations} iterations, cost {sol.final_cost:.9g}")
    print("attitude:\n" + "\n".join("  " + _vec_str(row) for row in A))
    print("translation [m]: " + _vec_str(p))
    print("3-sigma attitude [rad]: " + _vec_str(3 * np.sqrt(np.diag(rep.P_delta_alpha))))
    print("3-sigma translation [m]: " + _vec_str(3 * np.sqrt(np.diag(rep.cov_p))))
    print(f"report: {path}")
    if not sol.converged:
        raise _Exit(EXIT_NONCONVERGED, f"solver did not converge ({sol.status})")
    return EXIT_OK


def cmd_montecarlo(args):
    scan = _load(args.input)
    _check_valid(scan, args.input)
    if scan.truth is None:
        raise _Exit(EXIT_INPUT, f"{args.input}:truth: montecarlo needs a truth pose")
    # The body vectors are taken as exact and the reference vectors are
    # regenerated from the truth pose, so the template is noise free.
    tpl_inst = scan.instance.with_measurements(
        synthesize_reference_vectors(scan.truth, scan.instance.b_tilde), scan.instance.b_tilde
    )
    cfg = montecarlo.MonteCarloConfig(
        n_samples=args.samples, rng_seed=args.seed, truth=scan.truth, template=tpl_inst,
        solver=_solver_config(args.config),
    )
    try:
        rep = montecarlo.run_monte_carlo(cfg)
    except ObservabilityError as exc:
        raise _Exit(EXIT_UNOBSERVABLE, _observability_message(str(exc), exc.null_direction, exc.attitude)) from None
    except NonSPDWeight as exc:
        raise _Exit(EXIT_INPUT, f"{args.input}: {exc}") from None
    os.makedirs(args.out_dir, exist_ok=True)
    series_dir = os.path.join(args.out_dir, "series")
    montecarlo.write_csv_series(rep, series_dir)
    cov_err = rep.covariance_errors()
    summary = {
        "tool": "tlspose",
        "version": __version__,
        "command": "montecarlo",
        "seed": rep.seed,
        "rng": "numpy Philox, key=seed, counter=[0, 0, 0, sample_index]",
        "n_samples": rep.n_samples,
        "n_failed": rep.n_failed,
        "coverage_bounds": list(montecarlo.COVERAGE_BOUNDS),
        "coverage": rep.coverage,
        "calibrated": rep.calibrated,
        "covariance_relative_error": cov_err,
        "empirical": rep.empirical,
        "analytic": rep.analytic,
        "input": scan_to_dict(scan),
    }
    path = os.path.join(args.out_dir, "montecarlo.json")
    write_json(path, summary)
    cov = np.array(list(rep.coverage.values()))
    print(f"samples: {rep.n_samples} ({rep.n_failed} failed), seed {rep.seed}")
    print(f"3-sigma coverage: min {cov.min():.4f}, max {cov.max():.4f} over {cov.size} coordinates")
    print(f"attitude covariance rel. error {cov_err['attitude']:.4f}, translation {cov_err['translation']:.4f}")
    print(f"report: {path}\nseries: {series_dir}")
    if not rep.failure_budget_ok:
        raise _Exit(EXIT_NONCONVERGED, f"{rep.n_failed} of {rep.n_samples} samples failed (limit 1%)")
    if args.assert_calibration and not rep.calibrated:
        bad = ", ".join(f"{k}={v:.4f}" for k, v in rep.coverage_violations().items())
        raise _Exit(EXIT_UNCALIBRATED, f"coverage outside {montecarlo.COVERAGE_BOUNDS}: {bad}")
    return EXIT_OK


def cmd_validate(args):
    scan = _load(args.input)
    inst = scan.instance
    report = validate_instance(inst)
    for i, nm in enumerate(inst.noises):
        why = nm.spd_violation()
        print(f"observation {i}: noise covariance {'SPD' if why is None else 'NOT SPD (' + why + ')'}")
    if "spd" in report.kinds() or "nonfinite" in report.kinds():
        for v in report.violations:
            print(f"violation: {v.message}")
        return EXIT_INPUT
    diag = analytics.observability_check(inst)
    print(f"rank of B (unit weights): {diag.rank_of_B}")
    print(f"smallest eigenvalue of H at initialization: {diag.smallest_H_eigenvalue:.9g}")
    if diag.null_direction is not None:
        print(f"null direction of H: {_vec_str(diag.null_direction)}")
    for v in report.violations:
        print(f"violation: {v.message}")
    if not report.ok or not diag.observable:
        return EXIT_UNOBSERVABLE
    print("instance is solvable")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="tlspose", description="Total-least-squares pose estimation with analytic covariances.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="estimate the pose and its covariances")
    p.add_argument("input")
    p.add_argument("--config", help="JSON file with solver settings")
    p.add_argument("--out-dir", default=".", help="directory for report.json (default: .)")
    p.add_argument("--isotropic", action="store_true", help="use the closed-form isotropic solver")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("montecarlo", help="calibration run against the truth pose in the file")
    p.add_argument("input")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with solver settings")
    p.add_argument("--out-dir", default=".", help="directory for montecarlo.json and series/ (default: .)")
    p.add_argument("--assert-calibration", action="store_true", help="exit 5 unless every coverage is in [0.990, 1.000]")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("validate", help="check solvability and observability")
    p.add_argument("input")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "samples", 1) is not None and getattr(args, "samples", 1) < 1:
        parser.error("--samples must be at least 1")
    try:
        return args.func(args)
    except _Exit as exc:
        print(f"tlspose: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # keep the exit-code contract for unexpected failures
        log.debug("unhandled error", exc_info=True)
        print(f"tlspose: internal error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
