"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 infeasible, 3 numerical trouble
(including the iteration limit), 4 a verification report that fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import systems
from .sdp import Status, export_sdpa
from .sos import ConfigurationError, DegreeConfig, assemble_program, lower_to_sdp
from .zubov import (Certificate, CertificateInvariantError, SpecError, SynthesisFailure, SystemSpec,
                    hard_violations, spec_hash, synthesize)

log = logging.getLogger("robustroa")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_REPORT = 0, 1, 2, 3, 4


class InputError(Exception):
    pass


# -- loading --------------------------------------------------------------------


def read_system(ref: str) -> tuple[SystemSpec, str, str]:
    """A system file path, or the name of a bundled system."""
    p = Path(ref)
    if not p.exists():
        try:
            p = systems.path(ref)
        except KeyError:
            raise InputError(f"{ref}: no such file or bundled system") from None
    raw = p.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        spec = SystemSpec.from_dict(doc)
    except (SpecError, ConfigurationError, ValueError) as exc:
        raise InputError(f"{p}: {exc}") from None
    return spec, spec_hash(raw), str(p)


def read_certificate(path: str, spec: SystemSpec, digest: str) -> Certificate:
    try:
        doc = json.loads(Path(path).read_bytes())
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if doc.get("system_hash") != digest:
        raise InputError(f"{path}: certificate was issued for a different system file")
    try:
        return Certificate.from_dict(doc, spec.n, spec.nvars)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed certificate: {exc}") from None


def _degrees(spec: SystemSpec, args) -> DegreeConfig:
    if args.k is None and args.ds is None and args.dsprime is None and spec.degrees is not None:
        return spec.degrees
    k = args.k if args.k is not None else (spec.degrees.k if spec.degrees else 4)
    base = DegreeConfig.default(spec, k)
    return DegreeConfig(k, args.ds if args.ds is not None else base.d_s,
                        args.dsprime if args.dsprime is not None else base.d_s_prime)


def _apply_delta(spec: SystemSpec, delta):
    if delta is not None:
        spec.delta = delta
    bad = hard_violations(spec)
    if bad:
        raise InputError("; ".join(v.message for v in bad))


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# -- grids ----------------------------------------------------------------------


def write_grid(path, points: np.ndarray, values: np.ndarray):
    """CSV with header x1,...,xn,value in row-major grid order."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    n = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(n)] + ["value"])
        for row, v in zip(points, values):
            w.writerow([repr(float(c)) for c in row] + [repr(float(v)) if not float(v).is_integer()
                                                        else str(int(v))])


def read_grid(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(c) for c in row] for row in r])
    if not header or header[-1] != "value":
        raise InputError(f"{path}: not a grid file")
    return data[:, :-1], data[:, -1]


def _parse_slice(spec: SystemSpec, text, at):
    """'1,2' plus ['x3=0.1', ...] into a plane and fixed coordinates."""
    if text is None:
        if spec.n > 2:
            raise InputError(f"the system has {spec.n} states; pass --slice with two axes")
        return (0, 1), {}
    try:
        plane = tuple(int(t) - 1 for t in text.split(","))
    except ValueError:
        raise InputError(f"bad --slice {text!r}; expected two 1-based axes like 1,2") from None
    if len(plane) != 2 or len(set(plane)) != 2 or not all(0 <= a < spec.n for a in plane):
        raise InputError(f"bad --slice {text!r} for {spec.n} states")
    fixed = {}
    for item in at or []:
        name, _, val = item.partition("=")
        idx = int(name.lstrip("x")) - 1 if name.lstrip("x").isdigit() else (
            spec.state_names.index(name) if name in spec.state_names else -1)
        if not 0 <= idx < spec.n or idx in plane:
            raise InputError(f"bad --at {item!r}")
        fixed[idx] = float(val)
    return plane, fixed


# -- commands -------------------------------------------------------------------


def cmd_synthesize(args) -> int:
    spec, digest, src = read_system(args.system)
    _apply_delta(spec, args.delta)
    try:
        cfg = _degrees(spec, args)
    except ConfigurationError as exc:
        raise InputError(str(exc)) from None
    t0 = time.perf_counter()
    try:
        cert = synthesize(spec, cfg, tol=args.tol, max_iter=args.max_iter)
    except (SpecError, ConfigurationError) as exc:
        raise InputError(str(exc)) from None
    except SynthesisFailure as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        if exc.status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE):
            return EXIT_INFEASIBLE
        return EXIT_NUMERICAL
    except CertificateInvariantError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    elapsed = time.perf_counter() - t0
    doc = cert.to_dict()
    doc["system_hash"] = digest
    doc["system_file"] = src
    doc["wall_clock_seconds"] = elapsed
    _write_json(args.out, doc)
    print(f"Optimal: objective {cert.objective_value:.9g}, degrees (k={cfg.k}, d_s={cfg.d_s}, "
          f"d_s'={cfg.d_s_prime}), {elapsed:.2f}s -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    if args.samples < 1:
        raise InputError("--samples must be positive")
    spec, digest, _ = read_system(args.system)
    cert = read_certificate(args.cert, spec, digest)
    try:
        rep = verify.check_certificate(cert, spec, args.samples, args.seed)
    except verify.DomainDegeneracyError as exc:
        raise InputError(str(exc)) from None
    if args.trajectories:
        rep.trajectory_summary = verify.trajectory_check(cert, spec, args.trajectories, args.traces,
                                                         args.seed, method=args.method)
    doc = rep.to_dict()
    doc["stored_identity_residuals"] = cert.identity_residuals
    _write_json(args.out, doc)
    if rep.passed:
        print(f"pass -> {args.out}", file=sys.stderr)
        return EXIT_OK
    print("FAIL: " + "; ".join(rep.failures()), file=sys.stderr)
    return EXIT_REPORT


def _u_grid(cert, spec, res, plane, fixed):
    from .verify import lift_plane

    r = float(np.sqrt(spec.R))
    ax = np.linspace(-r, r, res)
    g0, g1 = np.meshgrid(ax, ax, indexing="ij")
    pts = lift_plane(np.stack([g0.ravel(), g1.ravel()], axis=1), spec.n, plane, fixed)
    return ax, pts, cert.u.eval_many(pts)


def _in_ball(spec, pts, vals):
    # the u = 1 curve only bounds the certified set inside B(0,R)
    return np.where(np.sum(pts ** 2, axis=1) <= spec.R, vals, np.nan)


def cmd_contour(args) -> int:
    from . import plotting

    spec, digest, _ = read_system(args.system)
    plane, fixed = _parse_slice(spec, args.slice, args.at)
    if args.res < 2:
        raise InputError("--res must be at least 2")
    cert = read_certificate(args.cert, spec, digest)
    ax, pts, vals = _u_grid(cert, spec, args.res, plane, fixed)
    write_grid(args.out, pts, vals)
    if not args.no_plot:
        hmax = np.max(np.stack([h.eval_many(pts) for h in spec.X_state()]), axis=0)
        png = Path(args.out).with_suffix(".png")
        plotting.region_figure(png, (ax, ax), _in_ball(spec, pts, vals).reshape(args.res, args.res),
                               boundary=hmax.reshape(args.res, args.res),
                               labels=(spec.state_names[plane[0]], spec.state_names[plane[1]]),
                               title=f"u = 1, k = {cert.degree_config.k}")
    print(f"{len(vals)} grid values -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_roa_sim(args) -> int:
    from . import plotting, verify

    spec, _, _ = read_system(args.system)
    plane, fixed = _parse_slice(spec, args.slice, args.at)
    if args.res < 1 or args.policies < 1 or not args.dt > 0 or not args.T >= args.dt:
        raise InputError("need --res >= 1, --policies >= 1, --dt > 0 and --T >= --dt")
    g = verify.estimate_max_roa(spec, args.res, args.policies, args.T, args.dt, args.seed, args.method,
                                plane, fixed, (-args.box, args.box))
    pts = verify.lift_plane(g.points(), spec.n, plane, fixed)
    write_grid(args.out, pts, g.inside.ravel().astype(int))
    if not args.no_plot:
        plotting.region_figure(Path(args.out).with_suffix(".png"), roa=g.inside, roa_axes=g.axes,
                               labels=(spec.state_names[plane[0]], spec.state_names[plane[1]]),
                               title="simulated region")
    print(f"{int(g.inside.sum())} of {g.inside.size} cells inside -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_export_sdpa(args) -> int:
    spec, _, _ = read_system(args.system)
    _apply_delta(spec, args.delta)
    try:
        cfg = _degrees(spec, args)
        low = lower_to_sdp(assemble_program(spec, cfg))
    except ConfigurationError as exc:
        raise InputError(str(exc)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        export_sdpa(low.problem, fh)
    p = low.problem
    print(f"{p.m} constraints, {len(p.block_sizes)} PSD blocks, {p.free_dim} free -> {args.out}",
          file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    """Verification, volume error and figures for one certificate."""
    from . import plotting, verify

    spec, digest, _ = read_system(args.system)
    cert = read_certificate(args.cert, spec, digest)
    plane, fixed = _parse_slice(spec, args.slice, args.at)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    rep = verify.check_certificate(cert, spec, args.samples, args.seed)
    if args.trajectories:
        rep.trajectory_summary = verify.trajectory_check(cert, spec, args.trajectories, args.traces, args.seed)
    if args.roa:
        pts, vals = read_grid(args.roa)
        res = int(round(np.sqrt(len(vals))))
        if res * res != len(vals):
            raise InputError(f"{args.roa}: not a square grid")
        axes = [np.unique(pts[:, plane[0]]), np.unique(pts[:, plane[1]])]
        h = axes[0][1] - axes[0][0] if res > 1 else 2.0
        lo, hi = axes[0][0] - h / 2, axes[0][-1] + h / 2
        g = verify.RoaGrid(axes, vals.reshape(res, res) > 0.5, plane, fixed, (lo, hi))
    else:
        g = verify.estimate_max_roa(spec, args.res, args.policies, seed=args.seed, plane=plane, fixed=fixed)
        write_grid(out / "roa.csv", verify.lift_plane(g.points(), spec.n, plane, fixed),
                   g.inside.ravel().astype(int))
    if spec.n == 2 or args.slice:
        try:
            ve = verify.relative_volume_error(cert, spec, g, args.mc, args.seed)
            rep.volume_error_percent, rep.volume_error_stderr = ve.percent, ve.stderr
        except verify.UndefinedVolumeError as exc:
            print(f"volume error undefined: {exc}", file=sys.stderr)
    ax, pts, vals = _u_grid(cert, spec, args.contour_res, plane, fixed)
    write_grid(out / "contour.csv", pts, vals)
    hmax = np.max(np.stack([hj.eval_many(pts) for hj in spec.X_state()]), axis=0)
    n = args.contour_res
    plotting.region_figure(out / "region.png", (ax, ax), _in_ball(spec, pts, vals).reshape(n, n), g.inside,
                           g.axes, hmax.reshape(n, n), (spec.state_names[plane[0]], spec.state_names[plane[1]]),
                           f"k = {cert.degree_config.k}")
    doc = rep.to_dict()
    _write_json(out / "report.json", doc)
    msg = "pass" if rep.passed else "FAIL: " + "; ".join(rep.failures())
    if rep.volume_error_percent is not None:
        msg += f", volume error {rep.volume_error_percent:.2f}% (se {rep.volume_error_stderr:.2f})"
    print(f"{msg} -> {out}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_REPORT


# -- parser ---------------------------------------------------------------------


def _degree_flags(p):
    p.add_argument("--k", type=int, help="degree of u")
    p.add_argument("--ds", type=int, help="SOS degree of the multipliers in the decrease identity")
    p.add_argument("--dsprime", type=int, help="SOS degree of the multipliers in the other identities")
    p.add_argument("--delta", type=int, help="override the system's delta (must be odd)")


def _slice_flags(p):
    p.add_argument("--slice", help="two 1-based state axes spanning the plane, e.g. 1,2")
    p.add_argument("--at", action="append", metavar="xi=VALUE",
                   help="value of a state off the plane (repeatable; default 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robustroa", description="Robust domain-of-attraction certificates "
                                 "from a single semi-definite program.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="solve for a certificate")
    p.add_argument("system", help="system JSON file or bundled name (vdp, perturbed2d, seven_dim)")
    _degree_flags(p)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="sampled checks of a certificate")
    p.add_argument("system")
    p.add_argument("cert")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectories", type=int, default=0, help="certified start points to simulate")
    p.add_argument("--traces", type=int, default=10, help="perturbation traces per start point")
    p.add_argument("--method", choices=("euler", "rk4"), default="rk4")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("contour", help="grid of u values for drawing the certified region")
    p.add_argument("system")
    p.add_argument("cert")
    p.add_argument("--res", type=int, default=200)
    _slice_flags(p)
    p.add_argument("--no-plot", action="store_true", help="skip the PNG written next to the CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("roa-sim", help="simulated region of attraction on a grid")
    p.add_argument("system")
    p.add_argument("--res", type=int, default=400)
    p.add_argument("--policies", type=int, default=20)
    p.add_argument("--T", type=float, default=50.0)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("euler", "rk4"), default="euler")
    p.add_argument("--box", type=float, default=1.0, help="half-width of the square grid")
    _slice_flags(p)
    p.add_argument("--no-plot", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_roa_sim)

    p = sub.add_parser("export-sdpa", help="write the semi-definite program in SDPA sparse format")
    p.add_argument("system")
    _degree_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_sdpa)

    p = sub.add_parser("report", help="verification, volume error and figures in one directory")
    p.add_argument("system")
    p.add_argument("cert")
    p.add_argument("--roa", help="reuse a grid written by roa-sim")
    p.add_argument("--res", type=int, default=400)
    p.add_argument("--policies", type=int, default=20)
    p.add_argument("--contour-res", type=int, default=300)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--mc", type=int, default=1_000_000)
    p.add_argument("--trajectories", type=int, default=200)
    p.add_argument("--traces", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _slice_flags(p)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
