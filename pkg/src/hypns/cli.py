"""Command-line entry point ``hypns``.

Subcommands
-----------
simulate          integrate a configured run, write snapshots and the energy ledger
verify-extension  extension identities per alpha, as CSV
diagnose          scale-invariant quantities, excess and criteria per (x, t, r)
cover             covering counts and premeasures for a point set or a scan

Exit codes: 0 success, 1 usage or configuration error, 2 numerical abort
(including a failed identity check in ``verify-extension``).
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _fail(msg: str, code: int = EXIT_USAGE) -> int:
    print(f"hypns: {msg}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    from hypns import io, solver

    try:
        cfg = io.load_config(args.config)
    except io.ConfigError as exc:
        return _fail(str(exc))
    out = Path(args.out if args.out else cfg.output_dir)
    try:
        u0 = cfg.initial.build(cfg.model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", solver.UnresolvedWarning)
            traj = solver.run(cfg.solver, u0)
    except solver.NumericalAbort as exc:
        return _fail(f"numerical abort: {exc}", EXIT_NUMERIC)
    except (ValueError, io.ConfigError) as exc:
        return _fail(f"invalid run: {exc}")
    last = traj.snapshots[-1].u.coeffs
    if not np.all(np.isfinite(last)):
        return _fail("numerical abort: non-finite state", EXIT_NUMERIC)
    io.save_trajectory(traj, out, cfg)
    led = traj.ledger
    print(f"wrote {len(traj.snapshots)} snapshots to {out}; "
          f"max energy violation {led.max_violation:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-extension

VERIFY_COLUMNS = ("alpha", "check", "mode", "y_grid", "residual", "tolerance", "passed")

_VERIFY_MODES = ((1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 0), (2, 2, 1))


def verify_rows(alpha: float, grid_n: int = 16) -> list:
    """Identity residuals for one ``alpha``.

    Each row is ``(alpha, check, mode, y_grid, residual, tolerance, passed)``
    with ``passed = residual <= tolerance``.  Refinement checks report the
    ratio refined/production, which must not exceed 1/2.
    """
    from hypns import extension as ex
    from hypns.spectral import ModelParams, SpectralField

    rows = []

    def add(check, mode, yname, res, tol):
        rows.append((alpha, check, mode, yname, float(res), tol, bool(res <= tol)))

    ys = (0.25, 0.5, 1.0)
    mom = [ex.kernel_moments(alpha, y) for y in ys]
    m0 = mom[-1]["mass"]
    add("kernel_mass", "-", "-", max(abs(m["mass"] - m0) / m0 for m in mom), 1e-6)
    add("kernel_first", "-", "-", max(float(np.max(np.abs(m["first"]))) for m in mom), 1e-8)
    add("kernel_third", "-", "-", max(float(np.max(np.abs(m["third"]))) for m in mom), 1e-8)
    s1 = np.trace(mom[-1]["second"])
    add("kernel_second_scaling", "-", "-",
        max(abs(np.trace(m["second"]) / (s1 * y * y) - 1.0) for m, y in zip(mom, ys)), 1e-6)

    c_fun = ex.c_alpha_constant(alpha)
    c_cal = ex.yang_constant_calibrated(alpha)
    add("yang_constant_agreement", "-", "-", abs(c_fun - c_cal) / c_fun, 1e-3)

    params = ModelParams(alpha, grid_n=grid_n)
    yg = ex.YGrid.production(params)
    yr = yg.refine()
    ratios = []
    for k in _VERIFY_MODES:
        f = SpectralField(ex._single_mode_coeffs(params, k), params)
        name = "".join(str(v) for v in k)
        e0 = ex.yang_energy_check(f, yg).relative_error
        e1 = ex.yang_energy_check(f, yr).relative_error
        add("yang_energy", name, "production", e0, 1e-2)
        add("yang_energy", name, "refined", e1, 1e-2)
        add("yang_refinement", name, "ratio", e1 / e0 if e0 > 0 else 0.0, 0.5)
        cs = ex.cs_energy_check(f, yg)
        ratios.append(cs.lhs / cs.rhs)
        h0 = ex.harmonicity_residual(ex.cs_extend(f, yg))
        h1 = ex.harmonicity_residual(ex.cs_extend(f, yr))
        add("cs_harmonicity", name, "production", h0, math.inf)
        add("cs_harmonicity_refinement", name, "ratio", h1 / h0 if h0 > 0 else 0.0, 0.5)
    ratios = np.array(ratios)
    add("cs_ratio_spread", "all", "production", float(np.ptp(ratios) / np.mean(ratios)), 1e-3)
    return rows


def cmd_verify(args) -> int:
    from hypns import io

    alphas = args.alpha if args.alpha is not None else [1.25]
    for a in alphas:
        if not 1.0 < a <= 1.25:
            return _fail(f"alpha {a:g} outside (1, 5/4]")
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for a in alphas:
            rows += verify_rows(a)
    text = io.csv_text(VERIFY_COLUMNS, rows, None, alpha=",".join(repr(a) for a in alphas) or "none",
                       grid="16^3")
    _emit(text, args.out)
    failed = [r for r in rows if not r[-1]]
    for r in failed:
        print(f"hypns: check failed: alpha={r[0]} {r[1]} mode={r[2]} {r[3]} "
              f"residual={r[4]:.3e} > {r[5]:g}", file=sys.stderr)
    return EXIT_NUMERIC if failed else EXIT_OK


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# diagnose


def diagnose_columns(dim: int) -> tuple:
    return (tuple(f"x{i + 1}" for i in range(dim))
            + ("t", "r", "A", "B", "C", "D", "F", "T", "E_flat", "E_V", "E_P", "E_nl", "E",
               "eps_maximal_holds", "eps_maximal_margin", "eps_variant_holds", "eps_variant_margin",
               "eps_ckn_holds", "eps_ckn_margin"))


def diagnose_rows(traj, spec, radii=None) -> list:
    """One row per ``(x, t, r)`` of the diagnostics spec.

    Criteria whose enlarged cylinder does not fit into the saved time range
    or the ``L/8`` radius bound are reported as ``nan``.
    """
    from hypns import diagnostics as dg
    from hypns.cylinder import ParabolicCylinder

    params = traj.params
    alpha = params.alpha
    radii = tuple(radii) if radii else spec.resolved_radii(params)
    points = spec.points or (tuple(0.5 * params.torus_len for _ in range(params.dim)),)
    times = spec.times or (float(traj.times[-1]),)
    nan = float("nan")
    rows = []
    for t in times:
        for x in points:
            try:
                ckn = dg.eps_ckn(traj, x, t, spec.eps, radii)
                ckn_cells = (ckn.holds, ckn.margin)
            except ValueError:
                ckn_cells = (nan, nan)
            for r in radii:
                cyl = ParabolicCylinder(tuple(x), t, r, alpha)
                sq = dg.scale_quantities(traj, cyl)
                ex = dg.excess(traj, cyl)
                try:
                    mx = dg.eps_maximal(traj, cyl, spec.eps)
                    mx_cells = (mx.holds, mx.margin)
                except ValueError:
                    mx_cells = (nan, nan)
                try:
                    var = dg.eps_variant(traj, x, t, spec.eps, r)
                    var_cells = (var.holds, var.margin)
                except ValueError:
                    var_cells = (nan, nan)
                rows.append(tuple(x) + (t, r, sq.a, sq.b_q, sq.c_q, sq.d_q, sq.f_q, sq.t_q, sq.e_flat,
                                        ex.e_v, ex.e_p, ex.e_nl, ex.total)
                            + mx_cells + var_cells + ckn_cells)
    return rows


def cmd_diagnose(args) -> int:
    from dataclasses import replace

    from hypns import io

    try:
        traj, cfg = io.load_trajectory(args.trajectory)
    except FileNotFoundError as exc:
        return _fail(f"missing snapshots: {exc}")
    except (io.ConfigError, io.SnapshotFormatError, ValueError) as exc:
        return _fail(f"unreadable trajectory: {exc}")
    spec = cfg.diagnostics
    try:
        if args.config:
            spec = io.load_config(args.config).diagnostics
        if args.radii is not None:
            spec = replace(spec, radii=tuple(args.radii))
        if args.threshold is not None:
            spec = replace(spec, eps=args.threshold)
        cfg = replace(cfg, diagnostics=spec)
    except (io.ConfigError, ValueError) as exc:
        return _fail(str(exc))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rows = diagnose_rows(traj, spec)
    except ValueError as exc:
        return _fail(f"invalid diagnostics settings: {exc}")
    _emit(io.csv_text(diagnose_columns(traj.params.dim), rows, cfg), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# cover

COVER_COLUMNS = ("gauge", "beta", "delta", "count", "premeasure", "box_count", "box_slope")


def cover_rows(points, betas, deltas, alpha: float, gauge: str) -> list:
    """Premeasure bounds per ``(beta, delta)`` and box counts per ``delta``.

    ``count`` and ``premeasure`` come from parabolic cylinders of radius
    ``delta/2``; ``box_count`` uses the selected gauge and ``box_slope`` is
    the log-log slope over all deltas (``nan`` with fewer than three).
    """
    from hypns import covering as cv

    slope = float("nan")
    box = {}
    if len(deltas) >= 3:
        est = cv.box_counting_estimate(points, deltas, alpha, gauge)
        slope = est["slope"]
        box = dict(zip(deltas, est["counts"]))
    rows = []
    for b in betas:
        for dl in deltas:
            res = cv.parabolic_premeasure(points, b, dl, alpha)
            if dl not in box:
                box[dl] = _box_count(points, dl, alpha, gauge)
            rows.append((gauge, b, dl, res.count, res.premeasure, int(box[dl]), slope))
    return rows


def _box_count(points, delta, alpha, gauge) -> int:
    from hypns import covering as cv

    px, pt = cv._as_points(points)
    rho = delta if gauge == "parabolic" else delta / 2
    return len(cv._greedy_cover(px, pt, rho, alpha, gauge=gauge))


def cmd_cover(args) -> int:
    from hypns import covering as cv
    from hypns import io

    cfg = None
    if args.scan:
        try:
            traj, cfg = io.load_trajectory(args.scan)
        except (FileNotFoundError, io.ConfigError, io.SnapshotFormatError, ValueError) as exc:
            return _fail(f"unreadable trajectory: {exc}")
        alpha = traj.params.alpha
        radii = args.radii or cfg.diagnostics.resolved_radii(traj.params)
        thr = args.threshold if args.threshold is not None else cfg.diagnostics.threshold
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                scan = cv.singular_scan(traj, "eflat", radii, thr)
        except ValueError as exc:
            return _fail(f"invalid scan: {exc}")
        points = np.array([list(x) + [t] for x, t in scan.flagged]).reshape(-1, traj.params.dim + 1)
    elif args.input:
        try:
            points = io.read_points(args.input)
        except (OSError, ValueError) as exc:
            return _fail(f"cannot read points: {exc}")
        alpha = args.alpha[0] if args.alpha else 1.25
    else:
        return _fail("cover needs --input or --scan")
    if not 1.0 <= alpha <= 1.25 + 1e-12:
        return _fail(f"alpha {alpha:g} outside [1, 5/4]")
    betas = args.betas if args.betas is not None else [0.0]
    deltas = args.deltas if args.deltas is not None else [0.4, 0.2, 0.1]
    if any(b < 0 for b in betas) or any(not d > 0 for d in deltas):
        return _fail("betas must be nonnegative and deltas positive")
    rows = cover_rows(points, betas, deltas, alpha, args.gauge)
    _emit(io.csv_text(COVER_COLUMNS, rows, cfg, alpha=alpha, grid=None if cfg else "points"), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hypns", description="Hyperdissipative Navier-Stokes runs and diagnostics.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="integrate a configured run")
    s.add_argument("--config", required=True, help="key = value run configuration")
    s.add_argument("--out", help="output directory (default: output.dir of the config)")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify-extension", help="extension identity residuals as CSV")
    v.add_argument("--alpha", type=_floats, help="comma-separated alphas in (1, 5/4]; '' for none")
    v.add_argument("--out", help="CSV path (default: stdout)")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("diagnose", help="per-cylinder diagnostics CSV")
    d.add_argument("trajectory", help="directory written by 'simulate'")
    d.add_argument("--config", help="config whose diagnostics.* keys replace the run's")
    d.add_argument("--radii", type=_floats, help="decreasing radii, each <= L/8")
    d.add_argument("--threshold", type=_positive, help="epsilon of the regularity criteria")
    d.add_argument("--out", help="CSV path (default: stdout)")
    d.set_defaults(func=cmd_diagnose)

    c = sub.add_parser("cover", help="covering counts and premeasures")
    src = c.add_mutually_exclusive_group()
    src.add_argument("--input", help="CSV with columns x1,...,xd,t")
    src.add_argument("--scan", help="trajectory directory to scan with E-flat")
    c.add_argument("--gauge", choices=("parabolic", "euclidean"), default="parabolic")
    c.add_argument("--betas", type=_floats, help="gauge exponents (default 0)")
    c.add_argument("--deltas", type=_floats, help="cover scales (default 0.4,0.2,0.1)")
    c.add_argument("--alpha", type=_floats, help="alpha of the cylinder geometry for --input")
    c.add_argument("--radii", type=_floats, help="scan radii")
    c.add_argument("--threshold", type=_positive, help="scan threshold")
    c.add_argument("--out", help="CSV path (default: stdout)")
    c.set_defaults(func=cmd_cover)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
