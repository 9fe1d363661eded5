"""Command-line front end.

    possplit positivity --g linear --lambda 2.5 --tau 1e-3 --h 1e-2 --T 20 --samples 20
    possplit converge --g linear --N 64 --tau-list 2^-6..2^-12 --tau-ref 2^-14 --T 0.5
    possplit simulate --scheme lt --seed 7

Options may also come from a flat config file (``--config run.cfg``): one
``key = value`` per line, ``#`` starts a comment, keys are option names with
or without the leading dashes (``tau-list`` and ``tau_list`` are the same).
Command-line flags override file values.

The default output directory is ``$POSSPLIT_OUTPUT_DIR`` or the current directory.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import re
import sys
import warnings

from . import __version__, reporting
from .coefficients import BUILTIN_COEFFICIENTS, BUILTIN_INITIAL_CONDITIONS, builtin_coefficient, initial_condition
from .experiments import (convergence_study, kernel_inequality_probe, moment_diagnostic,
                          positivity_census, system_convergence_study, system_positivity_census)
from .grid import GridError, build_discretization
from .integrators import SCHEMES, integrate, normalize_scheme
from .noise import sample_increments
from .systems import BUILTIN_SYSTEM_COEFFICIENTS, NOISE_MODES, builtin_system_coefficient

log = logging.getLogger("possplit")

OUTPUT_ENV = "POSSPLIT_OUTPUT_DIR"


class ConfigError(Exception):
    pass


def parse_number(text: str) -> float:
    """Float, also accepting powers like ``2^-6``."""
    text = text.strip()
    m = re.fullmatch(r"([0-9.]+)\^(-?[0-9]+)", text)
    if m:
        return float(m.group(1)) ** int(m.group(2))
    return float(text)


def parse_tau_list(text: str) -> list:
    """``2^-6..2^-12`` (every power in between) or a comma-separated list."""
    m = re.fullmatch(r"\s*([0-9.]+)\^(-?[0-9]+)\s*\.\.\s*([0-9.]+)\^(-?[0-9]+)\s*", text)
    if m:
        base, a, base2, b = float(m.group(1)), int(m.group(2)), float(m.group(3)), int(m.group(4))
        if base != base2:
            raise argparse.ArgumentTypeError("range ends must share a base")
        step = -1 if b < a else 1
        return [base**k for k in range(a, b + step, step)]
    return [parse_number(t) for t in text.split(",") if t.strip()]


def _number(text):
    try:
        return parse_number(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _scheme_list(text):
    try:
        return [normalize_scheme(s.strip()) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def read_config(path) -> dict:
    values = {}
    try:
        fh = open(path)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


# ----------------------------------------------------------------------- parser

def _common(p, samples=20):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=_positive_int, default=samples)
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads")
    p.add_argument("--ic", default="sin", choices=sorted(BUILTIN_INITIAL_CONDITIONS),
                   help="initial condition")
    p.add_argument("--cfl-policy", default="warn", choices=("warn", "strict"))
    p.add_argument("--gamma", type=_number, default=1.0, help="CFL bound for tau/h")
    p.add_argument("--check-cfl", action="store_true",
                   help="print tau/h and tau/h^2 against gamma and exit")


def _scalar_coeff(p, g="linear", lam=1.0):
    p.add_argument("--g", default=g, choices=sorted(BUILTIN_COEFFICIENTS), help="diffusion coefficient")
    p.add_argument("--lambda", dest="lam", type=_number, default=lam)


def _system_coeff(p, lam):
    p.add_argument("--g", default="sincos", choices=sorted(BUILTIN_SYSTEM_COEFFICIENTS))
    p.add_argument("--lambda", dest="lam", type=_number, default=lam)
    p.add_argument("--noise-mode", default="independent", choices=NOISE_MODES)


def _grid(p, T):
    p.add_argument("--N", type=int, help="space intervals")
    p.add_argument("--h", type=_number, help="space mesh (alternative to --N)")
    p.add_argument("--M", type=int, help="time steps")
    p.add_argument("--tau", type=_number, help="time step (alternative to --M)")
    p.add_argument("--T", type=_number, default=T, help="final time")


def _study(p, N, tau_list, tau_ref, T):
    p.add_argument("--N", type=int, default=N)
    p.add_argument("--tau-list", type=parse_tau_list, default=tau_list)
    p.add_argument("--tau-ref", type=_number, default=tau_ref)
    p.add_argument("--T", type=_number, default=T)


def build_parser():
    parser = argparse.ArgumentParser(prog="possplit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("positivity", help="count sample paths that stay nonnegative")
    _common(p)
    _scalar_coeff(p, "linear", 2.5)
    _grid(p, T=20.0)
    p.add_argument("--schemes", type=_scheme_list, default="LT,SEXP,SEM,EM")

    p = sub.add_parser("converge", help="mean-square convergence study")
    _common(p, samples=100)
    _scalar_coeff(p)
    _study(p, 64, "2^-6..2^-12", "2^-14", 0.5)
    p.add_argument("--schemes", type=_scheme_list, default="LT,SEXP,SEM")

    p = sub.add_parser("moment", help="second-moment diagnostic of the LT scheme")
    _common(p, samples=200)
    _scalar_coeff(p)
    _grid(p, T=1.0)

    p = sub.add_parser("kernel-probe", help="numerical check of two discrete heat kernel inequalities")
    _common(p)
    _grid(p, T=1.0)

    p = sub.add_parser("simulate", help="one sample path, all grid states to CSV")
    _common(p, samples=1)
    _scalar_coeff(p)
    _grid(p, T=0.5)
    p.add_argument("--scheme", type=normalize_scheme, default="LT", metavar="{" + ",".join(SCHEMES) + "}")
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--stride", type=_positive_int, default=1, help="keep every stride-th state")

    p = sub.add_parser("system-positivity", help="positivity census for the two-component system")
    _common(p, samples=50)
    _system_coeff(p, 7.0)
    _grid(p, T=5.0)
    p.add_argument("--schemes", type=_scheme_list, default="LT,SEXP,SEM,EM")

    p = sub.add_parser("system-converge", help="convergence study for the two-component system")
    _common(p, samples=100)
    _system_coeff(p, 1.0)
    _study(p, 64, "2^-4..2^-12", "2^-14", 0.5)
    p.add_argument("--schemes", type=_scheme_list, default="LT")
    return parser, sub.choices


def parse_args(argv):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = read_config(args.config)
        sp = subparsers[args.command]
        known = {a.dest: a for a in sp._actions}
        unknown = sorted(set(values) - set(known) - {"lambda"})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        for k, v in list(values.items()):
            if isinstance(known[k], argparse._StoreTrueAction):
                values[k] = v.lower() in ("1", "true", "yes", "on")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# ------------------------------------------------------------------ resolution

def resolve_grid(args):
    if args.N is None and args.h is None:
        N = 64
    elif args.N is not None and args.h is not None and not math.isclose(args.N * args.h, 1.0):
        raise ConfigError(f"--N {args.N} and --h {args.h} disagree")
    else:
        N = args.N if args.N is not None else round(1.0 / args.h)
        if args.h is not None and not math.isclose(N * args.h, 1.0, rel_tol=1e-9):
            raise ConfigError(f"h={args.h} is not 1/N for an integer N")
    T = args.T
    if args.M is None and args.tau is None:
        M = N
    elif args.M is not None and args.tau is not None and not math.isclose(args.M * args.tau, T):
        raise ConfigError(f"--M {args.M} and --tau {args.tau} disagree for T={T}")
    else:
        M = args.M if args.M is not None else round(T / args.tau)
        if args.tau is not None and not math.isclose(M * args.tau, T, rel_tol=1e-9):
            raise ConfigError(f"T={T} is not a whole number of steps tau={args.tau}")
    return build_discretization(N, M, T)


def resolved_config(args, **extra) -> dict:
    skip = {"config", "out", "threads", "verbose", "check_cfl", "func"}
    cfg = {"command": args.command}
    for k, v in sorted(vars(args).items()):
        if k in skip or k == "command":
            continue
        if k in ("N", "h", "M", "tau") and k in extra:
            continue
        if isinstance(v, list):
            v = ",".join(reporting.fmt(x) for x in v)
        cfg[k] = v
    cfg.update(extra)
    return cfg


def _cfl_gate(args, tau, h):
    ratio_h, ratio_h2 = tau / h, tau / h**2
    if args.check_cfl:
        print(f"tau/h   = {ratio_h:.6g}  ({'<=' if ratio_h <= args.gamma else '>'} gamma={args.gamma:g})")
        print(f"tau/h^2 = {ratio_h2:.6g}  ({'<=' if ratio_h2 <= args.gamma else '>'} gamma={args.gamma:g})")
        return True
    if ratio_h > args.gamma:
        msg = f"tau/h = {ratio_h:.4g} exceeds gamma = {args.gamma:g}"
        if args.cfl_policy == "strict":
            raise ConfigError(msg)
        log.warning(msg)
    return False


def _outdir(args):
    d = args.out or os.environ.get(OUTPUT_ENV) or "."
    try:
        os.makedirs(d, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {d}: {e}") from None
    if not os.access(d, os.W_OK):
        raise ConfigError(f"output directory {d} is not writable")
    return d


def _grid_extra(d):
    return dict(N=d.N, M=d.M, T=d.T, h=d.h, tau=d.tau)


# --------------------------------------------------------------------- commands

def cmd_positivity(args):
    d = resolve_grid(args)
    if _cfl_gate(args, d.tau, d.h):
        return 0
    coeff = builtin_coefficient(args.g, args.lam)
    cfg = resolved_config(args, **_grid_extra(d))
    out = _outdir(args)
    rep = positivity_census(args.schemes, d, coeff, initial_condition(args.ic), args.samples,
                            args.seed, workers=args.threads)
    path = reporting.output_path(out, "positivity_" + reporting.slug(cfg, "g", "lam", "N", "M", "T"), "csv")
    reporting.write_positivity_csv(path, rep, cfg)
    for s, c in rep.counts.items():
        print(f"{s:5s} {c.positive}/{c.total} positive  ({c.negative} negative, {c.blown_up} blown up)")
    print(f"wrote {path}")
    return 0


def _finish_study(args, rep, cfg, stem):
    out = _outdir(args)
    csv_path = reporting.output_path(out, stem, "csv")
    svg_path = reporting.output_path(out, stem, "svg")
    reporting.write_convergence_csv(csv_path, rep, cfg)
    reporting.write_loglog_svg(svg_path, rep, cfg, title=stem)
    for s in rep.errors:
        print(f"{s:5s} slope {rep.fitted_slope[s]:.3f} +- {rep.slope_ci[s]:.3f}")
    print(f"wrote {csv_path}\nwrote {svg_path}")
    return 0


def _study_checks(args):
    h = 1.0 / args.N
    return _cfl_gate(args, max(args.tau_list), h)


def cmd_converge(args):
    if _study_checks(args):
        return 0
    coeff = builtin_coefficient(args.g, args.lam)
    cfg = resolved_config(args)
    _outdir(args)
    rep = convergence_study(args.schemes, args.N, args.tau_list, args.tau_ref, args.T, coeff,
                            initial_condition(args.ic), args.samples, args.seed, workers=args.threads)
    return _finish_study(args, rep, cfg, "converge_" + reporting.slug(cfg, "g", "lam", "N", "T"))


def cmd_moment(args):
    d = resolve_grid(args)
    if _cfl_gate(args, d.tau, d.h):
        return 0
    coeff = builtin_coefficient(args.g, args.lam)
    cfg = resolved_config(args, **_grid_extra(d))
    out = _outdir(args)
    s = moment_diagnostic(d, coeff, initial_condition(args.ic), args.samples, args.seed,
                          workers=args.threads)
    path = reporting.output_path(out, "moment_" + reporting.slug(cfg, "g", "lam", "N", "M", "T"), "csv")
    reporting.write_table_csv(path, cfg, ["max_second_moment", "ratio", "u0_sup", "m", "n", "blown_up"],
                              [(s.max_second_moment, s.ratio, s.u0_sup, s.argmax[0], s.argmax[1], s.blown_up)])
    print(f"max_m,n mean |u|^2 = {s.max_second_moment:.6g} at (m, n) = {s.argmax}; "
          f"ratio to 1+|u0|^2 = {s.ratio:.6g}")
    print(f"wrote {path}")
    return 0


def cmd_kernel_probe(args):
    d = resolve_grid(args)
    cfg = resolved_config(args, **_grid_extra(d))
    out = _outdir(args)
    s = kernel_inequality_probe(d.N, d.M, d.T)
    path = reporting.output_path(out, "kernel_probe_" + reporting.slug(cfg, "N", "M", "T"), "csv")
    reporting.write_table_csv(path, cfg, ["quantity", "value"],
                              [("square_integral_constant", s.square_integral_constant),
                               ("increment_constant", s.increment_constant)])
    print(f"max_t sqrt(t) max_x int G^2 dy       = {s.square_integral_constant:.6g}")
    print(f"increment integral / sqrt(tau)       = {s.increment_constant:.6g}")
    print(f"wrote {path}")
    return 0


def cmd_simulate(args):
    d = resolve_grid(args)
    if _cfl_gate(args, d.tau, d.h):
        return 0
    coeff = builtin_coefficient(args.g, args.lam)
    cfg = resolved_config(args, **_grid_extra(d))
    out = _outdir(args)
    noise = sample_increments(args.seed, args.sample_index, d.M, d.N, d.tau)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = integrate(args.scheme, d, coeff, initial_condition(args.ic), noise, args.stride)
    rows = [[s.time_index, s.time_index * d.tau, *s.values.tolist()] for s in traj.snapshots]
    cols = ["m", "t"] + [f"u_{n}" for n in range(1, d.N)]
    stem = "simulate_" + reporting.slug(cfg, "scheme", "g", "lam", "N", "M", "seed", "sample_index")
    path = reporting.output_path(out, stem, "csv")
    reporting.write_table_csv(path, cfg, cols, rows)
    if traj.blow_up:
        print(f"path blew up at step {traj.blow_up.step} ({traj.blow_up.cause})")
    print(f"wrote {path}")
    return 0


def cmd_system_positivity(args):
    d = resolve_grid(args)
    if _cfl_gate(args, d.tau, d.h):
        return 0
    sc = builtin_system_coefficient(args.g, args.lam, args.noise_mode)
    cfg = resolved_config(args, **_grid_extra(d))
    out = _outdir(args)
    ic = initial_condition(args.ic)
    rep = system_positivity_census(args.schemes, d, sc, (ic, ic), args.samples, args.seed,
                                   workers=args.threads)
    path = reporting.output_path(out, "system_positivity_" + reporting.slug(cfg, "g", "lam", "N", "M", "T"), "csv")
    reporting.write_positivity_csv(path, rep, cfg)
    for s, c in rep.counts.items():
        print(f"{s:6s} {c.positive}/{c.total} positive  ({c.negative} negative, {c.blown_up} blown up)")
    print(f"wrote {path}")
    return 0


def cmd_system_converge(args):
    if _study_checks(args):
        return 0
    sc = builtin_system_coefficient(args.g, args.lam, args.noise_mode)
    cfg = resolved_config(args)
    _outdir(args)
    ic = initial_condition(args.ic)
    rep = system_convergence_study(args.schemes, args.N, args.tau_list, args.tau_ref, args.T, sc,
                                   (ic, ic), args.samples, args.seed, workers=args.threads)
    return _finish_study(args, rep, cfg, "system_converge_" + reporting.slug(cfg, "g", "lam", "N", "T"))


COMMANDS = {
    "positivity": cmd_positivity,
    "converge": cmd_converge,
    "moment": cmd_moment,
    "kernel-probe": cmd_kernel_probe,
    "simulate": cmd_simulate,
    "system-positivity": cmd_system_positivity,
    "system-converge": cmd_system_converge,
}


def run(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as e:
        print(f"possplit: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            warnings.simplefilter("ignore", UserWarning)
            return COMMANDS[args.command](args)
    except (ConfigError, GridError, ValueError) as e:
        print(f"possplit: error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
