"""ce-lab command line."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import _kernels
from .density import Sampler, render_pgm, scale_sweep
from .dynamics import FamilyParams, critical_orbit
from .errors import CeLabError, InvalidConstants, StartupFailed
from .partition import PartitionTree, PolynomialFamily, refine_at_essential_return
from .returns import CriticalNeighborhoods, timeline
from .runner import dumps, run_scenario, write_run
from .scenario import load_scenario, parse_complex

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC, EXIT_STARTUP, EXIT_CONSTANTS = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _complex_arg(text: str) -> complex:
    try:
        return parse_complex(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _num(v: float) -> str:
    return repr(float(v))


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def threads_from_env() -> int:
    raw = os.environ.get("CE_LAB_THREADS")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CE_LAB_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise UsageError("CE_LAB_THREADS must be >= 1")
    return n


def cmd_orbit(args) -> int:
    orbit = critical_orbit(FamilyParams(args.d, args.c), args.n)
    if orbit.degenerate:
        print("warning: the critical orbit hits 0; alpha is infinite there", file=sys.stderr)
    lines = ["n,re,im,alpha_n,gamma_n"]
    for k in range(len(orbit)):
        z = orbit.points[k]
        lines.append(f"{k},{_num(z.real)},{_num(z.imag)},{_num(orbit.alpha[k])},{_num(orbit.gamma[k])}")
    _emit("\n".join(lines) + "\n", args.csv)
    if orbit.escape_index is not None:
        print(f"escaped at n = {orbit.escape_index}", file=sys.stderr)
    return EXIT_OK


def cmd_timeline(args) -> int:
    nbhd = CriticalNeighborhoods(args.Delta, args.DeltaPrime, args.beta)
    orbit = critical_orbit(FamilyParams(args.d, args.c), args.n)
    events = timeline(orbit, nbhd)
    lines = ["n,kind,r,p,ell,alpha_n,gamma_n,truncated,open_ended"]
    for ev in events:
        lines.append(",".join([str(ev.n), ev.kind.value, str(ev.r), str(ev.p), str(ev.ell),
                               _num(ev.alpha_n), _num(ev.gamma_n), str(int(ev.truncated)), str(int(ev.open_ended))]))
    _emit("\n".join(lines) + "\n", args.csv)
    return EXIT_OK


def cmd_partition(args) -> int:
    nbhd = CriticalNeighborhoods()
    tree = PartitionTree.over(args.c, args.eps)
    family = PolynomialFamily.around(args.c, args.eps, args.d)
    refine_at_essential_return(tree.root, args.k, nbhd, nbhd.S, family, args.grid, args.depth_limit)
    _emit(tree.dump(), args.out)
    return EXIT_OK


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise UsageError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v
    return out


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario).with_overrides(_overrides(args.set))
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc))
    threads = args.threads or threads_from_env()
    _kernels.set_threads(threads)
    result = run_scenario(sc, threads=threads)
    out = Path(args.out or f"run-{sc.name}")
    write_run(result, out)
    sys.stdout.write(dumps(result.summary))
    return EXIT_OK


def cmd_density(args) -> int:
    _kernels.set_threads(threads_from_env())
    sampler = Sampler("stratified" if args.stratified else "grid", args.grid, args.seed)
    rep = scale_sweep(args.c, args.d, args.eps, args.s, args.k_max, sampler, k_min=args.k_min)
    _emit(rep.to_csv(), args.csv)
    return EXIT_OK


def cmd_render(args) -> int:
    _kernels.set_threads(threads_from_env())
    Path(args.out).write_bytes(render_pgm(args.c, args.eps, args.d, args.px, args.n_max))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suite

    if args.suite != "all" and args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from all, {', '.join(SUITES)}")
    kwargs = {}
    if args.anchor is not None:
        if args.suite != "density-trend":
            raise UsageError("--anchor only applies to density-trend")
        kwargs["anchor"] = args.anchor
    checks = run_suite(args.suite, **kwargs)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ce-lab", description="Critical-orbit and parameter-exclusion experiments for z^d + c.")
    sub = p.add_subparsers(dest="cmd", required=True)

    o = sub.add_parser("orbit", help="critical orbit with recurrence and Lyapunov exponents")
    o.add_argument("--c", type=_complex_arg, required=True, help="parameter as RE,IM")
    o.add_argument("--d", type=int, default=2)
    o.add_argument("--n", type=int, required=True)
    o.add_argument("--csv")
    o.set_defaults(fn=cmd_orbit)

    t = sub.add_parser("timeline", help="returns, bound periods and free periods")
    t.add_argument("--c", type=_complex_arg, required=True)
    t.add_argument("--d", type=int, default=2)
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--Delta", type=float, default=9.0)
    t.add_argument("--DeltaPrime", type=float, default=6.0)
    t.add_argument("--beta", type=float, default=0.01)
    t.add_argument("--csv")
    t.set_defaults(fn=cmd_timeline)

    q = sub.add_parser("partition", help="refine Q(c, eps) into partition elements at time k")
    q.add_argument("--c", type=_complex_arg, required=True)
    q.add_argument("--eps", type=float, required=True)
    q.add_argument("--d", type=int, default=2)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--grid", type=int, default=0)
    q.add_argument("--depth-limit", type=int, default=48)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_partition)

    r = sub.add_parser("run", help="run a scenario and write its output directory")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--out")
    r.add_argument("--threads", type=int)
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario key")
    r.set_defaults(fn=cmd_run)

    d = sub.add_parser("density", help="escape density over shrinking squares")
    d.add_argument("--c", type=_complex_arg, required=True)
    d.add_argument("--d", type=int, default=2)
    d.add_argument("--eps", type=float, default=1.0)
    d.add_argument("--s", type=float, default=4.0)
    d.add_argument("--k-min", type=int, default=0)
    d.add_argument("--k-max", type=int, default=4)
    d.add_argument("--grid", type=int, default=200)
    d.add_argument("--stratified", action="store_true")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--csv")
    d.set_defaults(fn=cmd_density)

    g = sub.add_parser("render", help="PGM escape-time image of a square")
    g.add_argument("--c", type=_complex_arg, required=True)
    g.add_argument("--eps", type=float, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--px", type=int, default=256)
    g.add_argument("--n-max", type=int, default=1000)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_render)

    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("suite")
    v.add_argument("--anchor", type=_complex_arg)
    v.set_defaults(fn=cmd_verify)
    return p


def _glue_complex_flags(argv: list[str]) -> list[str]:
    """Let '--c -2,0' through: argparse would read '-2,0' as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in ("--c", "--anchor"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_glue_complex_flags(sys.argv[1:] if argv is None else list(argv)))
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StartupFailed as exc:
        print(f"startup failed: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    except InvalidConstants as exc:
        print(f"invalid constants: {exc}", file=sys.stderr)
        return EXIT_CONSTANTS
    except (CeLabError, ValueError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
