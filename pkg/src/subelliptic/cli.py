"""Command-line entry point.

    subelliptic verify {geometry,kernels,casym,psical,parametrix,quad,all}
    subelliptic solve-poly POLY
    subelliptic convolve {K,N,Pi} FILE.csv POINT [POINT ...]
    subelliptic parametrix N EPS TERMS

Global flags: --config PATH (key=value file), --seed N, --format json|csv,
--out PATH.  Exit codes: 0 all checks pass, 1 some check fails, 2 usage or
input error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from typing import List, Optional, Sequence

import numpy as np

from .errors import ContractError, DivergenceError, DomainError, PreconditionError, SingularityError
from .suites import FAIL, PASS, SUITES, Config, Entry, at_most, info, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
FIELDS = ("check", "status", "measured", "expected", "tolerance", "note")
INPUT_ERRORS = (ContractError, DomainError, PreconditionError, DivergenceError, SingularityError,
                ValueError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def render(suite: str, entries: Sequence[Entry], fmt: str) -> str:
    rows = [e.as_dict() for e in entries]
    if fmt == "json":
        return json.dumps({"suite": suite, "entries": rows}, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=("suite",) + FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"suite": suite, **{k: ("" if r[k] is None else r[k]) for k in FIELDS}})
    return buf.getvalue()


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _exit_code(entries: Sequence[Entry]) -> int:
    return EXIT_FAIL if any(e.status == FAIL for e in entries) else EXIT_OK


def _load_config(args) -> Config:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = Config.from_text(fh.read())
    else:
        cfg = Config()
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_verify(args, cfg: Config) -> int:
    entries = run_suite(args.suite, cfg)
    _emit(render(args.suite, entries, args.format), args.out)
    return _exit_code(entries)


def cmd_solve_poly(args, cfg: Config) -> int:
    from .casym import ZBAR, derive_poly, solve_poly
    from .textio import format_poly, parse_poly

    text = sys.stdin.read() if args.poly == "-" else args.poly
    p = parse_poly(text)
    q = solve_poly(p)
    resid = derive_poly(ZBAR, q) - p
    if args.format == "json":
        body = json.dumps({"q": format_poly(q), "residual": format_poly(resid)}, indent=2, sort_keys=True) + "\n"
    else:
        body = f"q = {format_poly(q)}\nresidual = {format_poly(resid)}\n"
    _emit(body, args.out)
    return EXIT_OK if resid.is_zero() else EXIT_FAIL


def _parse_point(text: str):
    from .hgroup import HPoint
    parts = text.split(",")
    if len(parts) != 3:
        raise DomainError(f"point {text!r} must be x,y,t")
    x, y, t = (float(v) for v in parts)
    return HPoint(complex(x, y), t)


def cmd_convolve(args, cfg: Config) -> int:
    from .kernels import KERNELS
    from .quad import GridFunction, convolve

    with open(args.file, encoding="utf-8") as fh:
        f = GridFunction.from_csv(fh.read())
    k = KERNELS[args.kernel]
    pv = k.homogeneity_degree == -4
    pts = [_parse_point(p) for p in args.points]
    vals = [convolve(k, f, x, pv=pv, n=args.n) for x in pts]
    if args.format == "json":
        rows = [{"x": x.wc.real, "y": x.wc.imag, "t": float(x.s), "re": v.real, "im": v.imag}
                for x, v in zip(pts, vals)]
        body = json.dumps({"kernel": args.kernel, "values": rows}, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("x", "y", "t", "re", "im"))
        for x, v in zip(pts, vals):
            w.writerow((repr(x.wc.real), repr(x.wc.imag), repr(float(x.s)), repr(v.real), repr(v.imag)))
        body = buf.getvalue()
    _emit(body, args.out)
    return EXIT_OK


def parametrix_report(n: int, eps: float, terms: int, cfg: Config) -> List[Entry]:
    from . import parametrix as px
    from .suites import default_perturbation

    if eps < 0:
        raise ContractError("eps must be nonnegative")
    if terms < 0:
        raise ContractError("terms must be nonnegative")
    grid = px.build_nilgrid(n)
    trunc = px.Truncation(cfg.trunc_radius, cfg.trunc_inner)
    P = px.frozen_parametrix(grid, px.discretize_op(grid), trunc)
    pert = default_perturbation()
    L = px.discretize_op(grid, eps, pert)
    C = px.mean_projection(grid).matrix
    R = px.GridOperator(np.eye(grid.size) - C - L.matrix @ P.K0.matrix, grid, "R")
    tail = px.neumann_tail(R, terms, L, P.K0)
    out = [at_most("||R||_2", tail.norm_R, 1.0, f"n = {n}, eps = {eps!r}")]
    for k, r in enumerate(tail.residuals):
        out.append(at_most(f"residual k={k}", r, tail.norm_R ** (k + 1) + 1e-12, "bound ||R||^(k+1)"))
    eps0, r0 = px.find_eps0(grid, pert, P.K0, 0.5, cfg.eps_max)
    out.append(info("eps0", eps0, f"||R(eps0)|| = {r0:.6f}"))
    return out


def cmd_parametrix(args, cfg: Config) -> int:
    entries = parametrix_report(args.n, args.eps, args.terms, cfg)
    _emit(render("parametrix", entries, args.format), args.out)
    return _exit_code(entries)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, top: bool) -> None:
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", default=d(None), help="key=value configuration file")
    p.add_argument("--seed", type=int, default=d(None), help="random seed (overrides the config)")
    p.add_argument("--format", choices=("json", "csv"), default=d("json"), help="report format")
    p.add_argument("--out", default=d(None), help="write output here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="subelliptic", description="Verification suites and computations on H^1.")
    _common(p, True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])
    sp = sub.add_parser("solve-poly", help="solve Zbar q = p for a homogeneous polynomial p")
    sp.add_argument("poly", help="polynomial in w, wb, s, or - to read stdin")
    c = sub.add_parser("convolve", help="evaluate k * f at points")
    c.add_argument("kernel", choices=("K", "N", "Pi"))
    c.add_argument("file", help="GridFunction CSV")
    c.add_argument("points", nargs="+", help="points as x,y,t")
    c.add_argument("--n", type=int, default=None, help="polar quadrature resolution")
    pm = sub.add_parser("parametrix", help="frozen parametrix and Neumann tail on the nilmanifold")
    pm.add_argument("n", type=int)
    pm.add_argument("eps", type=float)
    pm.add_argument("terms", type=int)
    for q in (v, sp, c, pm):
        _common(q, False)
    return p


COMMANDS = {"verify": cmd_verify, "solve-poly": cmd_solve_poly, "convolve": cmd_convolve,
            "parametrix": cmd_parametrix}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"subelliptic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except INPUT_ERRORS as exc:
        print(f"subelliptic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


__all__ = ["main", "build_parser", "render", "parametrix_report", "PASS", "FAIL"]
