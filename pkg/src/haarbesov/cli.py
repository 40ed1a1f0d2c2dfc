"""Command line interface: ``haarbesov <group> <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import atoms as A
from .approx import a_norm, bnorm_diff
from .dyadic import DyadicCube, dumps, load
from .experiments import parse_config, run_experiment
from .families import make_chi, make_gka, make_iib, make_linear
from .haar import analyze, position
from .params import BesovParams
from .values import as_rational, precision, to_hex


def _frac(text: str) -> Fraction:
    return as_rational(text)


def _emit(text: str, out: str | None) -> None:
    if out and out != "-":
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_haar_analyze(args) -> int:
    f = load(args.file)
    coeffs = analyze(f, args.level)
    rows = sorted(coeffs.items(), key=lambda hc: position(hc[0]))
    lines = [",".join(["level", "mask"] + [f"index_{m + 1}" for m in range(f.dim)] + ["value_hex"])]
    for h, c in rows:
        mask = "".join(str(e) for e in h.mask)
        lines.append(",".join([str(h.level), mask] + [str(i) for i in h.support.index] + [to_hex(c)]))
    _emit("\n".join(lines) + "\n", args.output)
    return 0


def cmd_besov_norm(args) -> int:
    f = load(args.file)
    params = BesovParams(args.p, args.q, args.s)
    if args.variant == "a":
        rep = a_norm(f, params, args.levels)
    else:
        levels = args.levels if args.levels is not None else f.max_level
        rep = bnorm_diff(f, params, levels)
    _emit(json.dumps(rep.to_json(), indent=1) + "\n", args.output)
    return 0


def _localmeans_input(spec: str, project: int | None):
    """A local-mean source from a file path or a ``linear:d[:k]`` description."""
    if spec.startswith("linear:"):
        parts = spec.split(":")[1:]
        d = int(parts[0])
        f = make_linear(d)
        if len(parts) > 1:
            k = int(parts[1])
            return A.Superposition([(1, f), (-1, f.projection(k))]), f"linear residual, k={k}"
        return f, "linear"
    path = Path(spec)
    text = path.read_text()
    if text.lstrip().startswith("dim"):
        return load(path), "step function"
    dec = A.read_atoms_csv(text)
    if project is not None:
        return A.project_atoms(dec, project), f"projection P_{project} of atoms"
    return dec, "atoms"


def cmd_localmeans_norm(args) -> int:
    f, kind = _localmeans_input(args.input, args.project)
    params = BesovParams(args.p, args.q, args.s)
    quad = A.QuadSpec(tol=args.tol)
    terms = [int(t) for t in args.terms.split(",")] if args.terms else None
    try:
        rep = A.localmeans_norm(f, params, args.levels, quad, terms=terms)
    except A.QuadratureError as exc:
        print(f"quadrature failed: {exc}", file=sys.stderr)
        return 2
    out = rep.to_json()
    out["input"] = kind
    _emit(json.dumps(out, indent=1) + "\n", args.output)
    return 0


def cmd_gen(args) -> int:
    fam, k, d = args.family, args.k, args.d
    if fam == "chi":
        text = dumps(make_chi(DyadicCube(k, (1,) * d)))
    elif fam == "gka":
        text = dumps(make_gka(k, d))
    elif fam == "gka_d1":
        text = dumps(make_gka(k, 1))
    elif fam in ("iib", "iib_alpha"):
        if args.p is None:
            raise SystemExit("--p is required for this family")
        alpha = None
        if fam == "iib_alpha":
            if args.alpha is not None:
                alpha = args.alpha
            elif args.q is not None and args.eps is not None:
                alpha = 1 / args.q + args.eps
            else:
                raise SystemExit("iib_alpha needs --alpha, or --q and --eps")
        text = dumps(make_iib(k, d, args.p, alpha))
    elif fam == "linear":
        text = dumps(make_linear(d).projection(k))
    elif fam == "atom_iia":
        text = A.write_atoms_csv(A.atom_family_iia(k, d))
    elif fam == "atom_iib":
        if args.p is None:
            raise SystemExit("--p is required for this family")
        text = A.write_atoms_csv(A.atom_family_iib(k, d, args.p))
    else:
        raise SystemExit(f"unknown family {fam}")
    _emit(text, args.output)
    return 0


def cmd_exp_run(args) -> int:
    if args.config:
        text = Path(args.config).read_text()
        if "experiment" not in text:
            text = f"experiment = {args.experiment}\n" + text
    else:
        text = f"experiment = {args.experiment}\n"
    spec = parse_config(text)
    if spec.experiment != args.experiment.upper():
        raise SystemExit(f"config is for {spec.experiment}, not {args.experiment}")
    if args.workers:
        spec.workers = args.workers
    with precision(spec.precision):
        res = run_experiment(spec)
    body = res.table.to_json() + "\n" if args.json else res.table.to_csv()
    out = args.output or spec.output
    _emit(body, out)
    for c in res.checks:
        print(c.line(), file=sys.stderr)
    for name, fit in res.fits.items():
        print(f"fit {name}: {fit}", file=sys.stderr)
    print(f"{res.experiment}: {'PASS' if res.passed else 'FAIL'} in {res.seconds:.1f}s", file=sys.stderr)
    return 0 if res.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="haarbesov", description=__doc__)
    ap.add_argument("--precision", type=int, default=None, help="mantissa bits for Values")
    sub = ap.add_subparsers(dest="group", required=True)

    haar = sub.add_parser("haar", help="Haar coefficients").add_subparsers(dest="cmd", required=True)
    p = haar.add_parser("analyze", help="nonzero Haar coefficients as CSV")
    p.add_argument("file")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_haar_analyze)

    besov = sub.add_parser("besov", help="Besov quasi-norms").add_subparsers(dest="cmd", required=True)
    p = besov.add_parser("norm", help="quasi-norm of a step function as JSON")
    p.add_argument("file")
    p.add_argument("--p", type=_frac, required=True)
    p.add_argument("--q", type=_frac, required=True)
    p.add_argument("--s", type=_frac, required=True)
    p.add_argument("--variant", choices=("a", "diff"), default="a")
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_besov_norm)

    lm = sub.add_parser("localmeans", help="local-means quasi-norm").add_subparsers(dest="cmd", required=True)
    p = lm.add_parser("norm")
    p.add_argument("--input", required=True,
                   help="step-function file, atom CSV, 'linear:d' or 'linear:d:k' (residual f - P_k f)")
    p.add_argument("--p", type=_frac, required=True)
    p.add_argument("--q", type=_frac, required=True)
    p.add_argument("--s", type=_frac, required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--terms", help="comma-separated subset of levels (lower bound)")
    p.add_argument("--project", type=int, default=None, help="use P_k of an atom CSV")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_localmeans_norm)

    p = sub.add_parser("gen", help="write a function family")
    p.add_argument("family", choices=("chi", "gka", "gka_d1", "iib", "iib_alpha", "linear",
                                      "atom_iia", "atom_iib"))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--p", type=_frac)
    p.add_argument("--q", type=_frac)
    p.add_argument("--alpha", type=_frac)
    p.add_argument("--eps", type=_frac)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen)

    exp = sub.add_parser("exp", help="experiments").add_subparsers(dest="cmd", required=True)
    p = exp.add_parser("run")
    p.add_argument("experiment", choices=("E1", "E2", "E3", "E4", "E5", "E6"))
    p.add_argument("--config")
    p.add_argument("-o", "--output")
    p.add_argument("--json", action="store_true")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_exp_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.precision:
            with precision(args.precision):
                return args.func(args)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
