"""Command line entry point: ``ipdg-maxwell <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (COMMANDS, ConfigError, ExperimentConfig, format_complex,
                          parse_complex, parse_list, run, write_csv)


def _lambda(text):
    return None if text.strip().lower() == "k" else float(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--k", type=float, help="single wave number")
    common.add_argument("--m", type=int, help="single mesh size (elements per axis)")
    common.add_argument("--k-list", help="wave numbers, e.g. 1,2,3 or 1:40")
    common.add_argument("--m-list", help="mesh sizes, e.g. 4,8,16")
    common.add_argument("--lambda", dest="lam", type=_lambda, default=None,
                        help='impedance constant or "k" (default)')
    common.add_argument("--preset", choices=("7.4", "7.8"), default="7.4")
    common.add_argument("--gamma0", type=float)
    common.add_argument("--igamma1", type=parse_complex, help='value of i*gamma1, e.g. "0.08+0.01i"')
    common.add_argument("--eps", type=float, default=0.5, help="relative tolerance for critical-h")
    common.add_argument("--h", type=float, help="mesh size for the stability sweep")
    common.add_argument("--m-max", type=int, default=24)
    common.add_argument("--scan", help="penalty grid p_min,p_max,q_min,q_max,step")
    common.add_argument("--samples", type=int, default=100)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="CSV output path")
    common.add_argument("--solver", choices=("direct", "gmres"), default="direct")
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--figures", action="store_true", help="also render a PNG next to the CSV")
    common.add_argument("--export-matrix", help="write the system matrix (MatrixMarket) for solve")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ipdg-maxwell", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


_DEFAULT_K = {"penalty-scan": 20.0, "stability": None}
_DEFAULT_M = {"penalty-scan": 10, "convergence": None, "projection": None}


def config_from_args(args) -> ExperimentConfig:
    ks = parse_list(args.k_list, float) if args.k_list else ([args.k] if args.k is not None else None)
    ms = parse_list(args.m_list, int) if args.m_list else ([args.m] if args.m is not None else None)
    if ks is None:
        ks = [_DEFAULT_K.get(args.command) or 5.0]
        if args.command == "stability":
            ks = list(range(1, 41))
    if ms is None:
        ms = {"penalty-scan": [10], "convergence": [4, 8, 16], "projection": [4, 8, 16]}.get(args.command, [4])
    kw = dict(command=args.command, k_list=ks, m_list=ms, lam=args.lam, preset=args.preset,
              gamma0=args.gamma0, igamma1=args.igamma1, eps=args.eps, h=args.h, m_max=args.m_max,
              samples=args.samples, seed=args.seed, out=args.out, solver=args.solver, tol=args.tol,
              figures=args.figures, export_matrix=args.export_matrix)
    if args.scan:
        vals = parse_list(args.scan, float)
        if len(vals) != 5:
            raise ConfigError("--scan needs p_min,p_max,q_min,q_max,step")
        kw["scan"] = tuple(vals)
    return ExperimentConfig(**kw)


def _print_table(report, stream):
    cols = [c for c in report.fields if c not in ("flags",)] + ["flags"]
    print("\t".join(cols), file=stream)
    for r in report.rows:
        vals = []
        for c in cols:
            v = r.get(c)
            if v is None:
                vals.append("")
            elif isinstance(v, complex):
                vals.append(format_complex(v))
            elif isinstance(v, list):
                vals.append(";".join(v))
            elif isinstance(v, float):
                vals.append(f"{v:.6g}")
            else:
                vals.append(str(v))
        print("\t".join(vals), file=stream)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        report = run(config)
    except ConfigError as exc:
        parser.error(str(exc))
        return 2
    _print_table(report, sys.stdout)
    for key in ("loglog_slope", "argmin_igamma1", "max_stability_ratio"):
        if key in report.metadata:
            print(f"# {key} = {report.metadata[key]}")
    if config.out:
        path = write_csv(report, config.out)
        print(f"# wrote {path}")
        if config.figures:
            from .plotting import plot_report
            fig = plot_report(report, Path(config.out).with_suffix(".png"))
            if fig:
                print(f"# wrote {fig}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
