"""Command line entry point: ``srnav numerical | benchtop | report``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from . import harness

log = logging.getLogger("srnav")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, help="flat key = value file with dotted keys, e.g. sr.max_iterations = 50")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="single override; repeatable")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srnav", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    num = sub.add_parser("numerical", help="center-detection study on base / bicubic / SR images")
    num.add_argument("--trials", type=int, default=100)
    _add_common(num)

    bt = sub.add_parser("benchtop", help="simulated closed-loop targeting trials")
    bt.add_argument("--punctures", type=int, default=14)
    bt.add_argument("--modes", default="base,bi,sr")
    bt.add_argument("--trials", type=int, default=20, help="trials (seeds) per mode")
    bt.add_argument("--allow-nonconverged", action="store_true")
    bt.add_argument("--dump-frames", action="store_true", help="write every acquired frame as PGM")
    _add_common(bt)

    rep = sub.add_parser("report", help="re-summarise an output directory from its CSVs")
    rep.add_argument("directory", type=Path)
    rep.add_argument("--no-figures", action="store_true")
    return parser


def _overrides(args) -> dict[str, str]:
    out = harness.read_config_file(args.config) if args.config else {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


PAIR_ORDER = ("base_vs_sr", "base_vs_bi", "bi_vs_sr")
MODE_ORDER = ("base", "bi", "sr")


def _num(v, spec=".6f") -> str:
    return "nan" if v is None else format(v, spec)


def _print_table(report: dict) -> None:
    if report["experiment"] == "numerical":
        print("mode,n,mean_error_px,std_error_px,mean_normalized_error")
        for mode in (k for k in MODE_ORDER if k in report["modes"]):
            m = report["modes"][mode]
            print(f"{mode},{m['n']},{_num(m['mean_error_px'])},{_num(m['std_error_px'])},"
                  f"{_num(m['mean_normalized_error'], '.6g')}")
    else:
        print("mode,trials,punctures,puncture_std_mm,mean_iterations,frames_per_observation,mean_sim_time_min,nonconverged")
        for mode in (k for k in MODE_ORDER if k in report["modes"]):
            m = report["modes"][mode]
            t = sum(m["sim_time_min"]) / max(len(m["sim_time_min"]), 1)
            print(f"{mode},{m['trials']},{m['punctures']},{m['puncture_std_mm']:.6f},{m['mean_iterations']:.3f},"
                  f"{m['frames_per_observation']},{t:.3f},{m['nonconverged']}")
    print("pair,f_test_p")
    for pair in PAIR_ORDER:
        if pair in report["f_tests"]:
            print(f"{pair},{_num(report['f_tests'][pair], '.6g')}")


def _figures(directory: Path, experiment: str) -> None:
    from . import plotting

    paths = plotting.plot_numerical(directory) if experiment == "numerical" else plotting.plot_benchtop(directory)
    for p in paths:
        log.info("wrote %s", p)


def _same(a, b, tol=1e-12) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k], tol) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_same(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=tol, abs_tol=tol) or (math.isnan(a) and math.isnan(b))
    return a == b


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "report":
        stored = harness.load_report(args.directory)
        fresh = harness.recompute_report(args.directory)
        _print_table(stored)
        if not args.no_figures:
            _figures(args.directory, stored["experiment"])
        consistent = _same(fresh["modes"], stored["modes"]) and _same(fresh["f_tests"], stored["f_tests"])
        if not consistent:
            print("report.json does not match the raw CSVs", file=sys.stderr)
            return 1
        return 0

    if args.command == "numerical":
        cfg = harness.default_config("numerical")
        cfg = dataclasses.replace(cfg, trials=args.trials)
    else:
        cfg = harness.default_config("benchtop-sim")
        cfg = dataclasses.replace(cfg, trials=args.trials, punctures=args.punctures,
                                  modes=tuple(m.strip() for m in args.modes.split(",") if m.strip()),
                                  dump_frames=args.dump_frames)
    cfg = dataclasses.replace(cfg, seed=args.seed, output_dir=str(args.out), workers=args.workers)
    try:
        cfg = harness.apply_overrides(cfg, _overrides(args))
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if cfg.experiment == "numerical":
        report = harness.run_numerical_analysis(cfg)
    else:
        report = harness.run_benchtop_sim(cfg)
    _print_table(report)
    if not args.no_figures:
        _figures(args.out, cfg.experiment)
    log.info("config hash %s", report["config_hash"])

    if cfg.experiment == "benchtop-sim":
        stuck = sum(m["nonconverged"] for m in report["modes"].values())
        if stuck and not args.allow_nonconverged:
            print(f"{stuck} puncture(s) did not converge within the iteration cap", file=sys.stderr)
            return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
