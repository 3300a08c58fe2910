"""Command line interface: ``trimext <study> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .study import (StudyConfig, StudyError, run_condition, run_convergence, run_diagnostics,
                    run_surface)

RUNNERS = {
    "convergence": run_convergence,
    "condition": run_condition,
    "surface": run_surface,
    "diagnostics": run_diagnostics,
}


def _study_args(sp):
    sp.add_argument("--config", type=Path, help="JSON file with any of the options below")
    sp.add_argument("--p", type=int, action="append", help="spline order (repeatable)")
    sp.add_argument("--gamma", type=float, action="append", help="large-element threshold (repeatable)")
    sp.add_argument("--h", type=float, action="append", help="mesh size (repeatable, decreasing)")
    sp.add_argument("--shifts", type=int)
    sp.add_argument("--beta", type=float, help="Nitsche penalty (default 25 p^2)")
    sp.add_argument("--weights", choices=["cut-area", "uniform", "single"])
    sp.add_argument("--quad-order", type=int, help="cut quadrature degree (default 2p+2)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--domain", help="bean, circle, cone-circle or a JSON curve file")
    sp.add_argument("--segments", type=int, dest="n_segments", help="boundary polyline segments")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--no-timing", action="store_true", help="write walltime_s = 0 for reproducible CSVs")


def build_parser():
    ap = argparse.ArgumentParser(prog="trimext", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("convergence", "condition", "diagnostics"):
        _study_args(sub.add_parser(name, help=f"run the {name} study"))
    sp = sub.add_parser("surface", help="mapped Dirichlet problem on a cone")
    _study_args(sp)
    sp.add_argument("--map", dest="surface_map", choices=["cone", "identity"])
    sp.add_argument("--solution", choices=["ansatz", "constant"])
    pp = sub.add_parser("plot", help="render SVG figures from a study CSV")
    pp.add_argument("csv", type=Path)
    pp.add_argument("--out", type=Path)
    return ap


STUDY_DEFAULTS = {"surface": {"domain": "cone-circle", "gamma": [0.5]}}


def config_from_args(args):
    overrides = {}
    for key in ("p", "gamma", "h", "shifts", "beta", "weights", "quad_order", "seed", "domain",
                "n_segments", "out", "workers", "surface_map", "solution"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.no_timing:
        overrides["timing"] = False
    base = dict(STUDY_DEFAULTS.get(args.command, {}))
    if args.config is not None:
        base.update(json.loads(args.config.read_text()))
    base = {k.replace("-", "_"): v for k, v in base.items()}
    base.update(overrides)
    base["study"] = args.command
    if "weights" in base and base["weights"] == "single":
        base["weights"] = "single-element"
    try:
        return StudyConfig(**base).validate()
    except TypeError as exc:
        raise StudyError(str(exc)) from None


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            from .plots import emit_plots

            for path in emit_plots(args.csv, args.out):
                print(path)
            return 0
        cfg = config_from_args(args)
        result = RUNNERS[args.command](cfg)
    except StudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "diagnostics":
        _, _, drifts = result
        for d in drifts:
            worst = max(v for k, v in d.items() if k not in ("p", "gamma", "h_coarse", "h_fine"))
            print(f"p={d['p']} gamma={d['gamma']:g} h={d['h_coarse']:g}->{d['h_fine']:g} max drift {worst:.3f}")
    else:
        sl = result[2]
        for row in sl:
            vals = " ".join(f"{m}={row[m]:.3f}" for m in ("errL2", "errH1", "cond_raw", "cond_diag")
                            if row[m] == row[m])
            print(f"p={row['p']} gamma={row['gamma']:g} slopes: {vals}")
    print(f"results in {cfg.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
