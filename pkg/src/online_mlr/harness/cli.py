"""``online-mlr`` command line.

Every verb reads an optional JSON config, applies the flag overrides and
writes its outputs under ``--out``.  Experiments exit with status 1 when
their summary reports FAIL, and configuration errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from ..datagen import read_stream_csv
from ..exceptions import ConfigError
from . import experiments
from .config import ExperimentConfig


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--replications", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--whiten", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="stream CSV (k,phi_1..phi_d,y[,z]); simulated if omitted")

    p = argparse.ArgumentParser(prog="online-mlr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="write a synthetic stream")
    sim.add_argument("-n", type=int, help="stream length (defaults to the horizon)")
    sub.add_parser("fit-sym", parents=[common, data], help="symmetric online EM")
    sub.add_parser("fit-asym", parents=[common, data], help="two-step online EM")
    sub.add_parser("fit-pop-em", parents=[common, data], help="batch EM baseline")
    sub.add_parser("ode", parents=[common], help="integrate the mean-field ODE")
    exp = sub.add_parser("experiment", parents=[common], help="fig1, fig2 or bounds")
    exp.add_argument("name", choices=["fig1", "fig2", "bounds"])
    return p


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for flag, key in (("seed", "seed"), ("out", "output_dir"), ("replications", "replications"),
                      ("horizon", "horizon"), ("whiten", "whiten")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    return replace(cfg, **overrides) if overrides else cfg


def _status(summary) -> int:
    return 1 if summary.get("status") == "FAIL" else 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        phi = y = None
        if getattr(args, "data", None):
            phi, y, _ = read_stream_csv(args.data)
        if args.verb == "simulate":
            print(experiments.simulate(cfg, args.n))
            return 0
        if args.verb == "fit-sym":
            summary = experiments.fit_sym(cfg, phi, y)
        elif args.verb == "fit-asym":
            summary = experiments.fit_asym(cfg, phi, y)
        elif args.verb == "fit-pop-em":
            summary = experiments.fit_pop_em(cfg, phi, y)
        elif args.verb == "ode":
            summary = experiments.run_ode(cfg)
        else:
            runner = {"fig1": experiments.run_fig1, "fig2": experiments.run_fig2,
                      "bounds": experiments.run_bounds}[args.name]
            summary = runner(cfg)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(summary.get("status", "done"), cfg.out)
    return _status(summary)


if __name__ == "__main__":
    sys.exit(main())
