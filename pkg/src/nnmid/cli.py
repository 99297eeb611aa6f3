"""Command-line entry point ``nnmid``.

Subcommands: simulate, identify, continue, phase-resonance, compare.
Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

from .config import load_config, provenance
from .errors import (ComparisonError, ConfigurationError, ConvergenceError, DataError,
                     IntegrationError, NNMError, NodeOfModeError, OrderTooHighError,
                     ParameterError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("nnmid")


def _parser():
    p = argparse.ArgumentParser(prog="nnmid", description=(
        "Identify nonlinear normal modes from broadband data and check them "
        "against virtual phase-resonance tests."))
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="YAML configuration file")
        sp.add_argument("--out", metavar="DIR", default="out", help="output directory")
        sp.add_argument("--seed", metavar="N", type=int,
                        help="override the excitation and noise seeds")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simulate", help="simulate the benchmark experiment")
    common(sp)
    sp = sub.add_parser("identify", help="identify a nonlinear state-space model")
    common(sp)
    sp.add_argument("dataset", help="dataset directory written by 'simulate'")
    sp.add_argument("--truth", metavar="PATH", help="reference modal model JSON")
    sp = sub.add_parser("continue", help="compute NNM branches of a modal model")
    common(sp)
    sp.add_argument("model", help="modal model JSON written by 'identify'")
    sp.add_argument("--truth", metavar="PATH", help="reference modal model JSON")
    sp = sub.add_parser("phase-resonance", help="virtual stepped-sine test and free decay")
    common(sp)
    sp = sub.add_parser("compare", help="compare backbones with decay ridges")
    common(sp)
    sp.add_argument("--branch", nargs="+", required=True, metavar="CSV")
    sp.add_argument("--ridge", nargs="+", required=True, metavar="CSV")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    from . import pipeline

    try:
        cfg = load_config(args.config, seed=args.seed)
        if args.command == "simulate":
            out = pipeline.run_simulate(cfg, args.out)
        elif args.command == "identify":
            out = pipeline.run_identify(cfg, args.dataset, args.out, truth=args.truth)
        elif args.command == "continue":
            out = pipeline.run_continue(cfg, args.model, args.out, truth=args.truth)
        elif args.command == "phase-resonance":
            out = pipeline.run_phase_resonance(cfg, args.out)
        else:
            out = pipeline.run_compare(args.branch, args.ridge, args.out,
                                       meta=provenance(cfg))
    except (ConfigurationError, ParameterError, DataError, FileNotFoundError) as exc:
        print(f"nnmid {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, IntegrationError, OrderTooHighError, NodeOfModeError,
            ComparisonError, NNMError, FloatingPointError, ArithmeticError) as exc:
        print(f"nnmid {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(out)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
