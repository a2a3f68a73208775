"""Command-line interface.

Exit statuses: 0 success, 1 usage or parse error, 2 non-convergence,
3 certification failure.
"""

from __future__ import annotations

import argparse
import sys

from ..functionals import ConvergenceError
from .commands import (
    COMMANDS, EXIT_CERTIFICATION, EXIT_NONCONVERGENCE, EXIT_OK, EXIT_USAGE, RunConfig,
    cmd_flow, cmd_mean, cmd_median, cmd_verify,
)
from .parsing import ParseError

__all__ = ["main", "build_parser", "config_from_args", "RunConfig",
           "cmd_mean", "cmd_median", "cmd_flow", "cmd_verify"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _seed(s):
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--space", choices=["euclidean", "spider", "spd", "hyperbolic"], default="euclidean")
    common.add_argument("--dim", type=_positive_int, help="dimension for euclidean/spd spaces")
    common.add_argument("--rays", type=_positive_int, help="number of spider rays")
    common.add_argument("--input", help="point cloud or objective file")
    common.add_argument("--output", help="write the report here instead of stdout")
    common.add_argument("--seed", type=_seed, default=42)
    common.add_argument("--tol", type=_positive_float, default=1e-6)
    common.add_argument("--samples", type=_positive_int, default=200,
                        help="random samples per certification check")

    parser = _Parser(prog="hadamard-flows", description="Gradient flows and proximal splitting on Hadamard spaces.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (("mean", "weighted Frechet mean of a point cloud"),
                           ("median", "weighted geometric median of a point cloud")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--max-sweeps", type=_positive_int, default=20_000_000)
    p = sub.add_parser("flow", parents=[common], help="run a flow scheme on an objective file")
    p.add_argument("--t", type=_nonneg_float, default=1.0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--n", type=_positive_int)
    g.add_argument("--adaptive", action="store_true")
    p.add_argument("--mode", choices=["resolvents", "semigroups", "proximal-point"], default="resolvents")
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=1.0)
    p.add_argument("--rho-steps", type=int, default=0,
                   help="also run the resolvent convergence study with rho = lambda 2^-m, m = 1..M")
    p.add_argument("--max-exponent", type=_positive_int, default=16)
    sub.add_parser("verify", parents=[common], help="run the certification suites")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if v is not None}
    cfg = RunConfig(**fields)
    if cfg.command in ("mean", "median", "flow") and not cfg.input:
        raise UsageError(f"{cfg.command} needs --input")
    if cfg.command == "flow" and cfg.n is None and not cfg.adaptive and cfg.t > 0:
        cfg = RunConfig(**dict(fields, adaptive=True))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = config_from_args(args)
        report, status = COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = report.render()
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status
