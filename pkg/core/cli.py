"""
polyland command line: argparse subcommands on top of the command registry.
"""
import argparse
import json
import logging
import os
import sys
import time

from config import APP_NAME, EXIT_USAGE, EXPERIMENT_COMMANDS, VERSION
from core.commands import execute_command, exit_code
from core.logger import RunLogger
from core.settings import dump_document, load_settings


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from e
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return value


def _count(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("--threads", type=_positive_int, default=None, help="cap on worker threads")
    common.add_argument("--out", default=None, help="write JSON output here instead of stdout")
    common.add_argument("--csv", default=None, help="also write the CSV table here")
    common.add_argument("--log-file", default=None, help="save the session log as JSON")
    common.add_argument("--verbose", action="store_true")

    parser = _Parser(prog=APP_NAME, description="Geometry of shallow polynomial networks.")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regime", parents=[common], help="function-space regime of (d, n, r)")
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--r", type=_count, required=True)

    p = sub.add_parser("fiber", parents=[common], help="connected components of a quadratic fiber")
    p.add_argument("--splus", type=_count, required=True)
    p.add_argument("--sminus", type=_count, required=True)
    p.add_argument("--szero", type=_count, required=True)
    p.add_argument("--r", type=_positive_int, required=True)

    for name, text in (("moments", "moment tensor of a distribution"),
                       ("metric", "Gram matrix of the induced inner product")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--n", type=_positive_int, required=True)
        p.add_argument("--d", type=_positive_int, required=True)
        group = p.add_mutually_exclusive_group()
        group.add_argument("--spec", help="moment spec JSON")
        group.add_argument("--law", choices=("gaussian", "uniform"))

    p = sub.add_parser("critpoints", parents=[common], help="critical points of a quadratic loss")
    p.add_argument("--metric", choices=("frobenius", "gaussian", "iid"), required=True)
    p.add_argument("--teacher", required=True, help="teacher matrix JSON")
    p.add_argument("--r", type=_positive_int, required=True)
    p.add_argument("--mu2", type=float, default=1.0)
    p.add_argument("--mu4", type=float, default=3.0)
    p.add_argument("--cover", action="store_true", help="all ranks up to r")

    p = sub.add_parser("iid-count", parents=[common], help="count iid rank-one critical points")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--t", required=True, help="teacher eigenvalues, comma separated")
    p.add_argument("--mu2", type=float, required=True)
    p.add_argument("--mu4", type=float, required=True)

    p = sub.add_parser("train", parents=[common], help="teacher-student experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")

    p = sub.add_parser("flow", parents=[common], help="gradient flow from a seeded initialization")
    p.add_argument("--teacher", required=True, help="teacher tensor JSON")
    p.add_argument("--spec", default=None, help="moment spec JSON (Frobenius when absent)")
    p.add_argument("--r", type=_positive_int, required=True)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--steps", type=_count, default=10_000)
    p.add_argument("--integrator", choices=("euler", "rk4"), default="rk4")

    p = sub.add_parser("demo-trapped", parents=[common], help="positive-output trap")
    p.add_argument("--n", type=_positive_int, default=2)
    p.add_argument("--r", type=_positive_int, default=8)
    p.add_argument("--d", type=_positive_int, default=4)
    p.add_argument("--steps", type=_count, default=100_000)
    p.add_argument("--step", type=float, default=1e-2)

    p = sub.add_parser("demo-diverge", parents=[common], help="minimizing sequence with diverging parameters")
    p.add_argument("--d", type=_positive_int, default=3)
    p.add_argument("--n", type=_positive_int, default=2)
    p.add_argument("--taus", default="1,10,100,1000")

    p = sub.add_parser("discriminant", parents=[common], help="2x2 discriminant polynomials")
    p.add_argument("--case", choices=("frobenius2x2", "iid2x2"), required=True)
    p.add_argument("--teacher", required=True, help="2x2 teacher matrix JSON")
    p.add_argument("--mu2", type=float, default=1.0)
    p.add_argument("--mu4", type=float, default=3.0)

    for name, text in (("focal", "critical points and focal crossings"),
                       ("stability", "stability of the critical-point configuration")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--variety", choices=("ellipse", "stratum"), required=True)
        p.add_argument("--teacher", required=True, help="x,y for ellipses; matrix JSON for strata")
        p.add_argument("--a", type=float, default=2.0)
        p.add_argument("--b", type=float, default=1.0)
        p.add_argument("--sigma", default=None, help="2x2 metric matrix JSON (ellipse)")
        p.add_argument("--r", type=_positive_int, default=1)
        p.add_argument("--metric", choices=("frobenius", "gaussian"), default="frobenius")
        if name == "stability":
            p.add_argument("--radius", type=float, default=1e-3)
            p.add_argument("--samples", type=_positive_int, default=100)
            p.add_argument("--strict", action="store_true")
    return parser


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def dispatch(argv) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(list(argv))
    except SystemExit as e:
        return int(e.code or 0)
    if ns.command in EXPERIMENT_COMMANDS and ns.seed is None:
        try:
            parser.error(f"{ns.command} needs an explicit --seed")
        except SystemExit as e:
            return int(e.code)

    if ns.verbose:
        logging.basicConfig(level=logging.DEBUG, stream=sys.stderr,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        RunLogger.set_sink(lambda entry: print(RunLogger.format_entry(entry), file=sys.stderr))

    args = {k: v for k, v in vars(ns).items() if k not in ("out", "csv", "log_file", "verbose")}
    started = time.time()
    result = execute_command(ns.command, args)

    outputs = []
    if result.get("success"):
        payload = result["result"]
        if isinstance(payload, dict):
            payload = dump_document(payload, ns.command)
        text = json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n"
        if ns.out:
            _write(ns.out, text)
            outputs.append(ns.out)
        else:
            sys.stdout.write(text)
        if ns.csv and result.get("csv") is not None:
            _write(ns.csv, result["csv"])
            outputs.append(ns.csv)
        for note in result.get("warnings", []):
            print(f"warning: {note}", file=sys.stderr)
    else:
        print(f"{APP_NAME} {ns.command}: {result['error']}", file=sys.stderr)

    if ns.log_file:
        RunLogger.save_to_file(ns.log_file)
    elif load_settings().get("auto_save_logs"):
        RunLogger.save_to_file()
    RunLogger.emit_manifest(RunLogger.manifest(ns.command, args, ns.seed, outputs, time.time() - started))
    return exit_code(result)
